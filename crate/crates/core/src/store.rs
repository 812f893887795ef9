//! Host-memory state vector held as independently compressed chunks.
//!
//! Global amplitude index `g` lives in chunk `g >> c` at offset `g mod 2^c`.

use std::hash::Hasher;
use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, CompressedChunk};
use crate::{Amplitude, AMPLITUDE_BYTES};

/// Largest supported register.
pub const MAX_QUBITS: u32 = 40;

/// Bytes charged per chunk on top of its payload: index, checksum and length.
pub const CHUNK_OVERHEAD_BYTES: u64 = 8 + 4 + 4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("chunk qubits must satisfy 1 <= c <= n (c = {chunk_qubits}, n = {num_qubits})")]
    ChunkQubits { num_qubits: u32, chunk_qubits: u32 },
    #[error("{0} qubits exceeds the supported address width of {MAX_QUBITS}")]
    TooManyQubits(u32),
    #[error("chunk index {index} out of range ({count} chunks)")]
    ChunkOutOfRange { index: usize, count: usize },
    #[error("amplitude index {index} out of range (state has {len} amplitudes)")]
    AmplitudeOutOfRange { index: u64, len: u64 },
    #[error("expected {expected} amplitudes, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("chunk {index}: {source}")]
    Codec {
        index: usize,
        #[source]
        source: CodecError,
    },
    #[error("invalid store dump: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Memory accounting for a store.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub current_bytes: u64,
    pub peak_bytes: u64,
    pub dense_bytes: u64,
    pub ratio: f64,
}

/// Chunked compressed state vector. Operations on distinct chunks may run
/// concurrently; operations on one chunk are serialized by its lock.
#[derive(Debug)]
pub struct ChunkStore {
    num_qubits: u32,
    chunk_qubits: u32,
    error_bound: f64,
    chunks: Vec<Mutex<CompressedChunk>>,
    current_bytes: AtomicU64,
    peak_bytes: AtomicU64,
}

fn charged(cc: &CompressedChunk) -> u64 {
    cc.payload.len() as u64 + CHUNK_OVERHEAD_BYTES
}

impl ChunkStore {
    fn check_shape(num_qubits: u32, chunk_qubits: u32) -> Result<(), StoreError> {
        if num_qubits > MAX_QUBITS {
            return Err(StoreError::TooManyQubits(num_qubits));
        }
        if chunk_qubits == 0 || chunk_qubits > num_qubits {
            return Err(StoreError::ChunkQubits {
                num_qubits,
                chunk_qubits,
            });
        }
        Ok(())
    }

    fn from_chunks(
        num_qubits: u32,
        chunk_qubits: u32,
        error_bound: f64,
        chunks: Vec<CompressedChunk>,
    ) -> Self {
        let total: u64 = chunks.iter().map(charged).sum();
        ChunkStore {
            num_qubits,
            chunk_qubits,
            error_bound,
            chunks: chunks.into_iter().map(Mutex::new).collect(),
            current_bytes: AtomicU64::new(total),
            peak_bytes: AtomicU64::new(total),
        }
    }

    /// `|0...0>`. The leading 1.0 is stored exactly even in lossy mode.
    pub fn init_basis_state(
        num_qubits: u32,
        chunk_qubits: u32,
        error_bound: f64,
    ) -> Result<Self, StoreError> {
        Self::check_shape(num_qubits, chunk_qubits)?;
        let len = 1usize << chunk_qubits;
        let count = 1usize << (num_qubits - chunk_qubits);
        let codec_err = |index| move |source| StoreError::Codec { index, source };

        let mut first = vec![Amplitude::new(0.0, 0.0); len];
        first[0] = Amplitude::new(1.0, 0.0);
        let mut chunks = Vec::with_capacity(count);
        chunks.push(codec::compress_pinned(&first, error_bound, &[0]).map_err(codec_err(0))?);
        if count > 1 {
            let zero = codec::compress(&vec![Amplitude::new(0.0, 0.0); len], error_bound)
                .map_err(codec_err(1))?;
            for index in 1..count {
                let mut cc = zero.clone();
                cc.chunk_index = index as u64;
                chunks.push(cc);
            }
        }
        Ok(Self::from_chunks(num_qubits, chunk_qubits, error_bound, chunks))
    }

    /// Compresses a dense state vector of length `2^n`.
    pub fn from_dense(
        num_qubits: u32,
        chunk_qubits: u32,
        error_bound: f64,
        amplitudes: &[Amplitude],
    ) -> Result<Self, StoreError> {
        Self::check_shape(num_qubits, chunk_qubits)?;
        let expected = 1usize << num_qubits;
        if amplitudes.len() != expected {
            return Err(StoreError::LengthMismatch {
                expected,
                found: amplitudes.len(),
            });
        }
        let chunks = amplitudes
            .chunks(1 << chunk_qubits)
            .enumerate()
            .map(|(index, part)| {
                let mut cc = codec::compress(part, error_bound)
                    .map_err(|source| StoreError::Codec { index, source })?;
                cc.chunk_index = index as u64;
                Ok(cc)
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(Self::from_chunks(num_qubits, chunk_qubits, error_bound, chunks))
    }

    pub fn num_qubits(&self) -> u32 {
        self.num_qubits
    }

    pub fn chunk_qubits(&self) -> u32 {
        self.chunk_qubits
    }

    pub fn error_bound(&self) -> f64 {
        self.error_bound
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks.len()
    }

    /// Amplitudes per chunk.
    pub fn chunk_len(&self) -> usize {
        1 << self.chunk_qubits
    }

    /// `(chunk, offset)` of a global amplitude index.
    pub fn locate(&self, global: u64) -> (usize, usize) {
        (
            (global >> self.chunk_qubits) as usize,
            (global & ((1u64 << self.chunk_qubits) - 1)) as usize,
        )
    }

    /// Inverse of [`ChunkStore::locate`].
    pub fn global_index(&self, chunk: usize, offset: usize) -> u64 {
        ((chunk as u64) << self.chunk_qubits) | offset as u64
    }

    fn slot(&self, index: usize) -> Result<&Mutex<CompressedChunk>, StoreError> {
        self.chunks.get(index).ok_or(StoreError::ChunkOutOfRange {
            index,
            count: self.chunks.len(),
        })
    }

    pub fn load_chunk(&self, index: usize) -> Result<Vec<Amplitude>, StoreError> {
        let mut out = vec![Amplitude::new(0.0, 0.0); self.chunk_len()];
        self.load_chunk_into(index, &mut out)?;
        Ok(out)
    }

    /// Decompresses chunk `index` into `out` (length `2^c`).
    pub fn load_chunk_into(&self, index: usize, out: &mut [Amplitude]) -> Result<(), StoreError> {
        let guard = self.slot(index)?.lock().unwrap();
        codec::decompress_into(&guard, out).map_err(|source| StoreError::Codec { index, source })
    }

    /// Recompresses `amplitudes` with the store's error bound and replaces
    /// chunk `index`.
    pub fn store_chunk(&self, index: usize, amplitudes: &[Amplitude]) -> Result<(), StoreError> {
        let slot = self.slot(index)?;
        if amplitudes.len() != self.chunk_len() {
            return Err(StoreError::LengthMismatch {
                expected: self.chunk_len(),
                found: amplitudes.len(),
            });
        }
        let mut cc = codec::compress(amplitudes, self.error_bound)
            .map_err(|source| StoreError::Codec { index, source })?;
        cc.chunk_index = index as u64;
        let new_bytes = charged(&cc);
        let mut guard = slot.lock().unwrap();
        let old_bytes = charged(&guard);
        *guard = cc;
        if new_bytes >= old_bytes {
            let now = self
                .current_bytes
                .fetch_add(new_bytes - old_bytes, Ordering::AcqRel)
                + (new_bytes - old_bytes);
            self.peak_bytes.fetch_max(now, Ordering::AcqRel);
        } else {
            self.current_bytes
                .fetch_sub(old_bytes - new_bytes, Ordering::AcqRel);
        }
        Ok(())
    }

    /// Reads one amplitude, decompressing only its chunk.
    pub fn amplitude(&self, global: u64) -> Result<Amplitude, StoreError> {
        let len = 1u64 << self.num_qubits;
        if global >= len {
            return Err(StoreError::AmplitudeOutOfRange { index: global, len });
        }
        let (chunk, offset) = self.locate(global);
        Ok(self.load_chunk(chunk)?[offset])
    }

    /// A copy of the compressed record of one chunk.
    pub fn compressed(&self, index: usize) -> Result<CompressedChunk, StoreError> {
        Ok(self.slot(index)?.lock().unwrap().clone())
    }

    pub fn footprint(&self) -> Footprint {
        let current_bytes = self.current_bytes.load(Ordering::Acquire);
        let dense_bytes = (1u64 << self.num_qubits) * AMPLITUDE_BYTES;
        Footprint {
            current_bytes,
            peak_bytes: self.peak_bytes.load(Ordering::Acquire),
            dense_bytes,
            ratio: dense_bytes as f64 / current_bytes as f64,
        }
    }

    /// 64-bit FNV-1a over every payload in chunk order.
    pub fn digest(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        for slot in &self.chunks {
            h.write(&slot.lock().unwrap().payload);
        }
        h.finish()
    }

    /// Decompresses the whole state. Intended for small registers.
    pub fn to_dense(&self) -> Result<Vec<Amplitude>, StoreError> {
        let mut out = vec![Amplitude::new(0.0, 0.0); 1usize << self.num_qubits];
        for (index, part) in out.chunks_mut(self.chunk_len()).enumerate() {
            self.load_chunk_into(index, part)?;
        }
        Ok(out)
    }

    /// Writes `{n: u32, c: u32, error_bound: f64}` followed by one record per
    /// chunk in index order: `{index: u64, checksum: u32, len: u32, payload}`.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), StoreError> {
        w.write_all(&self.num_qubits.to_le_bytes())?;
        w.write_all(&self.chunk_qubits.to_le_bytes())?;
        w.write_all(&self.error_bound.to_le_bytes())?;
        for slot in &self.chunks {
            let cc = slot.lock().unwrap();
            w.write_all(&cc.chunk_index.to_le_bytes())?;
            w.write_all(&cc.checksum.to_le_bytes())?;
            w.write_all(&(cc.payload.len() as u32).to_le_bytes())?;
            w.write_all(&cc.payload)?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`ChunkStore::write_to`], verifying every checksum.
    pub fn read_from(mut r: impl Read) -> Result<Self, StoreError> {
        fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], StoreError> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)?;
            Ok(buf)
        }
        let num_qubits = u32::from_le_bytes(read_array(&mut r)?);
        let chunk_qubits = u32::from_le_bytes(read_array(&mut r)?);
        let error_bound = f64::from_le_bytes(read_array(&mut r)?);
        Self::check_shape(num_qubits, chunk_qubits)?;
        let count = 1usize << (num_qubits - chunk_qubits);
        let mut chunks = Vec::with_capacity(count);
        for index in 0..count {
            let chunk_index = u64::from_le_bytes(read_array(&mut r)?);
            if chunk_index != index as u64 {
                return Err(StoreError::Format(format!(
                    "record {index} carries chunk index {chunk_index}"
                )));
            }
            let checksum = u32::from_le_bytes(read_array(&mut r)?);
            let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            if len < codec::HEADER_LEN {
                return Err(StoreError::Format(format!("record {index} is truncated")));
            }
            let mut payload = vec![0u8; len];
            r.read_exact(&mut payload)?;
            let codec_id = match payload[0] {
                1 => codec::CodecId::LossyPq,
                2 => codec::CodecId::LosslessRle,
                other => {
                    return Err(StoreError::Format(format!("record {index}: codec id {other}")))
                }
            };
            let eb = f64::from_le_bytes(payload[1..9].try_into().unwrap());
            let element_count = u32::from_le_bytes(payload[9..13].try_into().unwrap());
            if element_count as usize != 1usize << chunk_qubits || eb.to_bits() != error_bound.to_bits() {
                return Err(StoreError::Format(format!(
                    "record {index} does not match the store header"
                )));
            }
            let cc = CompressedChunk {
                chunk_index,
                codec_id,
                error_bound: eb,
                element_count,
                payload,
                checksum,
            };
            cc.verify_checksum()
                .map_err(|source| StoreError::Codec { index, source })?;
            chunks.push(cc);
        }
        Ok(Self::from_chunks(num_qubits, chunk_qubits, error_bound, chunks))
    }
}

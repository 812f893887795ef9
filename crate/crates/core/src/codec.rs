//! Per-chunk compression of amplitude arrays.
//!
//! Two codecs share one self-describing payload layout (all little-endian):
//!
//! ```text
//! codec_id: u8 | error_bound: f64 | element_count: u32 | unpredictable_count: u32
//! RLE planes ...
//! unpredictable raw values: f64 * unpredictable_count
//! ```
//!
//! `LossyPq` runs a previous-value predictor with uniform quantization over
//! the real plane and then the imaginary plane. Residual codes are 16-bit,
//! zigzag-mapped, and stored as a low-byte plane followed by a high-byte
//! plane; code `-2^15` marks a value stored raw at the end of the payload.
//! `LosslessRle` byte-shuffles the raw `f64` bit patterns into eight planes.
//! Every plane is run-length encoded as `(byte, count)` pairs, `1 <= count <= 255`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Amplitude, AMPLITUDE_BYTES};

/// Length of the fixed payload header.
pub const HEADER_LEN: usize = 1 + 8 + 4 + 4;

const SENTINEL: i16 = i16::MIN;
/// Pinned values must reconstruct within this tolerance or they are stored raw.
const PINNED_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum CodecId {
    LossyPq = 1,
    LosslessRle = 2,
}

impl CodecId {
    fn from_byte(b: u8) -> Option<CodecId> {
        match b {
            1 => Some(CodecId::LossyPq),
            2 => Some(CodecId::LosslessRle),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("chunk length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("chunk length {0} exceeds the u32 element count field")]
    TooLarge(usize),
    #[error("error bound must be finite and non-negative, got {0}")]
    InvalidErrorBound(f64),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("output buffer holds {found} amplitudes, chunk has {expected}")]
    OutputLength { expected: usize, found: usize },
}

fn malformed(msg: impl Into<String>) -> CodecError {
    CodecError::Malformed(msg.into())
}

/// One independently compressed chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedChunk {
    pub chunk_index: u64,
    pub codec_id: CodecId,
    /// Absolute bound per real/imaginary component; 0 for lossless.
    pub error_bound: f64,
    pub element_count: u32,
    pub payload: Vec<u8>,
    /// CRC-32 of `payload`.
    pub checksum: u32,
}

impl CompressedChunk {
    /// Dense bytes over payload bytes.
    pub fn ratio(&self) -> f64 {
        (self.element_count as u64 * AMPLITUDE_BYTES) as f64 / self.payload.len() as f64
    }

    pub fn verify_checksum(&self) -> Result<(), CodecError> {
        let computed = crc32fast::hash(&self.payload);
        if computed == self.checksum {
            Ok(())
        } else {
            Err(CodecError::ChecksumMismatch {
                stored: self.checksum,
                computed,
            })
        }
    }
}

/// Compresses with `LossyPq` when `error_bound > 0`, else `LosslessRle`.
pub fn compress(amplitudes: &[Amplitude], error_bound: f64) -> Result<CompressedChunk, CodecError> {
    compress_pinned(amplitudes, error_bound, &[])
}

/// Like [`compress`], but amplitudes at the `pinned` positions are kept within
/// `1e-12` of their input even in lossy mode, falling back to raw storage.
pub fn compress_pinned(
    amplitudes: &[Amplitude],
    error_bound: f64,
    pinned: &[usize],
) -> Result<CompressedChunk, CodecError> {
    let n = amplitudes.len();
    if !n.is_power_of_two() {
        return Err(CodecError::NotPowerOfTwo(n));
    }
    let element_count = u32::try_from(n).map_err(|_| CodecError::TooLarge(n))?;
    if !error_bound.is_finite() || error_bound < 0.0 {
        return Err(CodecError::InvalidErrorBound(error_bound));
    }
    let codec_id = if error_bound > 0.0 {
        CodecId::LossyPq
    } else {
        CodecId::LosslessRle
    };

    let mut payload = Vec::with_capacity(HEADER_LEN + 64);
    payload.push(codec_id as u8);
    payload.extend_from_slice(&error_bound.to_le_bytes());
    payload.extend_from_slice(&element_count.to_le_bytes());
    let unpred_at = payload.len();
    payload.extend_from_slice(&0u32.to_le_bytes());

    match codec_id {
        CodecId::LossyPq => {
            let mut is_pinned = vec![false; n];
            for &p in pinned.iter().filter(|&&p| p < n) {
                is_pinned[p] = true;
            }
            let mut codes = Vec::with_capacity(2 * n);
            let mut raws = Vec::new();
            let reals = amplitudes.iter().map(|a| a.re);
            quantize_plane(reals, error_bound, &is_pinned, &mut codes, &mut raws);
            let imags = amplitudes.iter().map(|a| a.im);
            quantize_plane(imags, error_bound, &is_pinned, &mut codes, &mut raws);

            let zz: Vec<u16> = codes.iter().map(|&c| zigzag(c)).collect();
            let low: Vec<u8> = zz.iter().map(|z| *z as u8).collect();
            rle_encode(&low, &mut payload);
            let high: Vec<u8> = zz.iter().map(|z| (*z >> 8) as u8).collect();
            rle_encode(&high, &mut payload);
            for v in &raws {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            let count = raws.len() as u32;
            payload[unpred_at..unpred_at + 4].copy_from_slice(&count.to_le_bytes());
        }
        CodecId::LosslessRle => {
            let values: Vec<[u8; 8]> = amplitudes
                .iter()
                .map(|a| a.re.to_le_bytes())
                .chain(amplitudes.iter().map(|a| a.im.to_le_bytes()))
                .collect();
            let mut plane = vec![0u8; values.len()];
            for k in 0..8 {
                for (dst, v) in plane.iter_mut().zip(&values) {
                    *dst = v[k];
                }
                rle_encode(&plane, &mut payload);
            }
        }
    }

    let checksum = crc32fast::hash(&payload);
    Ok(CompressedChunk {
        chunk_index: 0,
        codec_id,
        error_bound,
        element_count,
        payload,
        checksum,
    })
}

fn quantize_plane(
    values: impl Iterator<Item = f64>,
    error_bound: f64,
    pinned: &[bool],
    codes: &mut Vec<i16>,
    raws: &mut Vec<f64>,
) {
    let step = 2.0 * error_bound;
    let mut pred = 0.0f64;
    for (i, v) in values.enumerate() {
        let q = ((v - pred) / step).round();
        // NaN fails this comparison and takes the raw path.
        let code = if q.abs() < 32768.0 {
            let code = q as i16;
            let r = pred + code as f64 * step;
            let dev = (v - r).abs();
            if dev <= error_bound && (!pinned[i] || dev <= PINNED_TOLERANCE) {
                pred = r;
                Some(code)
            } else {
                None
            }
        } else {
            None
        };
        match code {
            Some(c) => codes.push(c),
            None => {
                codes.push(SENTINEL);
                raws.push(v);
                pred = v;
            }
        }
    }
}

fn zigzag(c: i16) -> u16 {
    ((c << 1) ^ (c >> 15)) as u16
}

fn unzigzag(z: u16) -> i16 {
    ((z >> 1) as i16) ^ -((z & 1) as i16)
}

fn rle_encode(plane: &[u8], out: &mut Vec<u8>) {
    let mut i = 0;
    while i < plane.len() {
        let b = plane[i];
        let mut run = 1;
        while run < 255 && i + run < plane.len() && plane[i + run] == b {
            run += 1;
        }
        out.push(b);
        out.push(run as u8);
        i += run;
    }
}

/// Decodes exactly `expected` bytes starting at `*pos`.
fn rle_decode(payload: &[u8], pos: &mut usize, expected: usize) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(expected);
    while out.len() < expected {
        let pair = payload
            .get(*pos..*pos + 2)
            .ok_or_else(|| malformed("truncated run-length plane"))?;
        let (b, count) = (pair[0], pair[1] as usize);
        if count == 0 {
            return Err(malformed("zero-length run"));
        }
        if out.len() + count > expected {
            return Err(malformed("run overflows plane"));
        }
        out.resize(out.len() + count, b);
        *pos += 2;
    }
    Ok(out)
}

struct Header {
    codec_id: CodecId,
    error_bound: f64,
    element_count: usize,
    unpredictable: usize,
}

fn read_header(payload: &[u8]) -> Result<Header, CodecError> {
    if payload.len() < HEADER_LEN {
        return Err(malformed("payload shorter than header"));
    }
    let codec_id = CodecId::from_byte(payload[0])
        .ok_or_else(|| malformed(format!("unknown codec id {}", payload[0])))?;
    let error_bound = f64::from_le_bytes(payload[1..9].try_into().unwrap());
    let element_count = u32::from_le_bytes(payload[9..13].try_into().unwrap()) as usize;
    let unpredictable = u32::from_le_bytes(payload[13..17].try_into().unwrap()) as usize;
    if !element_count.is_power_of_two() {
        return Err(malformed(format!("element count {element_count} is not a power of two")));
    }
    Ok(Header {
        codec_id,
        error_bound,
        element_count,
        unpredictable,
    })
}

/// Decompresses into a fresh vector.
pub fn decompress(cc: &CompressedChunk) -> Result<Vec<Amplitude>, CodecError> {
    let mut out = vec![Amplitude::new(0.0, 0.0); cc.element_count as usize];
    decompress_into(cc, &mut out)?;
    Ok(out)
}

/// Decompresses into `out`, which must hold exactly `element_count` amplitudes.
pub fn decompress_into(cc: &CompressedChunk, out: &mut [Amplitude]) -> Result<(), CodecError> {
    cc.verify_checksum()?;
    let payload = &cc.payload;
    let h = read_header(payload)?;
    if h.codec_id != cc.codec_id
        || h.element_count != cc.element_count as usize
        || h.error_bound.to_bits() != cc.error_bound.to_bits()
    {
        return Err(malformed("header disagrees with chunk metadata"));
    }
    if out.len() != h.element_count {
        return Err(CodecError::OutputLength {
            expected: h.element_count,
            found: out.len(),
        });
    }
    let n = h.element_count;
    let mut pos = HEADER_LEN;
    match h.codec_id {
        CodecId::LossyPq => {
            if !(h.error_bound.is_finite() && h.error_bound > 0.0) {
                return Err(malformed("lossy chunk without a positive error bound"));
            }
            let low = rle_decode(payload, &mut pos, 2 * n)?;
            let high = rle_decode(payload, &mut pos, 2 * n)?;
            let raw_bytes = &payload[pos..];
            if raw_bytes.len() != 8 * h.unpredictable {
                return Err(malformed(format!(
                    "expected {} raw bytes, found {}",
                    8 * h.unpredictable,
                    raw_bytes.len()
                )));
            }
            let mut raws = raw_bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
            let step = 2.0 * h.error_bound;
            let mut codes = low
                .iter()
                .zip(&high)
                .map(|(&lo, &hi)| unzigzag(lo as u16 | (hi as u16) << 8));
            for plane in 0..2 {
                let mut pred = 0.0f64;
                for a in out.iter_mut() {
                    let code = codes.next().expect("plane length checked");
                    let r = if code == SENTINEL {
                        raws.next()
                            .ok_or_else(|| malformed("more sentinels than raw values"))?
                    } else {
                        pred + code as f64 * step
                    };
                    pred = r;
                    if plane == 0 {
                        a.re = r;
                    } else {
                        a.im = r;
                    }
                }
            }
            if raws.next().is_some() {
                return Err(malformed("unused raw values"));
            }
        }
        CodecId::LosslessRle => {
            let mut values = vec![[0u8; 8]; 2 * n];
            for k in 0..8 {
                let plane = rle_decode(payload, &mut pos, 2 * n)?;
                for (v, b) in values.iter_mut().zip(plane) {
                    v[k] = b;
                }
            }
            if pos != payload.len() {
                return Err(malformed("trailing bytes after lossless planes"));
            }
            for (i, a) in out.iter_mut().enumerate() {
                a.re = f64::from_le_bytes(values[i]);
                a.im = f64::from_le_bytes(values[n + i]);
            }
        }
    }
    Ok(())
}

/// Dense bytes over payload bytes of a chunk.
pub fn ratio(cc: &CompressedChunk) -> f64 {
    cc.ratio()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Amplitude {
        Amplitude::new(re, im)
    }

    fn random_chunk(rng: &mut impl Rng, len: usize) -> Vec<Amplitude> {
        (0..len)
            .map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn max_dev(a: &[Amplitude], b: &[Amplitude]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x.re - y.re).abs().max((x.im - y.im).abs()))
            .fold(0.0, f64::max)
    }

    /// Scalar quantizer written straight from the format description,
    /// used as the reference for codes.
    fn brute_force_codes(plane: &[f64], eb: f64) -> Vec<i32> {
        let mut out = Vec::new();
        let mut prev = 0.0;
        for &v in plane {
            let code = ((v - prev) / (2.0 * eb)).round() as i32;
            if code.abs() >= 1 << 15 {
                out.push(-(1 << 15));
                prev = v;
            } else {
                prev += code as f64 * 2.0 * eb;
                out.push(code);
            }
        }
        out
    }

    fn decoded_codes(cc: &CompressedChunk) -> Vec<i16> {
        let n = cc.element_count as usize;
        let mut pos = HEADER_LEN;
        let low = rle_decode(&cc.payload, &mut pos, 2 * n).unwrap();
        let high = rle_decode(&cc.payload, &mut pos, 2 * n).unwrap();
        low.iter()
            .zip(&high)
            .map(|(&l, &h)| unzigzag(l as u16 | (h as u16) << 8))
            .collect()
    }

    #[test]
    fn zero_chunk_stays_exactly_zero() {
        for c_bits in [0, 3, 10] {
            let x = vec![c(0.0, 0.0); 1 << c_bits];
            let cc = compress(&x, 1e-5).unwrap();
            assert!(decoded_codes(&cc).iter().all(|&k| k == 0));
            assert_eq!(decompress(&cc).unwrap(), x);
        }
    }

    #[test]
    fn constant_ones_hand_trace() {
        let x = vec![c(1.0, 0.0); 4];
        let cc = compress(&x, 0.1).unwrap();
        let codes = decoded_codes(&cc);
        assert_eq!(&codes[..4], &[5, 0, 0, 0]);
        let reference = brute_force_codes(&[1.0; 4], 0.1);
        assert_eq!(reference, vec![5, 0, 0, 0]);
        let y = decompress(&cc).unwrap();
        assert!(y.iter().all(|a| (a.re - 1.0).abs() <= 0.1 && a.im == 0.0));
    }

    #[test]
    fn codes_match_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for eb in [1e-2, 1e-4] {
            let x = random_chunk(&mut rng, 256);
            let cc = compress(&x, eb).unwrap();
            let reals: Vec<f64> = x.iter().map(|a| a.re).collect();
            let imags: Vec<f64> = x.iter().map(|a| a.im).collect();
            let mut expected = brute_force_codes(&reals, eb);
            expected.extend(brute_force_codes(&imags, eb));
            let got: Vec<i32> = decoded_codes(&cc).iter().map(|&k| k as i32).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn thousand_random_chunks_respect_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for _ in 0..1000 {
            let x = random_chunk(&mut rng, 64);
            let y = decompress(&compress(&x, 1e-4).unwrap()).unwrap();
            assert!(max_dev(&x, &y) <= 1e-4);
        }
    }

    #[test]
    fn discontinuities_use_raw_path() {
        let x = vec![c(0.0, 0.0), c(1.0, -1.0), c(0.0, 0.0), c(0.5, 0.0)];
        let cc = compress(&x, 1e-7).unwrap();
        let codes = decoded_codes(&cc);
        assert!(codes.contains(&SENTINEL));
        let y = decompress(&cc).unwrap();
        assert!(max_dev(&x, &y) <= 1e-7);
        assert_eq!(y[1], x[1]);
    }

    #[test]
    fn non_finite_values_round_trip_raw() {
        let x = vec![c(f64::INFINITY, 0.0), c(f64::NAN, 1.0)];
        let y = decompress(&compress(&x, 1e-3).unwrap()).unwrap();
        assert_eq!(y[0].re, f64::INFINITY);
        assert!(y[1].re.is_nan());
    }

    #[test]
    fn pinned_values_are_exact() {
        let x = vec![c(1.0, 0.0), c(0.0, 0.0)];
        // ε=0.3: code round(1/0.6)=2 reconstructs 1.2, within ε but not exact.
        let loose = decompress(&compress(&x, 0.3).unwrap()).unwrap();
        assert!((loose[0].re - 1.2).abs() < 1e-12);
        let exact = decompress(&compress_pinned(&x, 0.3, &[0]).unwrap()).unwrap();
        assert_eq!(exact[0], c(1.0, 0.0));
    }

    #[test]
    fn flipped_byte_is_detected() {
        let x = vec![c(0.25, -0.5); 8];
        let mut cc = compress(&x, 1e-3).unwrap();
        let last = cc.payload.len() - 1;
        cc.payload[last] ^= 0x40;
        assert!(matches!(
            decompress(&cc),
            Err(CodecError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn malformed_payloads_are_rejected() {
        let x = vec![c(0.25, -0.5); 8];
        let base = compress(&x, 1e-3).unwrap();
        let reseal = |mut cc: CompressedChunk| {
            cc.checksum = crc32fast::hash(&cc.payload);
            cc
        };
        let mut truncated = base.clone();
        truncated.payload.truncate(HEADER_LEN + 1);
        assert!(matches!(decompress(&reseal(truncated)), Err(CodecError::Malformed(_))));

        let mut zero_run = base.clone();
        zero_run.payload[HEADER_LEN + 1] = 0;
        assert!(matches!(decompress(&reseal(zero_run)), Err(CodecError::Malformed(_))));

        let mut bad_id = base.clone();
        bad_id.payload[0] = 9;
        assert!(matches!(decompress(&reseal(bad_id)), Err(CodecError::Malformed(_))));

        let mut wrong_out = [c(0.0, 0.0); 4];
        assert!(matches!(
            decompress_into(&base, &mut wrong_out),
            Err(CodecError::OutputLength { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            compress(&[c(0.0, 0.0); 3], 1e-3).unwrap_err(),
            CodecError::NotPowerOfTwo(3)
        );
        assert!(matches!(
            compress(&[c(0.0, 0.0); 4], -1.0),
            Err(CodecError::InvalidErrorBound(_))
        ));
        assert!(matches!(
            compress(&[c(0.0, 0.0); 4], f64::NAN),
            Err(CodecError::InvalidErrorBound(_))
        ));
    }

    #[test]
    fn zero_chunk_ratio_at_c16() {
        // 2·2^16 zero codes per byte plane: 514 full runs plus one run of 2,
        // so each plane takes 515 pairs.
        let x = vec![c(0.0, 0.0); 1 << 16];
        let cc = compress(&x, 1e-5).unwrap();
        assert_eq!(cc.payload.len(), HEADER_LEN + 2 * 2 * 515);
        assert_eq!(cc.payload.len(), 2077);
        assert!((cc.ratio() - 1048576.0 / 2077.0).abs() < 1e-9);
        assert!(cc.ratio() > 500.0);
    }

    #[test]
    fn lossless_random_ratio_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_chunk(&mut rng, 1 << 12);
        let r = compress(&x, 0.0).unwrap().ratio();
        assert!((0.4..=1.1).contains(&r), "ratio {r}");
    }

    #[test]
    fn ratio_arithmetic() {
        let cc = CompressedChunk {
            chunk_index: 0,
            codec_id: CodecId::LosslessRle,
            error_bound: 0.0,
            element_count: 4,
            payload: vec![0; 64],
            checksum: 0,
        };
        assert_eq!(ratio(&cc), 1.0);
    }

    #[test]
    fn rle_expansion_is_at_most_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plane: Vec<u8> = (0..1000).map(|_| rng.gen()).collect();
        let mut out = Vec::new();
        rle_encode(&plane, &mut out);
        assert!(out.len() <= 2 * plane.len());
        let mut pos = 0;
        assert_eq!(rle_decode(&out, &mut pos, plane.len()).unwrap(), plane);
    }

    fn arb_chunk() -> impl Strategy<Value = Vec<Amplitude>> {
        (0u32..8).prop_flat_map(|bits| {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1usize << bits)
                .prop_map(|v| v.into_iter().map(|(re, im)| c(re, im)).collect())
        })
    }

    proptest! {
        #[test]
        fn lossless_is_bit_exact(x in arb_chunk()) {
            let y = decompress(&compress(&x, 0.0).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&y) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }

        #[test]
        fn lossy_respects_bound(x in arb_chunk(), eb in prop::sample::select(vec![1e-3, 1e-5, 1e-7])) {
            let cc = compress(&x, eb).unwrap();
            let y = decompress(&cc).unwrap();
            prop_assert!(max_dev(&x, &y) <= eb);
            // deterministic
            prop_assert_eq!(&compress(&x, eb).unwrap().payload, &cc.payload);
            // recompressing the reconstruction stays within the bound of it
            let z = decompress(&compress(&y, eb).unwrap()).unwrap();
            prop_assert!(max_dev(&y, &z) <= eb);
        }
    }
}

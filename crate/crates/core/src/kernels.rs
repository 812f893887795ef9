//! Gate kernels over a dense amplitude buffer.
//!
//! Both the device backend and the host co-execution path call these, so the
//! two produce bit-identical results. Every amplitude group is updated by the
//! same arithmetic whether the loop runs sequentially or on rayon workers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::circuit::{Gate, GateMatrix};
use crate::{Amplitude, ExecMode};

/// Buffers below this many amplitudes are always processed sequentially.
pub const PARALLEL_THRESHOLD: usize = 1 << 14;
/// Minimum amplitudes per parallel task.
#[cfg(feature = "parallel")]
const GRAIN: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("buffer length {0} is not a power of two")]
    BufferLength(usize),
    #[error("gate {gate} uses bit {bit}, buffer has {width} bits")]
    BitOutOfRange { gate: String, bit: usize, width: usize },
    #[error("gate {0} has the wrong number of qubits")]
    Arity(String),
}

type M2 = [[Amplitude; 2]; 2];
type M4 = [[Amplitude; 4]; 4];

#[inline(always)]
fn update_pair(m: &M2, a: &mut Amplitude, b: &mut Amplitude) {
    let (x, y) = (*a, *b);
    *a = m[0][0] * x + m[0][1] * y;
    *b = m[1][0] * x + m[1][1] * y;
}

#[inline(always)]
fn update_quad(m: &M4, v: [&mut Amplitude; 4]) {
    let x = [*v[0], *v[1], *v[2], *v[3]];
    for (row, out) in m.iter().zip(v) {
        *out = row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3] * x[3];
    }
}

fn pairs_seq(lo: &mut [Amplitude], hi: &mut [Amplitude], m: &M2) {
    for (a, b) in lo.iter_mut().zip(hi) {
        update_pair(m, a, b);
    }
}

/// Applies `m` to every pair `(i, i | 2^bit)` with `bit` clear in `i`.
pub fn apply_single(buf: &mut [Amplitude], bit: usize, m: &M2, mode: ExecMode) {
    let half = 1usize << bit;
    let block = half << 1;
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && buf.len() >= PARALLEL_THRESHOLD {
        if block < GRAIN {
            buf.par_chunks_mut(GRAIN).for_each(|group| {
                for blk in group.chunks_mut(block) {
                    let (lo, hi) = blk.split_at_mut(half);
                    pairs_seq(lo, hi, m);
                }
            });
        } else {
            buf.par_chunks_mut(block).for_each(|blk| {
                let (lo, hi) = blk.split_at_mut(half);
                lo.par_chunks_mut(GRAIN)
                    .zip(hi.par_chunks_mut(GRAIN))
                    .for_each(|(l, h)| pairs_seq(l, h, m));
            });
        }
        return;
    }
    let _ = mode;
    for blk in buf.chunks_mut(block) {
        let (lo, hi) = blk.split_at_mut(half);
        pairs_seq(lo, hi, m);
    }
}

/// Inner loop of the two-qubit kernel over one `2 << hi_bit` block, already
/// split at the high bit into `a` (high bit 0) and `b` (high bit 1).
fn quads_seq(a: &mut [Amplitude], b: &mut [Amplitude], lo_half: usize, m: &M4) {
    for (sa, sb) in a.chunks_mut(lo_half << 1).zip(b.chunks_mut(lo_half << 1)) {
        let (a0, a1) = sa.split_at_mut(lo_half);
        let (b0, b1) = sb.split_at_mut(lo_half);
        for (((x00, x01), x10), x11) in a0.iter_mut().zip(a1).zip(b0).zip(b1) {
            update_quad(m, [x00, x01, x10, x11]);
        }
    }
}

/// Reorders a 4x4 matrix indexed by `(first, second)` bits into `(hi, lo)` order.
fn to_hi_lo_order(m: &M4, first_is_hi: bool) -> M4 {
    if first_is_hi {
        return *m;
    }
    let swap = |i: usize| ((i & 1) << 1) | (i >> 1);
    let mut out = *m;
    for (r, row) in out.iter_mut().enumerate() {
        for (col, v) in row.iter_mut().enumerate() {
            *v = m[swap(r)][swap(col)];
        }
    }
    out
}

/// Applies a 4x4 unitary whose row/column index is `(bit of first) << 1 | bit of second`.
pub fn apply_two(buf: &mut [Amplitude], first: usize, second: usize, m: &M4, mode: ExecMode) {
    let (hi, lo) = if first > second { (first, second) } else { (second, first) };
    let m = to_hi_lo_order(m, first > second);
    let hi_half = 1usize << hi;
    let lo_half = 1usize << lo;
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && buf.len() >= PARALLEL_THRESHOLD {
        let block = hi_half << 1;
        if block < GRAIN {
            buf.par_chunks_mut(GRAIN).for_each(|group| {
                for blk in group.chunks_mut(block) {
                    let (a, b) = blk.split_at_mut(hi_half);
                    quads_seq(a, b, lo_half, &m);
                }
            });
        } else {
            let sub = (lo_half << 1).max(GRAIN.min(hi_half));
            buf.par_chunks_mut(block).for_each(|blk| {
                let (a, b) = blk.split_at_mut(hi_half);
                a.par_chunks_mut(sub)
                    .zip(b.par_chunks_mut(sub))
                    .for_each(|(sa, sb)| quads_seq(sa, sb, lo_half, &m));
            });
        }
        return;
    }
    let _ = mode;
    for blk in buf.chunks_mut(hi_half << 1) {
        let (a, b) = blk.split_at_mut(hi_half);
        quads_seq(a, b, lo_half, &m);
    }
}

/// Applies one gate whose qubits are buffer bits.
pub fn apply_gate(buf: &mut [Amplitude], gate: &Gate, mode: ExecMode) -> Result<(), KernelError> {
    if !buf.len().is_power_of_two() {
        return Err(KernelError::BufferLength(buf.len()));
    }
    let width = buf.len().trailing_zeros() as usize;
    if let Some(&bit) = gate.qubits.iter().find(|&&q| q >= width) {
        return Err(KernelError::BitOutOfRange {
            gate: gate.to_string(),
            bit,
            width,
        });
    }
    match (gate.matrix(), gate.qubits.as_slice()) {
        (GateMatrix::Single(m), &[b]) => apply_single(buf, b, &m, mode),
        (GateMatrix::Two(m), &[f, s]) if f != s => apply_two(buf, f, s, &m, mode),
        _ => return Err(KernelError::Arity(gate.to_string())),
    }
    Ok(())
}

/// Applies gates in order.
pub fn apply_gates(buf: &mut [Amplitude], gates: &[Gate], mode: ExecMode) -> Result<(), KernelError> {
    gates.iter().try_for_each(|g| apply_gate(buf, g, mode))
}

/// Copies `src` into `dst` (equal lengths), split across workers in parallel mode.
pub fn copy_buffer(dst: &mut [Amplitude], src: &[Amplitude], mode: ExecMode) {
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && dst.len() >= PARALLEL_THRESHOLD {
        dst.par_chunks_mut(GRAIN)
            .zip(src.par_chunks(GRAIN))
            .for_each(|(d, s)| d.copy_from_slice(s));
        return;
    }
    let _ = mode;
    dst.copy_from_slice(src);
}

//! Dense reference simulator for verification at desk scale.
//!
//! Shares gate matrices with [`crate::circuit`] but applies them with its own
//! index loop rather than the blocked kernels.

use thiserror::Error;

use crate::circuit::{Circuit, CircuitError, GateMatrix};
use crate::store::{ChunkStore, StoreError};
use crate::Amplitude;

/// Default largest register the oracle accepts.
pub const DEFAULT_ORACLE_LIMIT: usize = 24;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{num_qubits} qubits exceeds oracle limit of {limit}")]
    TooLarge { num_qubits: usize, limit: usize },
    #[error("dimension mismatch: {0} vs {1} qubits")]
    Dimension(usize, usize),
    #[error("invalid circuit: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidCircuit(Vec<CircuitError>),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub num_qubits: usize,
    pub amplitudes: Vec<Amplitude>,
}

impl DenseState {
    /// Basis state `|index>`.
    pub fn basis(num_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![Amplitude::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[index] = Amplitude::new(1.0, 0.0);
        DenseState {
            num_qubits,
            amplitudes,
        }
    }

    pub fn norm(&self) -> f64 {
        let mut sum = NeumaierSum::default();
        for a in &self.amplitudes {
            sum.add(a.norm_sqr());
        }
        sum.value()
    }

    /// Applies a circuit in place.
    pub fn apply(&mut self, circuit: &Circuit) {
        for gate in &circuit.gates {
            match gate.matrix() {
                GateMatrix::Single(m) => {
                    let mask = 1usize << gate.qubits[0];
                    for i in 0..self.amplitudes.len() {
                        if i & mask != 0 {
                            continue;
                        }
                        let j = i | mask;
                        let (x, y) = (self.amplitudes[i], self.amplitudes[j]);
                        self.amplitudes[i] = m[0][0] * x + m[0][1] * y;
                        self.amplitudes[j] = m[1][0] * x + m[1][1] * y;
                    }
                }
                GateMatrix::Two(m) => {
                    let first = 1usize << gate.qubits[0];
                    let second = 1usize << gate.qubits[1];
                    for i in 0..self.amplitudes.len() {
                        if i & (first | second) != 0 {
                            continue;
                        }
                        // matrix index = (first bit, second bit)
                        let idx = [i, i | second, i | first, i | first | second];
                        let x = idx.map(|k| self.amplitudes[k]);
                        for (row, &target) in m.iter().zip(&idx) {
                            self.amplitudes[target] =
                                row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3] * x[3];
                        }
                    }
                }
            }
        }
    }
}

/// Anything that can be streamed as consecutive amplitude blocks.
pub trait StateSource {
    fn num_qubits(&self) -> usize;
    /// Calls `f(first_global_index, block)` over the whole state in order.
    fn for_each_block(
        &self,
        f: &mut dyn FnMut(usize, &[Amplitude]),
    ) -> Result<(), OracleError>;
}

impl StateSource for DenseState {
    fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    fn for_each_block(&self, f: &mut dyn FnMut(usize, &[Amplitude])) -> Result<(), OracleError> {
        f(0, &self.amplitudes);
        Ok(())
    }
}

impl StateSource for ChunkStore {
    fn num_qubits(&self) -> usize {
        ChunkStore::num_qubits(self) as usize
    }

    fn for_each_block(&self, f: &mut dyn FnMut(usize, &[Amplitude])) -> Result<(), OracleError> {
        let mut buf = vec![Amplitude::new(0.0, 0.0); self.chunk_len()];
        for chunk in 0..self.chunk_count() {
            self.load_chunk_into(chunk, &mut buf)?;
            f(chunk * self.chunk_len(), &buf);
        }
        Ok(())
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Runs `circuit` from `|0...0>` with the default register limit.
pub fn simulate_dense(circuit: &Circuit) -> Result<DenseState, OracleError> {
    simulate_dense_with_limit(circuit, DEFAULT_ORACLE_LIMIT)
}

pub fn simulate_dense_with_limit(circuit: &Circuit, limit: usize) -> Result<DenseState, OracleError> {
    if circuit.num_qubits > limit {
        return Err(OracleError::TooLarge {
            num_qubits: circuit.num_qubits,
            limit,
        });
    }
    circuit.validate().map_err(OracleError::InvalidCircuit)?;
    let mut state = DenseState::basis(circuit.num_qubits, 0);
    state.apply(circuit);
    Ok(state)
}

/// `|<a|b>|^2 / (<a|a> <b|b>)`, accumulated with compensated sums. The
/// normalization keeps lossy states, whose norm drifts, within `[0, 1]`.
pub fn fidelity(a: &DenseState, b: &dyn StateSource) -> Result<f64, OracleError> {
    if a.num_qubits != b.num_qubits() {
        return Err(OracleError::Dimension(a.num_qubits, b.num_qubits()));
    }
    let (mut re, mut im, mut nb) = (NeumaierSum::default(), NeumaierSum::default(), NeumaierSum::default());
    b.for_each_block(&mut |start, block| {
        for (x, y) in a.amplitudes[start..start + block.len()].iter().zip(block) {
            let p = x.conj() * y;
            re.add(p.re);
            im.add(p.im);
            nb.add(y.norm_sqr());
        }
    })?;
    let (re, im) = (re.value(), im.value());
    let norms = a.norm() * nb.value();
    if norms == 0.0 {
        return Ok(0.0);
    }
    Ok(((re * re + im * im) / norms).min(1.0))
}

/// Largest component-wise |a_i - b_i| over the whole state.
pub fn max_deviation(a: &DenseState, b: &dyn StateSource) -> Result<f64, OracleError> {
    if a.num_qubits != b.num_qubits() {
        return Err(OracleError::Dimension(a.num_qubits, b.num_qubits()));
    }
    let mut worst = 0.0f64;
    b.for_each_block(&mut |start, block| {
        for (x, y) in a.amplitudes[start..start + block.len()].iter().zip(block) {
            worst = worst.max((x.re - y.re).abs()).max((x.im - y.im).abs());
        }
    })?;
    Ok(worst)
}

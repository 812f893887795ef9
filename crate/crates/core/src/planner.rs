//! Offline partitioning of a circuit into stages and of each stage's sweep
//! into batches of co-resident chunks.
//!
//! Qubits below `c` index amplitudes inside a chunk. A qubit `q >= c` selects
//! among chunks through chunk-index bit `q - c`. A stage may touch at most
//! `m - c` such high qubits (its set `S`); every batch then holds the `2^|S|`
//! chunks that differ only in the `S` bits, laid out in the device buffer as
//! `buffer_index = rank_of_S_pattern << c | offset`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::circuit::{Circuit, CircuitError, Gate};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("chunk qubits must satisfy 1 <= c <= n (c = {chunk_qubits}, n = {num_qubits})")]
    ChunkQubits { num_qubits: usize, chunk_qubits: usize },
    #[error("batch qubits m = {batch_qubits} exceeds the register size n = {num_qubits}")]
    BatchTooLarge { num_qubits: usize, batch_qubits: usize },
    #[error("device window of {window} high qubit(s) cannot hold a gate touching {needed}")]
    WindowTooSmall { window: usize, needed: usize },
    #[error("invalid circuit: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidCircuit(Vec<CircuitError>),
    #[error("qubit {0} is not mapped by the stage layout")]
    UnmappedQubit(usize),
}

/// Qubit to buffer-bit mapping of a stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    chunk_qubits: usize,
    high: Vec<usize>,
}

impl Layout {
    pub fn new(chunk_qubits: usize, high_set: &[usize]) -> Self {
        Layout {
            chunk_qubits,
            high: high_set.to_vec(),
        }
    }

    /// Buffer bit of `qubit`, if the layout maps it.
    pub fn bit(&self, qubit: usize) -> Option<usize> {
        if qubit < self.chunk_qubits {
            Some(qubit)
        } else {
            self.high
                .iter()
                .position(|&q| q == qubit)
                .map(|rank| self.chunk_qubits + rank)
        }
    }

    /// Number of buffer bits, `c + |S|`.
    pub fn width(&self) -> usize {
        self.chunk_qubits + self.high.len()
    }
}

/// A consecutive run of gates whose high qubits fit the device window.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// Index of the first gate in the original circuit.
    pub first_gate: usize,
    pub gates: Vec<Gate>,
    /// Sorted high qubits, padded to fill the window.
    pub high_set: Vec<usize>,
}

impl Stage {
    pub fn layout(&self, chunk_qubits: usize) -> Layout {
        Layout::new(chunk_qubits, &self.high_set)
    }

    /// Original indices of the stage's gates.
    pub fn gate_range(&self) -> std::ops::Range<usize> {
        self.first_gate..self.first_gate + self.gates.len()
    }

    /// Stage gates rewritten onto buffer bits.
    pub fn remapped_gates(&self, chunk_qubits: usize) -> Result<Vec<Gate>, PlanError> {
        let layout = self.layout(chunk_qubits);
        self.gates.iter().map(|g| remap_gate(g, &layout)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPlan {
    pub num_qubits: usize,
    pub chunk_qubits: usize,
    pub batch_qubits: usize,
    pub stages: Vec<Stage>,
}

fn high_qubits(gate: &Gate, chunk_qubits: usize) -> impl Iterator<Item = usize> + '_ {
    gate.qubits.iter().copied().filter(move |&q| q >= chunk_qubits)
}

fn union_size(set: &[usize], extra: &[usize]) -> usize {
    set.len() + extra.iter().filter(|q| !set.contains(q)).count()
}

/// Greedy left-to-right staging. A gate joins the open stage while the union
/// of high qubits stays within `m - c`; otherwise the stage closes and the gate
/// opens the next one. Closed stages are padded with the smallest unused high
/// qubits up to `min(m - c, n - c)`.
pub fn plan(circuit: &Circuit, chunk_qubits: usize, batch_qubits: usize) -> Result<ExecutionPlan, PlanError> {
    let n = circuit.num_qubits;
    let c = chunk_qubits;
    let m = batch_qubits;
    circuit.validate().map_err(PlanError::InvalidCircuit)?;
    if c == 0 || c > n {
        return Err(PlanError::ChunkQubits {
            num_qubits: n,
            chunk_qubits: c,
        });
    }
    if m > n {
        return Err(PlanError::BatchTooLarge {
            num_qubits: n,
            batch_qubits: m,
        });
    }
    let window = m.saturating_sub(c);
    // Every supported gate touches at most two qubits.
    let needed = 2.min(n - c);
    if window < needed {
        return Err(PlanError::WindowTooSmall { window, needed });
    }

    let mut stages = Vec::new();
    let mut open: Option<Stage> = None;
    for (index, gate) in circuit.gates.iter().enumerate() {
        let g: Vec<usize> = high_qubits(gate, c).collect();
        match open.as_mut() {
            Some(stage) if union_size(&stage.high_set, &g) <= window => {
                for q in g {
                    if !stage.high_set.contains(&q) {
                        stage.high_set.push(q);
                    }
                }
                stage.gates.push(gate.clone());
            }
            _ => {
                if let Some(done) = open.take() {
                    stages.push(done);
                }
                let mut high_set = Vec::new();
                for q in g {
                    if !high_set.contains(&q) {
                        high_set.push(q);
                    }
                }
                open = Some(Stage {
                    first_gate: index,
                    gates: vec![gate.clone()],
                    high_set,
                });
            }
        }
    }
    stages.extend(open);

    let target = window.min(n - c);
    for stage in &mut stages {
        let mut candidate = c;
        while stage.high_set.len() < target {
            if !stage.high_set.contains(&candidate) {
                stage.high_set.push(candidate);
            }
            candidate += 1;
        }
        stage.high_set.sort_unstable();
    }

    Ok(ExecutionPlan {
        num_qubits: n,
        chunk_qubits: c,
        batch_qubits: m,
        stages,
    })
}

/// The chunks processed together in one device round trip. Member `k` of
/// `chunk_indices` occupies buffer positions `[k << c, (k + 1) << c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchDescriptor {
    /// Position in the stage's batch enumeration.
    pub index: usize,
    pub chunk_qubits: usize,
    pub chunk_indices: Vec<usize>,
}

impl BatchDescriptor {
    /// Total amplitudes in the batch.
    pub fn len(&self) -> usize {
        self.chunk_indices.len() << self.chunk_qubits
    }

    pub fn is_empty(&self) -> bool {
        self.chunk_indices.is_empty()
    }

    pub fn chunk_len(&self) -> usize {
        1 << self.chunk_qubits
    }

    /// First buffer position of member `k`.
    pub fn buffer_offset(&self, member: usize) -> usize {
        member << self.chunk_qubits
    }
}

/// Scatters the low bits of `value` into the bit positions listed in `positions`.
fn deposit(value: usize, positions: &[usize]) -> usize {
    positions
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &p)| acc | (((value >> i) & 1) << p))
}

/// Iterator over a stage's batches; see [`batches`].
#[derive(Debug, Clone)]
pub struct Batches {
    chunk_qubits: usize,
    s_bits: Vec<usize>,
    free_bits: Vec<usize>,
    next: usize,
    count: usize,
}

impl Iterator for Batches {
    type Item = BatchDescriptor;

    fn next(&mut self) -> Option<BatchDescriptor> {
        if self.next >= self.count {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let base = deposit(index, &self.free_bits);
        let chunk_indices = (0..1usize << self.s_bits.len())
            .map(|pattern| base | deposit(pattern, &self.s_bits))
            .collect();
        Some(BatchDescriptor {
            index,
            chunk_qubits: self.chunk_qubits,
            chunk_indices,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.count - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches {}

/// Enumerates batches in ascending order of the free chunk-index bits (those
/// not in `S`). Members are listed in ascending order of their `S` pattern.
pub fn batches(stage: &Stage, num_qubits: usize, chunk_qubits: usize) -> Batches {
    let s_bits: Vec<usize> = stage.high_set.iter().map(|q| q - chunk_qubits).collect();
    let free_bits: Vec<usize> = (0..num_qubits - chunk_qubits)
        .filter(|b| !s_bits.contains(b))
        .collect();
    Batches {
        chunk_qubits,
        count: 1 << free_bits.len(),
        s_bits,
        free_bits,
        next: 0,
    }
}

/// Rewrites a gate onto buffer bits; kind and parameters are unchanged.
pub fn remap_gate(gate: &Gate, layout: &Layout) -> Result<Gate, PlanError> {
    let qubits = gate
        .qubits
        .iter()
        .map(|&q| layout.bit(q).ok_or(PlanError::UnmappedQubit(q)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Gate::new(gate.kind, qubits, gate.params.clone()))
}

impl ExecutionPlan {
    /// Human-readable stage table.
    pub fn explain(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "plan: n={} c={} m={} stages={}",
            self.num_qubits,
            self.chunk_qubits,
            self.batch_qubits,
            self.stages.len()
        );
        let _ = writeln!(out, "{:>5}  {:>13}  {:>7}  {:>7}  high qubits", "stage", "gates", "count", "batches");
        for (i, s) in self.stages.iter().enumerate() {
            let range = s.gate_range();
            let batch_count = 1usize << (self.num_qubits - self.chunk_qubits - s.high_set.len());
            let _ = writeln!(
                out,
                "{:>5}  {:>13}  {:>7}  {:>7}  {:?}",
                i,
                format!("{}..{}", range.start, range.end),
                s.gates.len(),
                batch_count,
                s.high_set
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::generators;
    use std::collections::BTreeSet;

    #[test]
    fn worked_example() {
        let c = Circuit::with_gates(4, vec![Gate::h(0), Gate::cx(0, 1), Gate::h(3), Gate::cx(2, 3)]);
        let p = plan(&c, 1, 3).unwrap();
        assert_eq!(p.stages.len(), 2);
        assert_eq!(p.stages[0].gates, c.gates[..3].to_vec());
        assert_eq!(p.stages[0].high_set, vec![1, 3]);
        assert_eq!(p.stages[1].gates, c.gates[3..].to_vec());
        assert_eq!(p.stages[1].high_set, vec![2, 3]);

        let b: Vec<BatchDescriptor> = batches(&p.stages[0], 4, 1).collect();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].chunk_indices, vec![0, 1, 4, 5]);
        assert_eq!(b[1].chunk_indices, vec![2, 3, 6, 7]);
    }

    #[test]
    fn worked_example_batches_match_brute_force() {
        // Enumerate all chunk indices and group by the free bit (qubit 2 <-> bit 1).
        let mut groups = [Vec::new(), Vec::new()];
        for chunk in 0..8usize {
            groups[(chunk >> 1) & 1].push(chunk);
        }
        let c = Circuit::with_gates(4, vec![Gate::h(0), Gate::cx(0, 1), Gate::h(3)]);
        let p = plan(&c, 1, 3).unwrap();
        let b: Vec<Vec<usize>> = batches(&p.stages[0], 4, 1).map(|b| b.chunk_indices).collect();
        assert_eq!(b, groups.to_vec());
    }

    #[test]
    fn local_only_circuit_is_one_padded_stage() {
        let c = Circuit::with_gates(6, vec![Gate::h(0), Gate::cx(1, 0), Gate::rz(1, 0.5)]);
        let p = plan(&c, 2, 4).unwrap();
        assert_eq!(p.stages.len(), 1);
        assert_eq!(p.stages[0].high_set, vec![2, 3]);
    }

    #[test]
    fn full_window_is_one_stage() {
        let c = generators::random(7, 100, 1);
        let p = plan(&c, 3, 7).unwrap();
        assert_eq!(p.stages.len(), 1);
        let b: Vec<_> = batches(&p.stages[0], 7, 3).collect();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].chunk_indices, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn empty_circuit_has_no_stages() {
        let p = plan(&Circuit::new(5), 2, 4).unwrap();
        assert!(p.stages.is_empty());
    }

    #[test]
    fn precondition_errors() {
        let c = generators::ghz(6);
        assert!(matches!(plan(&c, 0, 4), Err(PlanError::ChunkQubits { .. })));
        assert!(matches!(plan(&c, 7, 7), Err(PlanError::ChunkQubits { .. })));
        assert!(matches!(plan(&c, 2, 7), Err(PlanError::BatchTooLarge { .. })));
        assert!(matches!(plan(&c, 2, 3), Err(PlanError::WindowTooSmall { .. })));
        let bad = Circuit::with_gates(2, vec![Gate::h(4)]);
        assert!(matches!(plan(&bad, 1, 2), Err(PlanError::InvalidCircuit(_))));
        // one high qubit needs only a one-qubit window
        assert!(plan(&c, 5, 6).is_ok());
        assert!(plan(&c, 6, 6).is_ok());
    }

    #[test]
    fn remap_examples() {
        let ident = Layout::new(2, &[]);
        assert_eq!(remap_gate(&Gate::cx(0, 1), &ident).unwrap(), Gate::cx(0, 1));
        let layout = Layout::new(2, &[3]);
        assert_eq!(remap_gate(&Gate::h(3), &layout).unwrap(), Gate::h(2));
        assert_eq!(
            remap_gate(&Gate::h(2), &layout).unwrap_err(),
            PlanError::UnmappedQubit(2)
        );
    }

    #[test]
    fn batches_partition_chunk_space() {
        for seed in 0..20 {
            let n = 4 + (seed as usize % 6);
            let c = generators::random(n, 30, seed);
            for cq in 1..n - 1 {
                for m in cq + 2..=n {
                    let p = plan(&c, cq, m).unwrap();
                    for stage in &p.stages {
                        let mut seen = BTreeSet::new();
                        for b in batches(stage, n, cq) {
                            assert_eq!(b.chunk_indices.len(), 1 << stage.high_set.len());
                            for &i in &b.chunk_indices {
                                assert!(seen.insert(i), "chunk {i} in two batches");
                            }
                        }
                        assert_eq!(seen, (0..1usize << (n - cq)).collect());
                    }
                }
            }
        }
    }

    #[test]
    fn explain_lists_every_stage() {
        let c = Circuit::with_gates(4, vec![Gate::h(0), Gate::cx(0, 1), Gate::h(3), Gate::cx(2, 3)]);
        let text = plan(&c, 1, 3).unwrap().explain();
        assert!(text.contains("stages=2"));
        assert!(text.contains("[1, 3]") && text.contains("[2, 3]"));
    }
}

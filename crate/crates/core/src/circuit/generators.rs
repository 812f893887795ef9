//! Built-in benchmark circuits.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Circuit, Gate, GateKind};

/// `H(0)` followed by `CX(0, k)` for every other qubit.
pub fn ghz(num_qubits: usize) -> Circuit {
    let mut c = Circuit::new(num_qubits);
    if num_qubits == 0 {
        return c;
    }
    c.push(Gate::h(0));
    for k in 1..num_qubits {
        c.push(Gate::cx(0, k));
    }
    c
}

/// Controlled phase expressed in the supported gate set.
fn controlled_phase(c: &mut Circuit, control: usize, target: usize, angle: f64) {
    c.push(Gate::u1(control, angle / 2.0));
    c.push(Gate::cx(control, target));
    c.push(Gate::u1(target, -angle / 2.0));
    c.push(Gate::cx(control, target));
    c.push(Gate::u1(target, angle / 2.0));
}

/// Textbook quantum Fourier transform, including the final qubit reversal.
pub fn qft(num_qubits: usize) -> Circuit {
    let mut c = Circuit::new(num_qubits);
    for target in (0..num_qubits).rev() {
        c.push(Gate::h(target));
        for control in (0..target).rev() {
            let angle = PI / (1u64 << (target - control)) as f64;
            controlled_phase(&mut c, control, target, angle);
        }
    }
    for q in 0..num_qubits / 2 {
        c.push(Gate::swap(q, num_qubits - 1 - q));
    }
    c
}

/// `gate_count` gates drawn uniformly from the whole supported set, with
/// uniform angles in `[-pi, pi)` and distinct random qubits. Two-qubit kinds
/// are skipped on single-qubit registers.
pub fn random(num_qubits: usize, gate_count: usize, seed: u64) -> Circuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<GateKind> = GateKind::ALL
        .iter()
        .copied()
        .filter(|k| k.arity() <= num_qubits)
        .collect();
    let qubits: Vec<usize> = (0..num_qubits).collect();
    let mut c = Circuit::new(num_qubits);
    for _ in 0..gate_count {
        let kind = *kinds.choose(&mut rng).expect("at least one qubit");
        let targets: Vec<usize> = qubits
            .choose_multiple(&mut rng, kind.arity())
            .copied()
            .collect();
        let params = (0..kind.param_count())
            .map(|_| rng.gen_range(-PI..PI))
            .collect();
        c.push(Gate::new(kind, targets, params));
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_circuits_validate() {
        for n in 1..8 {
            assert!(ghz(n).validate().is_ok());
            assert!(qft(n).validate().is_ok());
            assert!(random(n, 100, n as u64).validate().is_ok());
        }
    }

    #[test]
    fn random_is_seeded() {
        assert_eq!(random(5, 40, 3), random(5, 40, 3));
        assert_ne!(random(5, 40, 3), random(5, 40, 4));
    }
}

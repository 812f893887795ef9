//! Circuit representation, gate unitaries and the OpenQASM 2.0 subset.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Amplitude;

pub mod generators;
mod qasm;

pub use qasm::{parse_qasm, to_qasm, QasmError, QasmErrorKind, QasmProgram, QasmWarning};

/// Supported gate kinds. Three-qubit gates must be decomposed upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    H,
    X,
    Y,
    Z,
    S,
    Sdg,
    T,
    Tdg,
    Rx,
    Ry,
    Rz,
    U1,
    U2,
    U3,
    Cx,
    Cz,
    Swap,
}

impl GateKind {
    pub const ALL: [GateKind; 17] = [
        GateKind::H,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::S,
        GateKind::Sdg,
        GateKind::T,
        GateKind::Tdg,
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::U1,
        GateKind::U2,
        GateKind::U3,
        GateKind::Cx,
        GateKind::Cz,
        GateKind::Swap,
    ];

    /// Number of qubits the gate acts on.
    pub fn arity(self) -> usize {
        match self {
            GateKind::Cx | GateKind::Cz | GateKind::Swap => 2,
            _ => 1,
        }
    }

    /// Number of angle parameters.
    pub fn param_count(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::U1 => 1,
            GateKind::U2 => 2,
            GateKind::U3 => 3,
            _ => 0,
        }
    }

    /// Lower-case OpenQASM (qelib1) name.
    pub fn qasm_name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::S => "s",
            GateKind::Sdg => "sdg",
            GateKind::T => "t",
            GateKind::Tdg => "tdg",
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::U1 => "u1",
            GateKind::U2 => "u2",
            GateKind::U3 => "u3",
            GateKind::Cx => "cx",
            GateKind::Cz => "cz",
            GateKind::Swap => "swap",
        }
    }

    /// Resolves a gate name; accepts the built-in `U` and `CX` spellings too.
    pub fn from_qasm_name(name: &str) -> Option<GateKind> {
        if name == "U" {
            return Some(GateKind::U3);
        }
        if name == "CX" {
            return Some(GateKind::Cx);
        }
        GateKind::ALL.iter().copied().find(|k| k.qasm_name() == name)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.qasm_name())
    }
}

/// A gate application. For two-qubit gates the control comes first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub params: Vec<f64>,
}

/// A 2x2 or 4x4 unitary. For 4x4 matrices the first listed qubit is the
/// higher-order bit of the row/column index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMatrix {
    Single([[Amplitude; 2]; 2]),
    Two([[Amplitude; 4]; 4]),
}

const fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

const ZERO: Amplitude = c(0.0, 0.0);
const ONE: Amplitude = c(1.0, 0.0);

fn u3_matrix(theta: f64, phi: f64, lambda: f64) -> [[Amplitude; 2]; 2] {
    let (s, co) = (theta / 2.0).sin_cos();
    [
        [c(co, 0.0), -Amplitude::from_polar(s, lambda)],
        [
            Amplitude::from_polar(s, phi),
            Amplitude::from_polar(co, phi + lambda),
        ],
    ]
}

impl Gate {
    pub fn new(kind: GateKind, qubits: Vec<usize>, params: Vec<f64>) -> Self {
        Gate {
            kind,
            qubits,
            params,
        }
    }

    fn fixed1(kind: GateKind, q: usize) -> Self {
        Gate::new(kind, vec![q], Vec::new())
    }

    pub fn h(q: usize) -> Self {
        Self::fixed1(GateKind::H, q)
    }
    pub fn x(q: usize) -> Self {
        Self::fixed1(GateKind::X, q)
    }
    pub fn y(q: usize) -> Self {
        Self::fixed1(GateKind::Y, q)
    }
    pub fn z(q: usize) -> Self {
        Self::fixed1(GateKind::Z, q)
    }
    pub fn s(q: usize) -> Self {
        Self::fixed1(GateKind::S, q)
    }
    pub fn t(q: usize) -> Self {
        Self::fixed1(GateKind::T, q)
    }
    pub fn rx(q: usize, theta: f64) -> Self {
        Gate::new(GateKind::Rx, vec![q], vec![theta])
    }
    pub fn ry(q: usize, theta: f64) -> Self {
        Gate::new(GateKind::Ry, vec![q], vec![theta])
    }
    pub fn rz(q: usize, theta: f64) -> Self {
        Gate::new(GateKind::Rz, vec![q], vec![theta])
    }
    pub fn u1(q: usize, lambda: f64) -> Self {
        Gate::new(GateKind::U1, vec![q], vec![lambda])
    }
    pub fn u3(q: usize, theta: f64, phi: f64, lambda: f64) -> Self {
        Gate::new(GateKind::U3, vec![q], vec![theta, phi, lambda])
    }
    pub fn cx(control: usize, target: usize) -> Self {
        Gate::new(GateKind::Cx, vec![control, target], Vec::new())
    }
    pub fn cz(a: usize, b: usize) -> Self {
        Gate::new(GateKind::Cz, vec![a, b], Vec::new())
    }
    pub fn swap(a: usize, b: usize) -> Self {
        Gate::new(GateKind::Swap, vec![a, b], Vec::new())
    }

    /// Checks the gate against a register of `num_qubits` qubits.
    pub fn validate(&self, num_qubits: usize) -> Result<(), Vec<GateError>> {
        let mut errors = Vec::new();
        if self.qubits.len() != self.kind.arity() {
            errors.push(GateError::Arity {
                kind: self.kind,
                expected: self.kind.arity(),
                found: self.qubits.len(),
            });
        }
        if self.params.len() != self.kind.param_count() {
            errors.push(GateError::ParamCount {
                kind: self.kind,
                expected: self.kind.param_count(),
                found: self.params.len(),
            });
        }
        if let Some(&p) = self.params.iter().find(|p| !p.is_finite()) {
            errors.push(GateError::NonFiniteParam(p));
        }
        for (i, &q) in self.qubits.iter().enumerate() {
            if q >= num_qubits {
                errors.push(GateError::QubitOutOfRange {
                    qubit: q,
                    num_qubits,
                });
            }
            if self.qubits[..i].contains(&q) {
                errors.push(GateError::DuplicateQubit(q));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// The gate's unitary. Expects a valid gate; missing parameters read as 0.
    pub fn matrix(&self) -> GateMatrix {
        let p = |i: usize| self.params.get(i).copied().unwrap_or(0.0);
        let h = FRAC_1_SQRT_2;
        let single = |m| GateMatrix::Single(m);
        match self.kind {
            GateKind::H => single([[c(h, 0.0), c(h, 0.0)], [c(h, 0.0), c(-h, 0.0)]]),
            GateKind::X => single([[ZERO, ONE], [ONE, ZERO]]),
            GateKind::Y => single([[ZERO, c(0.0, -1.0)], [c(0.0, 1.0), ZERO]]),
            GateKind::Z => single([[ONE, ZERO], [ZERO, c(-1.0, 0.0)]]),
            GateKind::S => single([[ONE, ZERO], [ZERO, c(0.0, 1.0)]]),
            GateKind::Sdg => single([[ONE, ZERO], [ZERO, c(0.0, -1.0)]]),
            GateKind::T => single([[ONE, ZERO], [ZERO, Amplitude::from_polar(1.0, FRAC_PI_4)]]),
            GateKind::Tdg => {
                single([[ONE, ZERO], [ZERO, Amplitude::from_polar(1.0, -FRAC_PI_4)]])
            }
            GateKind::Rx => {
                let (s, co) = (p(0) / 2.0).sin_cos();
                single([[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]])
            }
            GateKind::Ry => {
                let (s, co) = (p(0) / 2.0).sin_cos();
                single([[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]])
            }
            GateKind::Rz => {
                let half = p(0) / 2.0;
                single([
                    [Amplitude::from_polar(1.0, -half), ZERO],
                    [ZERO, Amplitude::from_polar(1.0, half)],
                ])
            }
            GateKind::U1 => single([[ONE, ZERO], [ZERO, Amplitude::from_polar(1.0, p(0))]]),
            GateKind::U2 => single(u3_matrix(FRAC_PI_2, p(0), p(1))),
            GateKind::U3 => single(u3_matrix(p(0), p(1), p(2))),
            GateKind::Cx => GateMatrix::Two([
                [ONE, ZERO, ZERO, ZERO],
                [ZERO, ONE, ZERO, ZERO],
                [ZERO, ZERO, ZERO, ONE],
                [ZERO, ZERO, ONE, ZERO],
            ]),
            GateKind::Cz => GateMatrix::Two([
                [ONE, ZERO, ZERO, ZERO],
                [ZERO, ONE, ZERO, ZERO],
                [ZERO, ZERO, ONE, ZERO],
                [ZERO, ZERO, ZERO, c(-1.0, 0.0)],
            ]),
            GateKind::Swap => GateMatrix::Two([
                [ONE, ZERO, ZERO, ZERO],
                [ZERO, ZERO, ONE, ZERO],
                [ZERO, ONE, ZERO, ZERO],
                [ZERO, ZERO, ZERO, ONE],
            ]),
        }
    }

    /// The adjoint gate on the same qubits.
    pub fn inverse(&self) -> Gate {
        let p = |i: usize| self.params.get(i).copied().unwrap_or(0.0);
        let (kind, params) = match self.kind {
            GateKind::S => (GateKind::Sdg, vec![]),
            GateKind::Sdg => (GateKind::S, vec![]),
            GateKind::T => (GateKind::Tdg, vec![]),
            GateKind::Tdg => (GateKind::T, vec![]),
            GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::U1 => {
                (self.kind, vec![-p(0)])
            }
            GateKind::U2 => (GateKind::U3, vec![-FRAC_PI_2, -p(1), -p(0)]),
            GateKind::U3 => (GateKind::U3, vec![-p(0), -p(2), -p(1)]),
            kind => (kind, self.params.clone()),
        };
        Gate::new(kind, self.qubits.clone(), params)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if !self.params.is_empty() {
            let params: Vec<String> = self.params.iter().map(|p| format!("{p:?}")).collect();
            write!(f, "({})", params.join(","))?;
        }
        let qubits: Vec<String> = self.qubits.iter().map(|q| q.to_string()).collect();
        write!(f, " {}", qubits.join(","))
    }
}

impl GateMatrix {
    /// Conjugate transpose.
    pub fn adjoint(&self) -> GateMatrix {
        match self {
            GateMatrix::Single(m) => {
                let mut out = [[ZERO; 2]; 2];
                for (r, row) in out.iter_mut().enumerate() {
                    for (col, v) in row.iter_mut().enumerate() {
                        *v = m[col][r].conj();
                    }
                }
                GateMatrix::Single(out)
            }
            GateMatrix::Two(m) => {
                let mut out = [[ZERO; 4]; 4];
                for (r, row) in out.iter_mut().enumerate() {
                    for (col, v) in row.iter_mut().enumerate() {
                        *v = m[col][r].conj();
                    }
                }
                GateMatrix::Two(out)
            }
        }
    }

    /// Max-norm of `M·M† − I`.
    pub fn unitarity_defect(&self) -> f64 {
        fn defect<const N: usize>(m: &[[Amplitude; N]; N]) -> f64 {
            let mut worst = 0.0f64;
            for r in 0..N {
                for col in 0..N {
                    let mut acc = ZERO;
                    for (a, b) in m[r].iter().zip(&m[col]) {
                        acc += a * b.conj();
                    }
                    if r == col {
                        acc -= ONE;
                    }
                    worst = worst.max(acc.re.abs()).max(acc.im.abs());
                }
            }
            worst
        }
        match self {
            GateMatrix::Single(m) => defect(m),
            GateMatrix::Two(m) => defect(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("qubit {qubit} out of range (register has {num_qubits} qubits)")]
    QubitOutOfRange { qubit: usize, num_qubits: usize },
    #[error("duplicate qubit {0}")]
    DuplicateQubit(usize),
    #[error("{kind} acts on {expected} qubit(s), got {found}")]
    Arity {
        kind: GateKind,
        expected: usize,
        found: usize,
    },
    #[error("{kind} takes {expected} parameter(s), got {found}")]
    ParamCount {
        kind: GateKind,
        expected: usize,
        found: usize,
    },
    #[error("non-finite parameter {0}")]
    NonFiniteParam(f64),
}

/// A violation found by [`Circuit::validate`], tagged with the gate position.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("circuit must have at least one qubit")]
    NoQubits,
    #[error("gate {index} ({gate}): {error}")]
    Gate {
        index: usize,
        gate: String,
        error: GateError,
    },
}

/// An ordered gate list over `num_qubits` qubits.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Circuit {
    pub num_qubits: usize,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Self {
        Circuit {
            num_qubits,
            gates: Vec::new(),
        }
    }

    pub fn with_gates(num_qubits: usize, gates: Vec<Gate>) -> Self {
        Circuit { num_qubits, gates }
    }

    pub fn push(&mut self, gate: Gate) -> &mut Self {
        self.gates.push(gate);
        self
    }

    /// Collects every violation; never stops at the first one.
    pub fn validate(&self) -> Result<(), Vec<CircuitError>> {
        let mut errors = Vec::new();
        if self.num_qubits == 0 {
            errors.push(CircuitError::NoQubits);
        }
        for (index, gate) in self.gates.iter().enumerate() {
            if let Err(errs) = gate.validate(self.num_qubits) {
                errors.extend(errs.into_iter().map(|error| CircuitError::Gate {
                    index,
                    gate: gate.to_string(),
                    error,
                }));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Reversed gate order with every gate inverted.
    pub fn inverse(&self) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }
}

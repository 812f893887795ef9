//! OpenQASM 2.0 subset: one `qreg`, the supported gate set, and angle
//! expressions built from numeric literals, `pi`, `*`, `/` and unary minus.
//! `creg`, `measure` and `barrier` are accepted and ignored with a warning.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};

use thiserror::Error;

use super::{Circuit, Gate, GateKind};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct QasmError {
    pub line: usize,
    pub column: usize,
    pub kind: QasmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QasmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unsupported gate name: {0}")]
    UnsupportedGate(String),
    #[error("unsupported statement: {0}")]
    UnsupportedStatement(String),
    #[error("qubit index {index} out of range for register {register}[{size}]")]
    QubitOutOfRange {
        register: String,
        index: usize,
        size: usize,
    },
    #[error("unknown register {0}")]
    UnknownRegister(String),
    #[error("multiple qreg declarations are not supported")]
    MultipleQregs,
    #[error("no qreg declared")]
    MissingQreg,
    #[error("{0}")]
    InvalidGate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QasmWarning {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for QasmWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// A parsed program: the circuit plus warnings for ignored statements.
#[derive(Debug, Clone, PartialEq)]
pub struct QasmProgram {
    pub circuit: Circuit,
    pub warnings: Vec<QasmWarning>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    Sym(char),
    Arrow,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Number(v) => write!(f, "number {v}"),
            Tok::Str(s) => write!(f, "\"{s}\""),
            Tok::Sym(c) => write!(f, "'{c}'"),
            Tok::Arrow => f.write_str("'->'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, QasmError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, msg: String| QasmError {
        line,
        column,
        kind: QasmErrorKind::Syntax(msg),
    };
    while i < chars.len() {
        let ch = chars[i];
        let (start_line, start_col) = (line, col);
        if ch == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if ch.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if ch == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let begin = i;
        let tok = if ch.is_ascii_alphabetic() || ch == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[begin..i].iter().collect())
        } else if ch.is_ascii_digit() || (ch == '.' && chars.get(i + 1).is_some_and(|c| c.is_ascii_digit())) {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[begin..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| err(start_line, start_col, format!("malformed number '{text}'")))?;
            Tok::Number(value)
        } else if ch == '"' {
            i += 1;
            while i < chars.len() && chars[i] != '"' && chars[i] != '\n' {
                i += 1;
            }
            if chars.get(i) != Some(&'"') {
                return Err(err(start_line, start_col, "unterminated string".into()));
            }
            i += 1;
            Tok::Str(chars[begin + 1..i - 1].iter().collect())
        } else if ch == '-' && chars.get(i + 1) == Some(&'>') {
            i += 2;
            Tok::Arrow
        } else if ";,[]()*/-+{}=<>".contains(ch) {
            i += 1;
            Tok::Sym(ch)
        } else {
            return Err(err(start_line, start_col, format!("unexpected character '{ch}'")));
        };
        col += i - begin;
        out.push(Spanned {
            tok,
            line: start_line,
            column: start_col,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    qreg: Option<(String, usize)>,
    gates: Vec<Gate>,
    warnings: Vec<QasmWarning>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, at: &Spanned, kind: QasmErrorKind) -> QasmError {
        QasmError {
            line: at.line,
            column: at.column,
            kind,
        }
    }

    fn syntax(&self, at: &Spanned, msg: impl Into<String>) -> QasmError {
        self.error_at(at, QasmErrorKind::Syntax(msg.into()))
    }

    fn expect_sym(&mut self, sym: char) -> Result<(), QasmError> {
        let t = self.next();
        if t.tok == Tok::Sym(sym) {
            Ok(())
        } else {
            Err(self.syntax(&t, format!("expected '{sym}', found {}", t.tok)))
        }
    }

    fn expect_ident(&mut self) -> Result<(String, Spanned), QasmError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(self.syntax(&t, format!("expected identifier, found {other}"))),
        }
    }

    fn expect_index(&mut self) -> Result<usize, QasmError> {
        let t = self.next();
        match t.tok {
            Tok::Number(v) if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(v as usize),
            ref other => Err(self.syntax(&t, format!("expected non-negative integer, found {other}"))),
        }
    }

    fn skip_statement(&mut self) -> Result<(), QasmError> {
        loop {
            let t = self.next();
            match t.tok {
                Tok::Sym(';') => return Ok(()),
                Tok::Eof => return Err(self.syntax(&t, "expected ';', found end of input")),
                _ => {}
            }
        }
    }

    fn header(&mut self) -> Result<(), QasmError> {
        let t = self.next();
        if t.tok != Tok::Ident("OPENQASM".into()) {
            return Err(self.syntax(&t, format!("expected 'OPENQASM 2.0;' header, found {}", t.tok)));
        }
        let v = self.next();
        match v.tok {
            Tok::Number(x) if (2.0..3.0).contains(&x) => {}
            ref other => {
                return Err(self.syntax(&v, format!("unsupported OpenQASM version {other}")));
            }
        }
        self.expect_sym(';')
    }

    fn parse(mut self) -> Result<QasmProgram, QasmError> {
        self.header()?;
        loop {
            let t = self.peek().clone();
            let word = match &t.tok {
                Tok::Eof => break,
                Tok::Ident(w) => w.clone(),
                other => return Err(self.syntax(&t, format!("expected statement, found {other}"))),
            };
            match word.as_str() {
                "include" => {
                    self.next();
                    let f = self.next();
                    let Tok::Str(name) = f.tok.clone() else {
                        return Err(self.syntax(&f, format!("expected file name, found {}", f.tok)));
                    };
                    if name != "qelib1.inc" {
                        self.warn(&t, format!("include \"{name}\" ignored"));
                    }
                    self.expect_sym(';')?;
                }
                "qreg" => {
                    self.next();
                    if self.qreg.is_some() {
                        return Err(self.error_at(&t, QasmErrorKind::MultipleQregs));
                    }
                    let (name, _) = self.expect_ident()?;
                    self.expect_sym('[')?;
                    let size_tok = self.peek().clone();
                    let size = self.expect_index()?;
                    if size == 0 {
                        return Err(self.syntax(&size_tok, "qreg size must be positive"));
                    }
                    self.expect_sym(']')?;
                    self.expect_sym(';')?;
                    self.qreg = Some((name, size));
                }
                "creg" | "measure" | "barrier" => {
                    self.next();
                    self.skip_statement()?;
                    self.warn(&t, format!("'{word}' statement ignored"));
                }
                "gate" | "opaque" | "if" | "reset" => {
                    return Err(self.error_at(&t, QasmErrorKind::UnsupportedStatement(word)));
                }
                _ => self.gate_statement()?,
            }
        }
        let Some((_, num_qubits)) = self.qreg else {
            let eof = self.peek().clone();
            return Err(self.error_at(&eof, QasmErrorKind::MissingQreg));
        };
        Ok(QasmProgram {
            circuit: Circuit {
                num_qubits,
                gates: self.gates,
            },
            warnings: self.warnings,
        })
    }

    fn warn(&mut self, at: &Spanned, message: String) {
        self.warnings.push(QasmWarning {
            line: at.line,
            message,
        });
    }

    fn gate_statement(&mut self) -> Result<(), QasmError> {
        let (name, name_tok) = self.expect_ident()?;
        let kind = GateKind::from_qasm_name(&name)
            .ok_or_else(|| self.error_at(&name_tok, QasmErrorKind::UnsupportedGate(name.clone())))?;
        let mut params = Vec::new();
        if self.peek().tok == Tok::Sym('(') {
            self.next();
            if self.peek().tok != Tok::Sym(')') {
                params.push(self.expr()?);
                while self.peek().tok == Tok::Sym(',') {
                    self.next();
                    params.push(self.expr()?);
                }
            }
            self.expect_sym(')')?;
        }
        let mut qubits = Vec::new();
        loop {
            let (reg, reg_tok) = self.expect_ident()?;
            let Some((qname, size)) = self.qreg.clone() else {
                return Err(self.error_at(&reg_tok, QasmErrorKind::UnknownRegister(reg)));
            };
            if reg != qname {
                return Err(self.error_at(&reg_tok, QasmErrorKind::UnknownRegister(reg)));
            }
            if self.peek().tok != Tok::Sym('[') {
                let t = self.peek().clone();
                return Err(self.syntax(&t, "whole-register gate arguments are not supported; expected '['"));
            }
            self.next();
            let idx_tok = self.peek().clone();
            let index = self.expect_index()?;
            if index >= size {
                return Err(self.error_at(
                    &idx_tok,
                    QasmErrorKind::QubitOutOfRange {
                        register: qname,
                        index,
                        size,
                    },
                ));
            }
            self.expect_sym(']')?;
            qubits.push(index);
            if self.peek().tok == Tok::Sym(',') {
                self.next();
            } else {
                break;
            }
        }
        self.expect_sym(';')?;
        let gate = Gate::new(kind, qubits, params);
        if let Err(errs) = gate.validate(usize::MAX) {
            let msg: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
            return Err(self.error_at(&name_tok, QasmErrorKind::InvalidGate(msg.join("; "))));
        }
        self.gates.push(gate);
        Ok(())
    }

    // expr := '-' expr | atom (('*' | '/') atom)*
    fn expr(&mut self) -> Result<f64, QasmError> {
        if self.peek().tok == Tok::Sym('-') {
            self.next();
            return Ok(-self.expr()?);
        }
        let mut value = self.atom()?;
        loop {
            match self.peek().tok {
                Tok::Sym('*') => {
                    self.next();
                    value *= self.atom()?;
                }
                Tok::Sym('/') => {
                    self.next();
                    let at = self.peek().clone();
                    let d = self.atom()?;
                    if d == 0.0 {
                        return Err(self.syntax(&at, "division by zero"));
                    }
                    value /= d;
                }
                _ => return Ok(value),
            }
        }
    }

    fn atom(&mut self) -> Result<f64, QasmError> {
        let t = self.next();
        match &t.tok {
            Tok::Number(v) => Ok(*v),
            Tok::Ident(s) if s == "pi" => Ok(PI),
            other => Err(self.syntax(&t, format!("expected angle literal or 'pi', found {other}"))),
        }
    }
}

/// Parses the supported OpenQASM 2.0 subset.
pub fn parse_qasm(text: &str) -> Result<QasmProgram, QasmError> {
    let toks = lex(text)?;
    Parser {
        toks,
        pos: 0,
        qreg: None,
        gates: Vec::new(),
        warnings: Vec::new(),
    }
    .parse()
}

/// Prints a circuit in the same subset; angles use shortest round-trip
/// float formatting so `parse_qasm(to_qasm(c))` reproduces `c` exactly.
pub fn to_qasm(circuit: &Circuit) -> String {
    let mut out = String::new();
    out.push_str("OPENQASM 2.0;\ninclude \"qelib1.inc\";\n");
    let _ = writeln!(out, "qreg q[{}];", circuit.num_qubits);
    for g in &circuit.gates {
        out.push_str(g.kind.qasm_name());
        if !g.params.is_empty() {
            let params: Vec<String> = g.params.iter().map(|p| format!("{p:?}")).collect();
            let _ = write!(out, "({})", params.join(","));
        }
        let args: Vec<String> = g.qubits.iter().map(|q| format!("q[{q}]")).collect();
        let _ = writeln!(out, " {};", args.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::generators;
    use proptest::prelude::*;

    #[test]
    fn bell_pair() {
        let p = parse_qasm("OPENQASM 2.0; qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        assert_eq!(
            p.circuit,
            Circuit::with_gates(2, vec![Gate::h(0), Gate::cx(0, 1)])
        );
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn pi_over_two() {
        let p = parse_qasm("OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[1];\nrz(pi/2) q[0];").unwrap();
        assert_eq!(p.circuit.gates, vec![Gate::rz(0, std::f64::consts::FRAC_PI_2)]);
    }

    #[test]
    fn angle_grammar() {
        let src = "OPENQASM 2.0; qreg q[1]; u3(3*pi/4, -pi, 0.25) q[0]; rx(-1e-3) q[0]; u1(2) q[0];";
        let g = parse_qasm(src).unwrap().circuit.gates;
        assert_eq!(g[0].params, vec![3.0 * PI / 4.0, -PI, 0.25]);
        assert_eq!(g[1].params, vec![-1e-3]);
        assert_eq!(g[2].params, vec![2.0]);
    }

    #[test]
    fn unsupported_gate() {
        let e = parse_qasm("OPENQASM 2.0; qreg q[3]; ccx q[0],q[1],q[2];").unwrap_err();
        assert_eq!(e.kind, QasmErrorKind::UnsupportedGate("ccx".into()));
        assert!(e.to_string().contains("unsupported gate name: ccx"));
    }

    #[test]
    fn syntax_error_reports_position() {
        let e = parse_qasm("OPENQASM 2.0;\nqreg q[2];\nh q[0]\ncx q[0],q[1];").unwrap_err();
        assert!(matches!(e.kind, QasmErrorKind::Syntax(_)));
        assert_eq!((e.line, e.column), (4, 1));
    }

    #[test]
    fn out_of_range_and_multiple_qregs() {
        let e = parse_qasm("OPENQASM 2.0; qreg q[2]; x q[2];").unwrap_err();
        assert!(matches!(e.kind, QasmErrorKind::QubitOutOfRange { index: 2, size: 2, .. }));
        let e = parse_qasm("OPENQASM 2.0; qreg q[2]; qreg r[2];").unwrap_err();
        assert_eq!(e.kind, QasmErrorKind::MultipleQregs);
        let e = parse_qasm("OPENQASM 2.0; h q[0];").unwrap_err();
        assert!(matches!(e.kind, QasmErrorKind::UnknownRegister(_)));
        let e = parse_qasm("OPENQASM 2.0;").unwrap_err();
        assert_eq!(e.kind, QasmErrorKind::MissingQreg);
    }

    #[test]
    fn bad_arity_and_params() {
        assert!(parse_qasm("OPENQASM 2.0; qreg q[2]; cx q[0];").is_err());
        assert!(parse_qasm("OPENQASM 2.0; qreg q[2]; rz q[0];").is_err());
        assert!(parse_qasm("OPENQASM 2.0; qreg q[2]; cx q[1],q[1];").is_err());
        assert!(parse_qasm("qreg q[2];").is_err());
    }

    #[test]
    fn measurement_statements_are_ignored_with_warnings() {
        let src = "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[2];\ncreg c[2];\n// bell\nh q[0];\nbarrier q;\ncx q[0],q[1];\nmeasure q -> c;\nmeasure q[0] -> c[0];\n";
        let p = parse_qasm(src).unwrap();
        assert_eq!(p.circuit.gates.len(), 2);
        assert_eq!(p.warnings.len(), 4);
        assert_eq!(p.warnings[0].line, 4);
    }

    #[test]
    fn gate_order_is_source_order() {
        let c = generators::random(6, 80, 11);
        let parsed = parse_qasm(&to_qasm(&c)).unwrap().circuit;
        assert_eq!(parsed.gates, c.gates);
    }

    proptest! {
        #[test]
        fn print_parse_is_stable(n in 2usize..10, depth in 0usize..60, seed in any::<u64>()) {
            let c = generators::random(n, depth, seed);
            let once = parse_qasm(&to_qasm(&c)).unwrap().circuit;
            let twice = parse_qasm(&to_qasm(&once)).unwrap().circuit;
            prop_assert_eq!(&once, &c);
            prop_assert_eq!(once, twice);
        }
    }
}

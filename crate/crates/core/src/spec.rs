//! Parsed system description.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::expr::Expr;

/// Default lower bound on guard magnitudes for admissible points.
pub const MIN_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub expr: Expr,
    pub threshold: f64,
}

/// Per-coordinate sampling intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainBox {
    pub q: Vec<(f64, f64)>,
    pub v: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn standard(dim: usize) -> Self {
        DomainBox {
            q: vec![(-2.0, 2.0); dim],
            v: vec![(-1.0, 1.0); dim],
        }
    }

    pub fn contains(&self, q: &[f64], v: &[f64]) -> bool {
        let inside = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
        q.iter().zip(&self.q).all(|(&x, &b)| inside(x, b))
            && v.iter().zip(&self.v).all(|(&x, &b)| inside(x, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    /// 0-based half-open index ranges into q.
    pub slices: BTreeMap<String, (usize, usize)>,
    pub lagrangian: Expr,
    pub domain: DomainBox,
    pub guards: Vec<Guard>,
}

impl SystemSpec {
    pub fn parse(text: &str) -> crate::Result<SystemSpec> {
        crate::parse::parse_spec(text)
    }

    /// Parses a scalar expression against this system's names.
    pub fn parse_expr(&self, text: &str) -> crate::Result<Expr> {
        crate::parse::parse_expr_in(self, text)
    }

    /// Canonical text form; parsing it gives back an identical spec.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dim {};", self.dim)?;
        for (name, value) in &self.params {
            writeln!(f, "param {name} = {value};")?;
        }
        for (name, (lo, hi)) in &self.slices {
            writeln!(f, "slice {name} = q[{}..{}];", lo + 1, hi)?;
        }
        for (i, (lo, hi)) in self.domain.q.iter().enumerate() {
            writeln!(f, "box q[{}] {lo} {hi};", i + 1)?;
        }
        for (i, (lo, hi)) in self.domain.v.iter().enumerate() {
            writeln!(f, "box v[{}] {lo} {hi};", i + 1)?;
        }
        for g in &self.guards {
            writeln!(f, "guard {} >= {};", g.expr, g.threshold)?;
        }
        writeln!(f, "L = {};", self.lagrangian)
    }
}

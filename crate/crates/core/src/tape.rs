//! Straight-line evaluation of a set of expressions with common
//! subexpressions shared across all outputs.

use std::collections::{BTreeMap, HashMap};

use num_rational::Rational64;

use crate::expr::{rational_pow, Expr, Node};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Q(usize),
    V(usize),
    Neg(usize),
    Sqrt(usize),
    Sin(usize),
    Cos(usize),
    Ln(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Powi(usize, i32),
    Pow(usize, Rational64),
}

#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    outputs: Vec<usize>,
}

impl Tape {
    /// Compiles `roots` into one tape. Parameters are replaced by their
    /// values; an unknown parameter evaluates to NaN.
    pub fn compile(roots: &[Expr], params: &BTreeMap<String, f64>) -> Tape {
        let mut tape = Tape {
            ops: Vec::new(),
            outputs: Vec::with_capacity(roots.len()),
        };
        let mut slots: HashMap<Expr, usize> = HashMap::new();
        for root in roots {
            let slot = tape.emit(root, params, &mut slots);
            tape.outputs.push(slot);
        }
        tape
    }

    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn emit(
        &mut self,
        e: &Expr,
        params: &BTreeMap<String, f64>,
        slots: &mut HashMap<Expr, usize>,
    ) -> usize {
        if let Some(&s) = slots.get(e) {
            return s;
        }
        let op = match e.node() {
            Node::Const(c) => Op::Const(*c),
            Node::Param(p) => Op::Const(params.get(p).copied().unwrap_or(f64::NAN)),
            Node::Q(i) => Op::Q(*i),
            Node::V(i) => Op::V(*i),
            Node::Neg(a) => Op::Neg(self.emit(a, params, slots)),
            Node::Sqrt(a) => Op::Sqrt(self.emit(a, params, slots)),
            Node::Sin(a) => Op::Sin(self.emit(a, params, slots)),
            Node::Cos(a) => Op::Cos(self.emit(a, params, slots)),
            Node::Ln(a) => Op::Ln(self.emit(a, params, slots)),
            Node::Add(a, b) => Op::Add(self.emit(a, params, slots), self.emit(b, params, slots)),
            Node::Sub(a, b) => Op::Sub(self.emit(a, params, slots), self.emit(b, params, slots)),
            Node::Mul(a, b) => Op::Mul(self.emit(a, params, slots), self.emit(b, params, slots)),
            Node::Div(a, b) => Op::Div(self.emit(a, params, slots), self.emit(b, params, slots)),
            Node::Pow(a, r) => {
                let s = self.emit(a, params, slots);
                if r.is_integer() && r.numer().abs() <= i32::MAX as i64 {
                    Op::Powi(s, *r.numer() as i32)
                } else {
                    Op::Pow(s, *r)
                }
            }
        };
        let slot = self.push(op);
        slots.insert(e.clone(), slot);
        slot
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    /// Evaluates every output at (q, v).
    pub fn eval(&self, q: &[f64], v: &[f64]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.ops.len());
        self.eval_into(q, v, &mut buf)
    }

    pub fn eval_into(&self, q: &[f64], v: &[f64], buf: &mut Vec<f64>) -> Vec<f64> {
        buf.clear();
        for op in &self.ops {
            let x = match *op {
                Op::Const(c) => c,
                Op::Q(i) => q[i],
                Op::V(i) => v[i],
                Op::Neg(a) => -buf[a],
                Op::Sqrt(a) => buf[a].sqrt(),
                Op::Sin(a) => buf[a].sin(),
                Op::Cos(a) => buf[a].cos(),
                Op::Ln(a) => buf[a].ln(),
                Op::Add(a, b) => buf[a] + buf[b],
                Op::Sub(a, b) => buf[a] - buf[b],
                Op::Mul(a, b) => buf[a] * buf[b],
                Op::Div(a, b) => buf[a] / buf[b],
                Op::Powi(a, n) => buf[a].powi(n),
                Op::Pow(a, r) => rational_pow(buf[a], r),
            };
            buf.push(x);
        }
        self.outputs.iter().map(|&s| buf[s]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{add, mul, sqrt};

    #[test]
    fn shared_subexpressions_are_emitted_once() {
        let x = Expr::q(0);
        let s = sqrt(&add(&x, &Expr::v(0)));
        let roots = [mul(&s, &s), add(&s, &x)];
        let tape = Tape::compile(&roots, &BTreeMap::new());
        // q, v, q+v, sqrt, s^2, s+q
        assert_eq!(tape.len(), 6);
        let out = tape.eval(&[3.0], &[1.0]);
        assert!((out[0] - 4.0).abs() < 1e-15);
        assert!((out[1] - 5.0).abs() < 1e-15);
    }

    #[test]
    fn parameters_resolve_at_compile_time() {
        let e = mul(&Expr::param("k"), &Expr::q(0));
        let mut p = BTreeMap::new();
        p.insert("k".to_string(), 2.5);
        assert_eq!(
            Tape::compile(std::slice::from_ref(&e), &p).eval(&[2.0], &[]),
            vec![5.0]
        );
        assert!(Tape::compile(&[e], &BTreeMap::new()).eval(&[2.0], &[])[0].is_nan());
    }
}

//! Immutable expression trees with structural hashing.
//!
//! Nodes are shared through `Arc`; each node caches its structural hash so
//! that equality checks and memo tables stay cheap on large derivative DAGs.
//! The free functions `add`, `mul`, ... are smart constructors that apply
//! local simplifications; `Expr::raw` builds a node verbatim (the parser uses
//! it so that printing round-trips exactly).

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_rational::Rational64;

use crate::tape::Tape;

/// A coordinate or velocity slot, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Q(usize),
    V(usize),
}

#[derive(Debug, Clone)]
pub enum Node {
    Const(f64),
    Param(String),
    Q(usize),
    V(usize),
    Neg(Expr),
    Sqrt(Expr),
    Sin(Expr),
    Cos(Expr),
    Ln(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Rational64),
}

struct Inner {
    node: Node,
    hash: u64,
}

#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        use Node::*;
        match (self, other) {
            (Const(a), Const(b)) => a.to_bits() == b.to_bits(),
            (Param(a), Param(b)) => a == b,
            (Q(a), Q(b)) | (V(a), V(b)) => a == b,
            (Neg(a), Neg(b))
            | (Sqrt(a), Sqrt(b))
            | (Sin(a), Sin(b))
            | (Cos(a), Cos(b))
            | (Ln(a), Ln(b)) => a == b,
            (Add(a, b), Add(c, d))
            | (Sub(a, b), Sub(c, d))
            | (Mul(a, b), Mul(c, d))
            | (Div(a, b), Div(c, d)) => a == c && b == d,
            (Pow(a, r), Pow(b, s)) => r == s && a == b,
            _ => false,
        }
    }
}

fn node_hash(node: &Node) -> u64 {
    let mut h = DefaultHasher::new();
    std::mem::discriminant(node).hash(&mut h);
    match node {
        Node::Const(c) => c.to_bits().hash(&mut h),
        Node::Param(p) => p.hash(&mut h),
        Node::Q(i) | Node::V(i) => i.hash(&mut h),
        Node::Neg(a) | Node::Sqrt(a) | Node::Sin(a) | Node::Cos(a) | Node::Ln(a) => {
            a.0.hash.hash(&mut h)
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            a.0.hash.hash(&mut h);
            b.0.hash.hash(&mut h);
        }
        Node::Pow(a, r) => {
            a.0.hash.hash(&mut h);
            r.hash(&mut h);
        }
    }
    h.finish()
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash && self.0.node == other.0.node)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl Expr {
    /// Builds a node without any simplification.
    #[allow(clippy::redundant_guards)]
    pub fn raw(node: Node) -> Expr {
        let node = match node {
            // keep -0.0 and 0.0 structurally identical
            Node::Const(c) if c == 0.0 => Node::Const(0.0),
            n => n,
        };
        let hash = node_hash(&node);
        Expr(Arc::new(Inner { node, hash }))
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    pub fn constant(c: f64) -> Expr {
        Expr::raw(Node::Const(c))
    }

    pub fn param(name: &str) -> Expr {
        Expr::raw(Node::Param(name.to_string()))
    }

    pub fn q(i: usize) -> Expr {
        Expr::raw(Node::Q(i))
    }

    pub fn v(i: usize) -> Expr {
        Expr::raw(Node::V(i))
    }

    pub fn var(var: Var) -> Expr {
        match var {
            Var::Q(i) => Expr::q(i),
            Var::V(i) => Expr::v(i),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_const(&self, c: f64) -> bool {
        self.as_const() == Some(c)
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.clone()) {
                continue;
            }
            stack.extend(e.children());
        }
        seen.len()
    }

    pub fn children(&self) -> Vec<Expr> {
        match self.node() {
            Node::Const(_) | Node::Param(_) | Node::Q(_) | Node::V(_) => vec![],
            Node::Neg(a)
            | Node::Sqrt(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Ln(a)
            | Node::Pow(a, _) => {
                vec![a.clone()]
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                vec![a.clone(), b.clone()]
            }
        }
    }

    /// Evaluates with parameters looked up in `params`.
    pub fn eval(&self, q: &[f64], v: &[f64], params: &BTreeMap<String, f64>) -> f64 {
        Tape::compile(std::slice::from_ref(self), params).eval(q, v)[0]
    }
}

/// Real-valued rational power; odd denominators extend to negative bases.
pub fn rational_pow(x: f64, r: Rational64) -> f64 {
    let (n, d) = (*r.numer(), *r.denom());
    if d == 1 {
        return x.powi(n as i32);
    }
    if d == 2 {
        return x.sqrt().powi(n as i32);
    }
    if x < 0.0 && d % 2 == 1 {
        let mag = (-x).powf(n as f64 / d as f64);
        if n % 2 == 0 {
            mag
        } else {
            -mag
        }
    } else {
        x.powf(n as f64 / d as f64)
    }
}

pub fn constant(c: f64) -> Expr {
    Expr::constant(c)
}

pub fn neg(a: &Expr) -> Expr {
    match a.node() {
        Node::Const(c) => constant(-c),
        Node::Neg(x) => x.clone(),
        _ => Expr::raw(Node::Neg(a.clone())),
    }
}

pub fn add(a: &Expr, b: &Expr) -> Expr {
    match (a.node(), b.node()) {
        (Node::Const(x), Node::Const(y)) => constant(x + y),
        _ if a.is_const(0.0) => b.clone(),
        _ if b.is_const(0.0) => a.clone(),
        (_, Node::Neg(y)) => sub(a, y),
        (Node::Neg(x), _) => sub(b, x),
        _ if a == b => mul(&constant(2.0), a),
        _ => Expr::raw(Node::Add(a.clone(), b.clone())),
    }
}

pub fn sub(a: &Expr, b: &Expr) -> Expr {
    match (a.node(), b.node()) {
        (Node::Const(x), Node::Const(y)) => constant(x - y),
        _ if b.is_const(0.0) => a.clone(),
        _ if a.is_const(0.0) => neg(b),
        _ if a == b => constant(0.0),
        (_, Node::Neg(y)) => add(a, y),
        _ => Expr::raw(Node::Sub(a.clone(), b.clone())),
    }
}

pub fn mul(a: &Expr, b: &Expr) -> Expr {
    match (a.node(), b.node()) {
        (Node::Const(x), Node::Const(y)) => constant(x * y),
        _ if a.is_const(0.0) || b.is_const(0.0) => constant(0.0),
        _ if a.is_const(1.0) => b.clone(),
        _ if b.is_const(1.0) => a.clone(),
        _ if a.is_const(-1.0) => neg(b),
        _ if b.is_const(-1.0) => neg(a),
        // constants to the front so that nested factors can merge
        (_, Node::Const(_)) => mul(b, a),
        (Node::Const(x), Node::Mul(c, y)) if c.as_const().is_some() => {
            mul(&constant(x * c.as_const().unwrap()), y)
        }
        (Node::Neg(x), Node::Neg(y)) => mul(x, y),
        (Node::Neg(x), _) => neg(&mul(x, b)),
        (_, Node::Neg(y)) => neg(&mul(a, y)),
        _ if a == b => pow(a, Rational64::from_integer(2)),
        _ => Expr::raw(Node::Mul(a.clone(), b.clone())),
    }
}

pub fn div(a: &Expr, b: &Expr) -> Expr {
    match (a.node(), b.node()) {
        (Node::Const(x), Node::Const(y)) if *y != 0.0 => constant(x / y),
        _ if a.is_const(0.0) => constant(0.0),
        _ if b.is_const(1.0) => a.clone(),
        _ if b.is_const(-1.0) => neg(a),
        _ if a == b => constant(1.0),
        (Node::Neg(x), Node::Neg(y)) => div(x, y),
        _ => Expr::raw(Node::Div(a.clone(), b.clone())),
    }
}

pub fn pow(a: &Expr, r: Rational64) -> Expr {
    if r == Rational64::from_integer(0) {
        return constant(1.0);
    }
    if r == Rational64::from_integer(1) {
        return a.clone();
    }
    match a.node() {
        Node::Const(c) => {
            let value = rational_pow(*c, r);
            if value.is_finite() {
                constant(value)
            } else {
                Expr::raw(Node::Pow(a.clone(), r))
            }
        }
        // (x^s)^r = x^(rs) holds for integer exponents only
        Node::Pow(x, s) if s.is_integer() && r.is_integer() => pow(x, s * r),
        _ => Expr::raw(Node::Pow(a.clone(), r)),
    }
}

pub fn sqrt(a: &Expr) -> Expr {
    match a.node() {
        Node::Const(c) if *c >= 0.0 => constant(c.sqrt()),
        _ => Expr::raw(Node::Sqrt(a.clone())),
    }
}

pub fn sin(a: &Expr) -> Expr {
    match a.node() {
        Node::Const(c) => constant(c.sin()),
        _ => Expr::raw(Node::Sin(a.clone())),
    }
}

pub fn cos(a: &Expr) -> Expr {
    match a.node() {
        Node::Const(c) => constant(c.cos()),
        _ => Expr::raw(Node::Cos(a.clone())),
    }
}

pub fn ln(a: &Expr) -> Expr {
    match a.node() {
        Node::Const(c) if *c > 0.0 => constant(c.ln()),
        _ => Expr::raw(Node::Ln(a.clone())),
    }
}

impl std::ops::Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        add(self, rhs)
    }
}

impl std::ops::Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        sub(self, rhs)
    }
}

impl std::ops::Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        mul(self, rhs)
    }
}

impl std::ops::Div for &Expr {
    type Output = Expr;
    fn div(self, rhs: &Expr) -> Expr {
        div(self, rhs)
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(self)
    }
}

/// Symbolic partial derivative, memoized over shared subtrees.
pub fn differentiate(e: &Expr, wrt: Var) -> Expr {
    let mut memo = HashMap::new();
    diff_memo(e, wrt, &mut memo)
}

fn diff_memo(e: &Expr, wrt: Var, memo: &mut HashMap<Expr, Expr>) -> Expr {
    if let Some(d) = memo.get(e) {
        return d.clone();
    }
    let zero = constant(0.0);
    let d = match e.node() {
        Node::Const(_) | Node::Param(_) => zero,
        Node::Q(i) => constant(if wrt == Var::Q(*i) { 1.0 } else { 0.0 }),
        Node::V(i) => constant(if wrt == Var::V(*i) { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(&diff_memo(a, wrt, memo)),
        Node::Sqrt(a) => {
            let da = diff_memo(a, wrt, memo);
            if da.is_const(0.0) {
                zero
            } else {
                div(&da, &mul(&constant(2.0), e))
            }
        }
        Node::Sin(a) => mul(&cos(a), &diff_memo(a, wrt, memo)),
        Node::Cos(a) => neg(&mul(&sin(a), &diff_memo(a, wrt, memo))),
        Node::Ln(a) => div(&diff_memo(a, wrt, memo), a),
        Node::Add(a, b) => add(&diff_memo(a, wrt, memo), &diff_memo(b, wrt, memo)),
        Node::Sub(a, b) => sub(&diff_memo(a, wrt, memo), &diff_memo(b, wrt, memo)),
        Node::Mul(a, b) => {
            let da = diff_memo(a, wrt, memo);
            let db = diff_memo(b, wrt, memo);
            add(&mul(&da, b), &mul(a, &db))
        }
        Node::Div(a, b) => {
            let da = diff_memo(a, wrt, memo);
            let db = diff_memo(b, wrt, memo);
            // d(a/b) = da/b - (a/b) db/b
            sub(&div(&da, b), &mul(e, &div(&db, b)))
        }
        Node::Pow(a, r) => {
            let da = diff_memo(a, wrt, memo);
            if da.is_const(0.0) {
                zero
            } else {
                let rf = *r.numer() as f64 / *r.denom() as f64;
                mul(
                    &mul(&constant(rf), &pow(a, r - Rational64::from_integer(1))),
                    &da,
                )
            }
        }
    };
    memo.insert(e.clone(), d.clone());
    d
}

/// Bottom-up rebuild through the smart constructors.
pub fn simplify(e: &Expr) -> Expr {
    let mut memo = HashMap::new();
    simplify_memo(e, &mut memo)
}

fn simplify_memo(e: &Expr, memo: &mut HashMap<Expr, Expr>) -> Expr {
    if let Some(s) = memo.get(e) {
        return s.clone();
    }
    let mut go = |x: &Expr| simplify_memo(x, memo);
    let s = match e.node() {
        Node::Const(_) | Node::Param(_) | Node::Q(_) | Node::V(_) => e.clone(),
        Node::Neg(a) => neg(&go(a)),
        Node::Sqrt(a) => sqrt(&go(a)),
        Node::Sin(a) => sin(&go(a)),
        Node::Cos(a) => cos(&go(a)),
        Node::Ln(a) => ln(&go(a)),
        Node::Add(a, b) => {
            let (a, b) = (go(a), go(b));
            add(&a, &b)
        }
        Node::Sub(a, b) => {
            let (a, b) = (go(a), go(b));
            sub(&a, &b)
        }
        Node::Mul(a, b) => {
            let (a, b) = (go(a), go(b));
            mul(&a, &b)
        }
        Node::Div(a, b) => {
            let (a, b) = (go(a), go(b));
            div(&a, &b)
        }
        Node::Pow(a, r) => pow(&go(a), *r),
    };
    memo.insert(e.clone(), s.clone());
    s
}

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(_) => 3,
        Node::Pow(..) => 4,
        _ => 5,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if precedence(e) < min {
        write!(f, "(")?;
        write!(f, "{e}")?;
        write!(f, ")")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) if *c < 0.0 => write!(f, "({c})"),
            Node::Const(c) => write!(f, "{c}"),
            Node::Param(p) => write!(f, "{p}"),
            Node::Q(i) => write!(f, "q[{}]", i + 1),
            Node::V(i) => write!(f, "v[{}]", i + 1),
            Node::Neg(a) => {
                write!(f, "-")?;
                write_at(f, a, 4)
            }
            Node::Sqrt(a) => write!(f, "sqrt({a})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Ln(a) => write!(f, "ln({a})"),
            Node::Add(a, b) | Node::Sub(a, b) => {
                write_at(f, a, 1)?;
                write!(
                    f,
                    "{}",
                    if matches!(self.node(), Node::Add(..)) {
                        " + "
                    } else {
                        " - "
                    }
                )?;
                write_at(f, b, 2)
            }
            Node::Mul(a, b) | Node::Div(a, b) => {
                write_at(f, a, 2)?;
                write!(
                    f,
                    "{}",
                    if matches!(self.node(), Node::Mul(..)) {
                        "*"
                    } else {
                        "/"
                    }
                )?;
                write_at(f, b, 3)
            }
            Node::Pow(a, r) => {
                write_at(f, a, 5)?;
                if r.is_integer() && *r.numer() > 0 {
                    write!(f, "^{}", r.numer())
                } else if r.is_integer() {
                    write!(f, "^({})", r.numer())
                } else {
                    write!(f, "^({}/{})", r.numer(), r.denom())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn smart_constructors_apply_identities() {
        let x = Expr::q(0);
        let y = Expr::q(1);
        assert_eq!(add(&mul(&constant(0.0), &x), &y), y);
        assert_eq!(
            mul(&pow(&x, Rational64::from_integer(1)), &constant(1.0)),
            x
        );
        assert_eq!(neg(&neg(&x)), x);
        assert_eq!(sub(&x, &x), constant(0.0));
        assert_eq!(
            mul(&constant(2.0), &mul(&constant(3.0), &x)),
            mul(&constant(6.0), &x)
        );
    }

    #[test]
    fn derivative_of_half_square() {
        let e = mul(
            &constant(0.5),
            &pow(&Expr::v(0), Rational64::from_integer(2)),
        );
        assert_eq!(differentiate(&e, Var::V(0)), Expr::v(0));
        assert_eq!(differentiate(&e, Var::Q(0)), constant(0.0));
    }

    #[test]
    fn derivative_of_dot_is_twice_coordinate() {
        let mut dot = Expr::raw(Node::Mul(Expr::q(0), Expr::q(0)));
        for i in 1..3 {
            dot = Expr::raw(Node::Add(dot, Expr::raw(Node::Mul(Expr::q(i), Expr::q(i)))));
        }
        assert_eq!(
            differentiate(&dot, Var::Q(0)),
            mul(&constant(2.0), &Expr::q(0))
        );
    }

    #[test]
    fn quotient_and_chain_rules_numerically() {
        // f = sin(q1) / sqrt(q1^2 + q2), checked against a central difference
        let q1 = Expr::q(0);
        let q2 = Expr::q(1);
        let f = div(
            &sin(&q1),
            &sqrt(&add(&pow(&q1, Rational64::from_integer(2)), &q2)),
        );
        let df = differentiate(&f, Var::Q(0));
        let (a, b) = (0.7, 1.3);
        let h = 1e-6;
        let fd = (f.eval(&[a + h, b], &[], &no_params()) - f.eval(&[a - h, b], &[], &no_params()))
            / (2.0 * h);
        assert!((df.eval(&[a, b], &[], &no_params()) - fd).abs() < 1e-8);
    }

    #[test]
    fn rational_powers_of_negative_bases() {
        assert!((rational_pow(-8.0, Rational64::new(1, 3)) + 2.0).abs() < 1e-12);
        assert!((rational_pow(-8.0, Rational64::new(2, 3)) - 4.0).abs() < 1e-12);
        assert!(rational_pow(-4.0, Rational64::new(1, 2)).is_nan());
    }

    #[test]
    fn printing_uses_minimal_parentheses() {
        let a = Expr::q(0);
        let b = Expr::q(1);
        let c = Expr::v(0);
        let e = Expr::raw(Node::Sub(
            a.clone(),
            Expr::raw(Node::Add(b.clone(), c.clone())),
        ));
        assert_eq!(e.to_string(), "q[1] - (q[2] + v[1])");
        let e = Expr::raw(Node::Div(
            a.clone(),
            Expr::raw(Node::Mul(b.clone(), c.clone())),
        ));
        assert_eq!(e.to_string(), "q[1]/(q[2]*v[1])");
        let e = Expr::raw(Node::Pow(Expr::raw(Node::Neg(a)), Rational64::new(-1, 2)));
        assert_eq!(e.to_string(), "(-q[1])^(-1/2)");
        assert_eq!(constant(-2.5).to_string(), "(-2.5)");
    }
}

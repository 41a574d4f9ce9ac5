//! Recursive-descent parser for the Lagrangian DSL.
//!
//! ```text
//! dim 3;
//! param k = 1;
//! slice a = q[1..2];
//! box q -2 2;
//! guard norm(q) >= 0.5;
//! L = 0.5*dot(v,v) - k*q[3]/norm(q);
//! ```

use std::collections::BTreeMap;

use num_rational::Rational64;

use crate::error::{LagError, Result};
use crate::expr::{Expr, Node};
use crate::spec::{DomainBox, Guard, SystemSpec, MIN_GUARD};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    DotDot,
    Ge,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> LagError {
    LagError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        let at = |j: usize| chars.get(j).copied().unwrap_or('\0');
        let tok = if c.is_ascii_digit() || (c == '.' && at(i + 1).is_ascii_digit()) {
            let start = i;
            while at(i).is_ascii_digit() {
                i += 1;
            }
            if at(i) == '.' && at(i + 1) != '.' {
                i += 1;
                while at(i).is_ascii_digit() {
                    i += 1;
                }
            }
            if matches!(at(i), 'e' | 'E')
                && (at(i + 1).is_ascii_digit()
                    || (matches!(at(i + 1), '+' | '-') && at(i + 2).is_ascii_digit()))
            {
                i += 2;
                while at(i).is_ascii_digit() {
                    i += 1;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let value = s
                .parse::<f64>()
                .map_err(|_| syntax(line, start_col, format!("bad number `{s}`")))?;
            col += i - start;
            Tok::Num(value)
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while at(i).is_alphanumeric() || at(i) == '_' {
                i += 1;
            }
            col += i - start;
            Tok::Ident(chars[start..i].iter().collect())
        } else if c == '.' && at(i + 1) == '.' {
            i += 2;
            col += 2;
            Tok::DotDot
        } else if c == '>' && at(i + 1) == '=' {
            i += 2;
            col += 2;
            Tok::Ge
        } else if "+-*/^()[],;=".contains(c) {
            i += 1;
            col += 1;
            Tok::Sym(c)
        } else {
            return Err(syntax(line, col, format!("unexpected character `{c}`")));
        };
        out.push(Token {
            tok,
            line,
            col: start_col,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

const RESERVED: &[&str] = &[
    "q", "v", "sqrt", "sin", "cos", "ln", "dot", "norm", "dim", "param", "slice", "guard", "box",
    "L",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    dim: Option<usize>,
    params: BTreeMap<String, f64>,
    slices: BTreeMap<String, (usize, usize)>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn at_sym(&self, c: char) -> bool {
        self.peek().tok == Tok::Sym(c)
    }

    fn err_here(&self, msg: impl Into<String>) -> LagError {
        let t = self.peek();
        syntax(t.line, t.col, msg)
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.at_sym(c) {
            self.next();
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{c}`")))
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize)> {
        let t = self.next();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.line, t.col)),
            _ => Err(syntax(t.line, t.col, "expected a name")),
        }
    }

    fn signed_number(&mut self) -> Result<f64> {
        let negative = if self.at_sym('-') {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        match t.tok {
            Tok::Num(x) => Ok(if negative { -x } else { x }),
            _ => Err(syntax(t.line, t.col, "expected a number")),
        }
    }

    fn integer(&mut self) -> Result<(i64, usize, usize)> {
        let t = self.next();
        match t.tok {
            Tok::Num(x) if x.fract() == 0.0 && x.abs() < 1e15 => Ok((x as i64, t.line, t.col)),
            _ => Err(syntax(t.line, t.col, "expected an integer")),
        }
    }

    fn dim_at(&self, line: usize, col: usize) -> Result<usize> {
        self.dim.ok_or_else(|| {
            syntax(
                line,
                col,
                "`dim` must be declared before coordinates are used",
            )
        })
    }

    fn check_index(&self, index: i64, line: usize, col: usize) -> Result<usize> {
        let dim = self.dim_at(line, col)?;
        if index < 1 || index as usize > dim {
            return Err(LagError::IndexOutOfRange {
                index,
                dim,
                line,
                col,
            });
        }
        Ok(index as usize - 1)
    }

    /// Parses the bracket after `q`/`v`: `[i]`, `[i..j]` or `[slice]`.
    /// Returns the 0-based indices and whether it was a single index.
    fn index_spec(&mut self) -> Result<(Vec<usize>, bool)> {
        self.expect_sym('[')?;
        let t = self.peek().clone();
        let out = match t.tok {
            Tok::Ident(name) => {
                self.next();
                let (lo, hi) = *self.slices.get(&name).ok_or(LagError::UnboundName {
                    name: name.clone(),
                    line: t.line,
                    col: t.col,
                })?;
                ((lo..hi).collect(), false)
            }
            _ => {
                let (a, line, col) = self.integer()?;
                let lo = self.check_index(a, line, col)?;
                if self.peek().tok == Tok::DotDot {
                    self.next();
                    let (b, line, col) = self.integer()?;
                    let hi = self.check_index(b, line, col)?;
                    if hi < lo {
                        return Err(syntax(line, col, "empty index range"));
                    }
                    ((lo..=hi).collect(), false)
                } else {
                    (vec![lo], true)
                }
            }
        };
        self.expect_sym(']')?;
        Ok(out)
    }

    /// Vector operand of `dot`/`norm`: q, v, a slice name, or an index form.
    fn vector_arg(&mut self) -> Result<Vec<Expr>> {
        let (name, line, col) = self.ident()?;
        let is_v = match name.as_str() {
            "q" => false,
            "v" => true,
            _ => {
                let (lo, hi) = *self.slices.get(&name).ok_or(LagError::UnboundName {
                    name: name.clone(),
                    line,
                    col,
                })?;
                return Ok((lo..hi).map(Expr::q).collect());
            }
        };
        let indices: Vec<usize> = if self.at_sym('[') {
            self.index_spec()?.0
        } else {
            (0..self.dim_at(line, col)?).collect()
        };
        Ok(indices
            .into_iter()
            .map(|i| if is_v { Expr::v(i) } else { Expr::q(i) })
            .collect())
    }

    fn dot(a: &[Expr], b: &[Expr]) -> Expr {
        let mut terms = a
            .iter()
            .zip(b)
            .map(|(x, y)| Expr::raw(Node::Mul(x.clone(), y.clone())));
        let first = terms.next().expect("non-empty vectors");
        terms.fold(first, |acc, t| Expr::raw(Node::Add(acc, t)))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.at_sym('+') {
                self.next();
                lhs = Expr::raw(Node::Add(lhs, self.term()?));
            } else if self.at_sym('-') {
                self.next();
                lhs = Expr::raw(Node::Sub(lhs, self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.at_sym('*') {
                self.next();
                lhs = Expr::raw(Node::Mul(lhs, self.unary()?));
            } else if self.at_sym('/') {
                self.next();
                lhs = Expr::raw(Node::Div(lhs, self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.at_sym('-') {
            self.next();
            let operand = self.unary()?;
            // a negative literal is a constant, not a negation node
            return Ok(match operand.node() {
                Node::Const(c) if *c > 0.0 => Expr::constant(-c),
                _ => Expr::raw(Node::Neg(operand)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if !self.at_sym('^') {
            return Ok(base);
        }
        let t = self.next();
        let exponent = self.unary()?;
        let r = rational_value(&exponent).ok_or(LagError::NonRationalExponent {
            line: t.line,
            col: t.col,
        })?;
        Ok(Expr::raw(Node::Pow(base, r)))
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.next();
        match t.tok {
            Tok::Num(x) => Ok(Expr::constant(x)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Tok::Ident(name) => self.named(name, t.line, t.col),
            _ => Err(syntax(t.line, t.col, "expected an expression")),
        }
    }

    fn named(&mut self, name: String, line: usize, col: usize) -> Result<Expr> {
        match name.as_str() {
            "q" | "v" => {
                if !self.at_sym('[') {
                    return Err(syntax(
                        line,
                        col,
                        format!("vector `{name}` used as a scalar"),
                    ));
                }
                let (indices, single) = self.index_spec()?;
                if !single {
                    return Err(syntax(line, col, "index range used as a scalar"));
                }
                Ok(if name == "q" {
                    Expr::q(indices[0])
                } else {
                    Expr::v(indices[0])
                })
            }
            "sqrt" | "sin" | "cos" | "ln" => {
                self.expect_sym('(')?;
                let a = self.expr()?;
                self.expect_sym(')')?;
                Ok(Expr::raw(match name.as_str() {
                    "sqrt" => Node::Sqrt(a),
                    "sin" => Node::Sin(a),
                    "cos" => Node::Cos(a),
                    _ => Node::Ln(a),
                }))
            }
            "dot" => {
                self.expect_sym('(')?;
                let a = self.vector_arg()?;
                self.expect_sym(',')?;
                let b = self.vector_arg()?;
                self.expect_sym(')')?;
                if a.len() != b.len() {
                    return Err(syntax(
                        line,
                        col,
                        format!("dot of lengths {} and {}", a.len(), b.len()),
                    ));
                }
                Ok(Self::dot(&a, &b))
            }
            "norm" => {
                self.expect_sym('(')?;
                let a = self.vector_arg()?;
                self.expect_sym(')')?;
                Ok(Expr::raw(Node::Sqrt(Self::dot(&a, &a))))
            }
            _ if self.params.contains_key(&name) => Ok(Expr::param(&name)),
            _ if self.slices.contains_key(&name) => Err(syntax(
                line,
                col,
                format!("slice `{name}` used as a scalar"),
            )),
            _ => Err(LagError::UnboundName { name, line, col }),
        }
    }

    fn declare_name(&self, name: &str, line: usize, col: usize) -> Result<()> {
        if RESERVED.contains(&name) {
            return Err(syntax(line, col, format!("`{name}` is reserved")));
        }
        if self.params.contains_key(name) || self.slices.contains_key(name) {
            return Err(syntax(line, col, format!("`{name}` declared twice")));
        }
        Ok(())
    }

    fn end_statement(&mut self) -> Result<()> {
        self.expect_sym(';')
    }

    fn spec(&mut self) -> Result<SystemSpec> {
        let mut boxes: Vec<(bool, Vec<usize>, f64, f64)> = Vec::new();
        let mut guards = Vec::new();
        loop {
            let t = self.peek().clone();
            let keyword = match &t.tok {
                Tok::Ident(s) => s.clone(),
                Tok::Eof => return Err(syntax(t.line, t.col, "missing `L = ...`")),
                _ => return Err(syntax(t.line, t.col, "expected a declaration")),
            };
            self.next();
            match keyword.as_str() {
                "dim" => {
                    let (d, line, col) = self.integer()?;
                    if self.dim.is_some() {
                        return Err(syntax(line, col, "`dim` declared twice"));
                    }
                    if d < 1 {
                        return Err(syntax(line, col, "dimension must be positive"));
                    }
                    self.dim = Some(d as usize);
                    self.end_statement()?;
                }
                "param" => {
                    let (name, line, col) = self.ident()?;
                    self.declare_name(&name, line, col)?;
                    self.expect_sym('=')?;
                    let value = self.signed_number()?;
                    self.params.insert(name, value);
                    self.end_statement()?;
                }
                "slice" => {
                    let (name, line, col) = self.ident()?;
                    self.declare_name(&name, line, col)?;
                    self.expect_sym('=')?;
                    let (q, ql, qc) = self.ident()?;
                    if q != "q" {
                        return Err(syntax(ql, qc, "slices index into q"));
                    }
                    let (indices, _) = self.index_spec()?;
                    self.slices
                        .insert(name, (indices[0], indices[indices.len() - 1] + 1));
                    self.end_statement()?;
                }
                "guard" => {
                    let expr = self.expr()?;
                    let threshold = if self.peek().tok == Tok::Ge {
                        self.next();
                        self.signed_number()?
                    } else {
                        MIN_GUARD
                    };
                    if threshold <= 0.0 {
                        return Err(self.err_here("guard threshold must be positive"));
                    }
                    guards.push(Guard { expr, threshold });
                    self.end_statement()?;
                }
                "box" => {
                    let (name, line, col) = self.ident()?;
                    let (is_v, indices) = match name.as_str() {
                        "q" | "v" => {
                            let idx = if self.at_sym('[') {
                                self.index_spec()?.0
                            } else {
                                (0..self.dim_at(line, col)?).collect()
                            };
                            (name == "v", idx)
                        }
                        _ => {
                            let (lo, hi) =
                                *self.slices.get(&name).ok_or(LagError::UnboundName {
                                    name: name.clone(),
                                    line,
                                    col,
                                })?;
                            (false, (lo..hi).collect())
                        }
                    };
                    let lo = self.signed_number()?;
                    let hi = self.signed_number()?;
                    if !(lo < hi) {
                        return Err(syntax(line, col, "box bounds must satisfy lo < hi"));
                    }
                    boxes.push((is_v, indices, lo, hi));
                    self.end_statement()?;
                }
                "L" => {
                    let dim = self.dim_at(t.line, t.col)?;
                    self.expect_sym('=')?;
                    let lagrangian = self.expr()?;
                    if self.at_sym(';') {
                        self.next();
                    }
                    if self.peek().tok != Tok::Eof {
                        return Err(self.err_here("unexpected input after the Lagrangian"));
                    }
                    let mut domain = DomainBox::standard(dim);
                    for (is_v, indices, lo, hi) in boxes {
                        let target = if is_v { &mut domain.v } else { &mut domain.q };
                        for i in indices {
                            target[i] = (lo, hi);
                        }
                    }
                    return Ok(SystemSpec {
                        dim,
                        params: std::mem::take(&mut self.params),
                        slices: std::mem::take(&mut self.slices),
                        lagrangian,
                        domain,
                        guards,
                    });
                }
                other => {
                    return Err(syntax(
                        t.line,
                        t.col,
                        format!("unknown declaration `{other}`"),
                    ))
                }
            }
        }
    }
}

/// Exact rational value of a constant exponent expression.
fn rational_value(e: &Expr) -> Option<Rational64> {
    match e.node() {
        Node::Const(c) => decimal_to_rational(*c),
        Node::Neg(a) => rational_value(a).map(|r| -r),
        Node::Add(a, b) => Some(rational_value(a)? + rational_value(b)?),
        Node::Sub(a, b) => Some(rational_value(a)? - rational_value(b)?),
        Node::Mul(a, b) => Some(rational_value(a)? * rational_value(b)?),
        Node::Div(a, b) => {
            let d = rational_value(b)?;
            if d == Rational64::from_integer(0) {
                None
            } else {
                Some(rational_value(a)? / d)
            }
        }
        Node::Pow(a, r) if r.is_integer() && r.numer().abs() <= 16 => {
            let base = rational_value(a)?;
            let n = *r.numer() as i32;
            if n < 0 && base == Rational64::from_integer(0) {
                return None;
            }
            Some(base.pow(n))
        }
        _ => None,
    }
}

fn decimal_to_rational(c: f64) -> Option<Rational64> {
    if !c.is_finite() {
        return None;
    }
    let mut scale: i64 = 1;
    for _ in 0..10 {
        let s = c * scale as f64;
        if s.abs() < 1e15 && (s - s.round()).abs() <= 1e-9 * s.abs().max(1.0) {
            return Some(Rational64::new(s.round() as i64, scale));
        }
        scale *= 10;
    }
    None
}

pub fn parse_spec(text: &str) -> Result<SystemSpec> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        dim: None,
        params: BTreeMap::new(),
        slices: BTreeMap::new(),
    };
    p.spec()
}

pub fn parse_expr_in(spec: &SystemSpec, text: &str) -> Result<Expr> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        dim: Some(spec.dim),
        params: spec.params.clone(),
        slices: spec.slices.clone(),
    };
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.err_here("unexpected input after expression"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillator_parses() {
        let spec = parse_spec("dim 1; param k=1; L = 0.5*v[1]^2 - 0.5*k*q[1]^2").unwrap();
        assert_eq!(spec.dim, 1);
        assert_eq!(spec.params["k"], 1.0);
        assert_eq!(spec.lagrangian.to_string(), "0.5*v[1]^2 - 0.5*k*q[1]^2");
    }

    #[test]
    fn index_out_of_range_is_reported() {
        let err = parse_spec("dim 2; L = q[3]").unwrap_err();
        assert_eq!(
            err,
            LagError::IndexOutOfRange {
                index: 3,
                dim: 2,
                line: 1,
                col: 14
            }
        );
    }

    #[test]
    fn errors_carry_positions() {
        match parse_spec("dim 2;\nL = q[1] +* 2").unwrap_err() {
            LagError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 11)),
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            parse_spec("dim 1; L = k*q[1]"),
            Err(LagError::UnboundName { .. })
        ));
        assert!(matches!(
            parse_spec("dim 1; L = q[1]^v[1]"),
            Err(LagError::NonRationalExponent { .. })
        ));
        assert!(matches!(
            parse_spec("dim 1; param k = 2; L = q[1]^k"),
            Err(LagError::NonRationalExponent { .. })
        ));
    }

    #[test]
    fn dot_and_norm_expand_over_slices() {
        let spec =
            parse_spec("dim 4; slice a = q[3..4]; L = dot(a, v[a]) + norm(q[1..2])").unwrap();
        assert_eq!(
            spec.lagrangian.to_string(),
            "q[3]*v[3] + q[4]*v[4] + sqrt(q[1]*q[1] + q[2]*q[2])"
        );
    }

    #[test]
    fn headers_fill_the_domain_and_guards() {
        let spec = parse_spec(
            "# comment line\ndim 2; box q -1 3; box v[2] -0.5 0.5; guard norm(q) >= 0.5; guard q[1]; L = q[1]",
        )
        .unwrap();
        assert_eq!(spec.domain.q, vec![(-1.0, 3.0); 2]);
        assert_eq!(spec.domain.v, vec![(-1.0, 1.0), (-0.5, 0.5)]);
        assert_eq!(spec.guards.len(), 2);
        assert_eq!(spec.guards[0].threshold, 0.5);
        assert_eq!(spec.guards[1].threshold, MIN_GUARD);
    }

    #[test]
    fn exponents_accept_rational_forms() {
        let spec = parse_spec("dim 1; L = q[1]^(1/2) + q[1]^-1 + q[1]^0.25 + q[1]^2^2").unwrap();
        assert_eq!(
            spec.lagrangian.to_string(),
            "q[1]^(1/2) + q[1]^(-1) + q[1]^(1/4) + q[1]^4"
        );
    }

    #[test]
    fn negative_literals_fold() {
        let spec = parse_spec("dim 1; L = -2*q[1] - -q[1]").unwrap();
        assert_eq!(spec.lagrangian.to_string(), "(-2)*q[1] - -q[1]");
        let again = parse_spec(&spec.to_text()).unwrap();
        assert_eq!(again, spec);
    }
}

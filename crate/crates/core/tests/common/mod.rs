#![allow(dead_code)]

use lagsym::constraints::{run_constraint_algorithm, seed_points, ConstraintLedger};
use lagsym::examples::builtin;
use lagsym::symmetry::sample_points;
use lagsym::{CompiledLagrangian, PhasePoint, Settings};
use nalgebra::{DMatrix, DVector};

pub fn system(name: &str) -> CompiledLagrangian {
    builtin(name).unwrap().compile()
}

pub fn ledger(sys: &CompiledLagrangian, settings: &Settings) -> ConstraintLedger {
    let seeds = seed_points(sys, settings).unwrap();
    run_constraint_algorithm(sys, &seeds, settings).unwrap()
}

/// Up to `n` sampled points projected onto the first-order surface.
pub fn on_shell(
    sys: &CompiledLagrangian,
    ledger: &ConstraintLedger,
    settings: &Settings,
    n: usize,
) -> Vec<PhasePoint> {
    let h = ledger.hierarchy(sys, settings);
    let set = sample_points(&h, settings).unwrap();
    set.on_shell.into_iter().take(n).map(|p| p.point).collect()
}

pub fn stack(q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let d = q.len();
    let mut s = DVector::zeros(2 * d);
    s.rows_mut(0, d).copy_from(q);
    s.rows_mut(d, d).copy_from(v);
    s
}

fn proj(n: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let nh = n / n.norm();
    x - &nh * nh.dot(x)
}

/// Part of `x` orthogonal to the column span of `span`.
pub fn modulo(x: &DVector<f64>, span: &DMatrix<f64>) -> DVector<f64> {
    let q = span.clone().qr().q();
    x - &q * (q.transpose() * x)
}

/// Central difference with one Richardson step, written out independently
/// of the library's stencil.
pub fn derivative<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, dir: &DVector<f64>) -> f64 {
    let h = 1e-3;
    let d = |h: f64| (f(&(x + dir * h)) - f(&(x - dir * h))) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

// Scale-invariant particle with a generic potential V = ½k|q − 2e₁|², m = k = 1.

fn s1_grad_v(q: &DVector<f64>) -> DVector<f64> {
    let mut g = q.clone();
    g[0] -= 2.0;
    g
}

/// X̄_L = (Πv, (q̂·v)v/|q| − |q|²Π∂V/∂q).
pub fn s1_base_field(u: &PhasePoint) -> DVector<f64> {
    let (q, v) = (&u.q, &u.v);
    let r = q.norm();
    let qhat = q / r;
    let vert = v * (qhat.dot(v) / r) - proj(q, &s1_grad_v(q)) * (r * r);
    stack(&proj(q, v), &vert)
}

/// P₍₁₎ = (q̂, v/|q|).
pub fn s1_lift(u: &PhasePoint) -> DVector<f64> {
    let r = u.q.norm();
    stack(&(&u.q / r), &(&u.v / r))
}

/// ∂γ/∂q for γ = |q| − 2q₁/|q|.
pub fn s1_grad_gamma(q: &DVector<f64>) -> DVector<f64> {
    let r = q.norm();
    let mut e1 = DVector::zeros(q.len());
    e1[0] = 1.0;
    q / r - (e1 / r - q * (q[0] / r.powi(3))) * 2.0
}

/// Coefficient of P₍₁₎ fixed by tangency: −(v·Π·∂γ)/(q̂·∂γ).
pub fn s1_determined_coefficient(u: &PhasePoint) -> f64 {
    let g = s1_grad_gamma(&u.q);
    let qhat = &u.q / u.q.norm();
    -proj(&u.q, &u.v).dot(&g) / qhat.dot(&g)
}

pub fn s1_closed_form_field(u: &PhasePoint) -> DVector<f64> {
    s1_base_field(u) + s1_lift(u) * s1_determined_coefficient(u)
}

pub fn s1_vertical(u: &PhasePoint) -> DMatrix<f64> {
    let d = u.dim();
    let mut g = DMatrix::zeros(2 * d, 1);
    g.view_mut((d, 0), (d, 1)).copy_from(&(&u.q / u.q.norm()));
    g
}

// Two interacting particles on projective circles, m = λ = 1.

pub const M: f64 = 1.0;
pub const LAMBDA: f64 = 1.0;

fn slices(u: &PhasePoint) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    (
        u.q.rows(0, 2).into_owned(),
        u.q.rows(2, 2).into_owned(),
        u.v.rows(0, 2).into_owned(),
        u.v.rows(2, 2).into_owned(),
    )
}

fn join(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(4, a.iter().chain(b.iter()).copied())
}

pub fn s2_base_field(u: &PhasePoint) -> DVector<f64> {
    let (q1, q2, v1, v2) = slices(u);
    let (r1, r2) = (q1.norm(), q2.norm());
    let p1v1 = proj(&q1, &v1);
    let p2v2 = proj(&q2, &v2);
    let a1 =
        &p1v1 * ((&q1 / r1).dot(&v1) / r1) + proj(&q1, &proj(&q2, &v2)) * (LAMBDA / M * r1 / r2);
    let a2 =
        &p2v2 * ((&q2 / r2).dot(&v2) / r2) - proj(&q2, &proj(&q1, &v1)) * (LAMBDA / M * r2 / r1);
    stack(&join(&p1v1, &p2v2), &join(&a1, &a2))
}

/// P₍₊₎ = (q; v).
pub fn s2_plus(u: &PhasePoint) -> DVector<f64> {
    stack(&u.q, &u.v)
}

/// P₍₋₎ = (q₁, −q₂; v₁, −v₂) − (2λ/m)(0; (|q₁|/|q₂|)q₂, (|q₂|/|q₁|)q₁).
pub fn s2_minus(u: &PhasePoint) -> DVector<f64> {
    let (q1, q2, v1, v2) = slices(u);
    let (r1, r2) = (q1.norm(), q2.norm());
    let c = 2.0 * LAMBDA / M;
    let w1 = &v1 - &q2 * (c * r1 / r2);
    let w2 = -&v2 - &q1 * (c * r2 / r1);
    stack(&join(&q1, &(-&q2)), &join(&w1, &w2))
}

/// γ₍₋₎ = −(2λ/|q₁||q₂|)(q₂·Π(q₁)v₁ + q₁·Π(q₂)v₂).
pub fn s2_gamma_minus(s: &DVector<f64>) -> f64 {
    let u = PhasePoint::from_state(s);
    let (q1, q2, v1, v2) = slices(&u);
    -(2.0 * LAMBDA / (q1.norm() * q2.norm())) * (q2.dot(&proj(&q1, &v1)) + q1.dot(&proj(&q2, &v2)))
}

/// γ₍₊₎ = f·q, which vanishes identically.
pub fn s2_alignment(u: &PhasePoint) -> f64 {
    let (q1, q2, _, _) = slices(u);
    q1.dot(&q2) / (q1.norm() * q2.norm())
}

/// dγ₍₋₎[P₍₋₎] = (8λ/m)(1 − (q̂₁·q̂₂)²).
pub fn s2_gamma_minus_along_minus(u: &PhasePoint) -> f64 {
    let c = s2_alignment(u);
    8.0 * LAMBDA / M * (1.0 - c * c)
}

pub fn s2_determined_coefficient(u: &PhasePoint) -> f64 {
    -derivative(s2_gamma_minus, &u.state(), &s2_base_field(u)) / s2_gamma_minus_along_minus(u)
}

pub fn s2_closed_form_field(u: &PhasePoint) -> DVector<f64> {
    s2_base_field(u) + s2_minus(u) * s2_determined_coefficient(u)
}

/// Span of P₍₊₎ and the two vertical kernel directions.
pub fn s2_gauge_span(u: &PhasePoint) -> DMatrix<f64> {
    let (q1, q2, _, _) = slices(u);
    let zero = DVector::zeros(2);
    let mut m = DMatrix::zeros(8, 3);
    m.set_column(0, &s2_plus(u));
    m.set_column(
        1,
        &stack(&DVector::zeros(4), &join(&(&q1 / q1.norm()), &zero)),
    );
    m.set_column(
        2,
        &stack(&DVector::zeros(4), &join(&zero, &(&q2 / q2.norm()))),
    );
    m
}

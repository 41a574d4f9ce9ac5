//! Central finite differences with one Richardson extrapolation.

use nalgebra::{DMatrix, DVector};

/// Default relative step: displacement magnitude is `step·(1 + ‖x‖)`.
pub const DEFAULT_STEP: f64 = 1e-4;

/// Derivative of `f` at `x` along `dir`.
pub fn jvp<F>(f: F, x: &DVector<f64>, dir: &DVector<f64>, step: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let nd = dir.norm();
    if nd == 0.0 {
        let n = f(x).len();
        return DVector::zeros(n);
    }
    let h = step * (1.0 + x.norm()) / nd;
    let diff = |h: f64| (f(&(x + dir * h)) - f(&(x - dir * h))) / (2.0 * h);
    let coarse = diff(h);
    let fine = diff(0.5 * h);
    (fine * 4.0 - coarse) / 3.0
}

/// Jacobian (rows = outputs) by directional differences along unit vectors.
pub fn jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            jvp(&f, x, &e, step)
        })
        .collect();
    let m = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}

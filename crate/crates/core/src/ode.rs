//! Dormand–Prince 5(4) with a fallible right-hand side and a fixed output grid.

use nalgebra::DVector;

use crate::error::{LagError, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-9,
            h_init: 1e-3,
            h_min: 1e-12,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_failures: usize,
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B_LOW: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step: the fifth-order update, the error vector and f at the new point.
fn dp_step<F>(
    f: &F,
    y: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(k1.clone());
    for a in &A[1..6] {
        let mut ys = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if a[j] != 0.0 {
                ys.axpy(h * a[j], kj, 1.0);
            }
        }
        k.push(f(&ys)?);
    }
    let mut y5 = y.clone();
    for (j, kj) in k.iter().enumerate() {
        y5.axpy(h * B[j], kj, 1.0);
    }
    let k7 = f(&y5)?;
    k.push(k7.clone());
    let mut err = DVector::zeros(y.len());
    for (j, kj) in k.iter().enumerate() {
        err.axpy(h * (B[j] - B_LOW[j]), kj, 1.0);
    }
    Ok((y5, err, k7))
}

/// Fixed-step classical RK4; smooth in the initial state, which finite
/// differences through the flow rely on.
pub fn rk4<F>(f: F, y0: &DVector<f64>, t_end: f64, steps: usize) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let h = t_end / steps as f64;
    let mut y = y0.clone();
    for _ in 0..steps {
        let k1 = f(&y)?;
        let k2 = f(&(&y + &k1 * (h / 2.0)))?;
        let k3 = f(&(&y + &k2 * (h / 2.0)))?;
        let k4 = f(&(&y + &k3 * h))?;
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(y)
}

/// Integrates y' = f(y) from 0 to `t_end`, returning states at multiples of
/// `dt` (plus `t_end`). `post` maps each accepted state, e.g. a projection.
/// A failing right-hand side inside a trial step shrinks the step; the error
/// is returned once the step falls below `h_min`.
/// Output grid as (t, y) pairs.
pub type Samples = Vec<(f64, DVector<f64>)>;

pub fn integrate<F, P>(
    f: F,
    y0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    opts: &OdeOptions,
    mut post: P,
) -> Result<(Samples, OdeStats)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    P: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if !(t_end.is_finite() && dt > 0.0 && t_end >= 0.0) {
        return Err(LagError::Config(format!(
            "bad time grid: t_end = {t_end}, dt = {dt}"
        )));
    }
    let mut grid: Vec<f64> = vec![];
    let n = (t_end / dt).floor() as usize;
    for i in 1..=n {
        grid.push(i as f64 * dt);
    }
    if grid
        .last()
        .is_none_or(|&t| t_end - t > 1e-12 * (1.0 + t_end))
    {
        grid.push(t_end);
    } else if let Some(last) = grid.last_mut() {
        *last = t_end;
    }

    let mut stats = OdeStats::default();
    let mut out = vec![(0.0, y0.clone())];
    let mut t = 0.0;
    let mut y = y0.clone();
    let mut k1 = f(&y).map_err(|e| fail(0.0, e))?;
    let mut h = opts.h_init.min(dt);
    for &target in grid.iter().filter(|&&g| g > 0.0) {
        while target - t > 1e-14 * (1.0 + target) {
            if stats.accepted + stats.rejected > opts.max_steps {
                return Err(LagError::StepFailure {
                    t,
                    reason: "step budget exhausted".into(),
                });
            }
            let last = h >= target - t;
            let hs = if last { target - t } else { h };
            match dp_step(&f, &y, &k1, hs) {
                Ok((y5, err, k7)) => {
                    let e = err
                        .iter()
                        .zip(y.iter().zip(y5.iter()))
                        .map(|(e, (a, b))| e.abs() / (opts.atol + opts.rtol * a.abs().max(b.abs())))
                        .fold(0.0, f64::max);
                    if e <= 1.0 {
                        stats.accepted += 1;
                        t = if last { target } else { t + hs };
                        let projected = post(&y5).map_err(|e| fail(t, e))?;
                        if projected != y5 {
                            k1 = f(&projected).map_err(|e| fail(t, e))?;
                        } else {
                            k1 = k7;
                        }
                        y = projected;
                        let grow = if e == 0.0 {
                            5.0
                        } else {
                            (0.9 * e.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        if !last || grow < 1.0 {
                            h = hs * grow;
                        }
                    } else {
                        stats.rejected += 1;
                        h = hs * (0.9 * e.powf(-0.2)).clamp(0.1, 1.0);
                    }
                }
                Err(e @ LagError::RankChange { .. }) => return Err(e),
                Err(e) => {
                    stats.rhs_failures += 1;
                    h = hs * 0.25;
                    if h < opts.h_min * (1.0 + t.abs()) {
                        return Err(fail(t, e));
                    }
                }
            }
            if h < opts.h_min * (1.0 + t.abs()) {
                return Err(LagError::StepFailure {
                    t,
                    reason: format!("step size {h:.3e} below minimum"),
                });
            }
        }
        out.push((target, y.clone()));
    }
    Ok((out, stats))
}

fn fail(t: f64, e: LagError) -> LagError {
    match e {
        LagError::RankChange { .. } | LagError::StepFailure { .. } => e,
        other => LagError::StepFailure {
            t,
            reason: other.to_string(),
        },
    }
}

//! Phase-space tensors at concrete points.

use nalgebra::{DMatrix, DVector};

use crate::compile::CompiledLagrangian;
use crate::error::{LagError, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, v: Vec<f64>) -> Self {
        PhasePoint {
            q: DVector::from_vec(q),
            v: DVector::from_vec(v),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// Stacked (q, v) state vector.
    pub fn state(&self) -> DVector<f64> {
        let d = self.dim();
        let mut s = DVector::zeros(2 * d);
        s.rows_mut(0, d).copy_from(&self.q);
        s.rows_mut(d, d).copy_from(&self.v);
        s
    }

    pub fn from_state(s: &DVector<f64>) -> Self {
        let d = s.len() / 2;
        PhasePoint {
            q: s.rows(0, d).into_owned(),
            v: s.rows(d, d).into_owned(),
        }
    }

    /// Point displaced by `h·dir` in state space.
    pub fn shifted(&self, dir: &DVector<f64>, h: f64) -> Self {
        PhasePoint::from_state(&(self.state() + dir * h))
    }

    pub fn norm(&self) -> f64 {
        self.state().norm()
    }
}

#[derive(Debug, Clone)]
pub struct TensorEval {
    pub mass: DMatrix<f64>,
    pub force: DMatrix<f64>,
    pub energy: f64,
    pub de_dq: DVector<f64>,
    pub de_dv: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub lagrangian: f64,
    pub dl_dv: DVector<f64>,
    pub guards: Vec<f64>,
    pub v: DVector<f64>,
}

impl TensorEval {
    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    /// ∂E/∂q + F v; the Euler–Lagrange residual is this plus M a.
    pub fn force_term(&self) -> DVector<f64> {
        &self.de_dq + &self.force * &self.v
    }

    /// Stacked differential (∂E/∂q, ∂E/∂v).
    pub fn de(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&self.de_dq);
        out.rows_mut(d, d).copy_from(&self.de_dv);
        out
    }

    /// 1 + largest entry of M, F and dE.
    pub fn scale(&self) -> f64 {
        1.0 + linalg::max_abs(&self.mass)
            .max(linalg::max_abs(&self.force))
            .max(linalg::max_abs_vec(&self.de_dq))
            .max(linalg::max_abs_vec(&self.de_dv))
    }

    /// Minimum-norm solution of M a = −(∂E/∂q + F v).
    pub fn base_acceleration(&self, tol_rank: f64) -> DVector<f64> {
        -linalg::pinv(&self.mass, tol_rank) * self.force_term()
    }

    /// dE − i_X Ω as a stacked covector.
    pub fn energy_residual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.de() - self.omega.transpose() * x
    }

    /// Ω(X, Y).
    pub fn omega_pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.omega * y))
    }
}

/// [[F, M], [−M, 0]], so that Ω(X, Y) = XqᵀF Yq + XqᵀM Yv − YqᵀM Xv.
pub fn assemble_omega(mass: &DMatrix<f64>, force: &DMatrix<f64>) -> DMatrix<f64> {
    let d = mass.nrows();
    let mut omega = DMatrix::zeros(2 * d, 2 * d);
    omega.view_mut((0, 0), (d, d)).copy_from(force);
    omega.view_mut((0, d), (d, d)).copy_from(mass);
    omega
        .view_mut((d, 0), (d, d))
        .copy_from(&(-mass.transpose()));
    omega
}

/// Evaluates without guard checks (used inside finite-difference stencils).
pub fn eval_tensors_unchecked(sys: &CompiledLagrangian, u: &PhasePoint) -> TensorEval {
    let d = sys.dim();
    let raw = sys.eval_raw(u.q.as_slice(), u.v.as_slice());
    let mass = DMatrix::from_row_slice(d, d, &raw.mass);
    let force = DMatrix::from_row_slice(d, d, &raw.force);
    let omega = assemble_omega(&mass, &force);
    TensorEval {
        mass,
        force,
        energy: raw.energy,
        de_dq: DVector::from_vec(raw.de_dq),
        de_dv: DVector::from_vec(raw.de_dv),
        omega,
        lagrangian: raw.lagrangian,
        dl_dv: DVector::from_vec(raw.dl_dv),
        guards: raw.guards,
        v: u.v.clone(),
    }
}

/// Index and value of the first guard below its threshold, if any.
pub fn guard_violation(sys: &CompiledLagrangian, guards: &[f64]) -> Option<(usize, f64, f64)> {
    sys.spec
        .guards
        .iter()
        .zip(guards)
        .enumerate()
        .find(|(_, (g, &x))| !(x.abs() >= g.threshold))
        .map(|(i, (g, &x))| (i, x, g.threshold))
}

pub fn eval_tensors(sys: &CompiledLagrangian, u: &PhasePoint) -> Result<TensorEval> {
    let t = eval_tensors_unchecked(sys, u);
    if let Some((index, value, threshold)) = guard_violation(sys, &t.guards) {
        return Err(LagError::GuardViolation {
            index,
            value,
            threshold,
        });
    }
    let finite = t
        .mass
        .iter()
        .chain(t.force.iter())
        .chain(t.de_dq.iter())
        .all(|x| x.is_finite());
    if !finite || !t.energy.is_finite() {
        return Err(LagError::GuardViolation {
            index: usize::MAX,
            value: f64::NAN,
            threshold: 0.0,
        });
    }
    Ok(t)
}

pub fn is_admissible(sys: &CompiledLagrangian, u: &PhasePoint) -> bool {
    eval_tensors(sys, u).is_ok()
}

/// Δ = ∂E/∂q + F v + M a.
pub fn el_residual(
    sys: &CompiledLagrangian,
    u: &PhasePoint,
    accel: &DVector<f64>,
) -> Result<DVector<f64>> {
    let t = eval_tensors(sys, u)?;
    Ok(t.force_term() + &t.mass * accel)
}

//! Null basis of the mass matrix and the kernel of the two-form.

use nalgebra::{DMatrix, DVector};

use crate::error::{LagError, Result};
use crate::geometry::TensorEval;
use crate::linalg::{self, MIN_GAP};

#[derive(Debug, Clone)]
pub struct KernelData {
    /// D × N₀, orthonormal null vectors of M.
    pub z: DMatrix<f64>,
    /// N₀ × N₀ reduced force zᵀ F z.
    pub fbar: DMatrix<f64>,
    /// 2D × k numerical null basis of Ω from its SVD.
    pub ker_omega: DMatrix<f64>,
    pub omega_sigma: Vec<f64>,
    pub omega_gap: f64,
    pub mass_gap: f64,
    /// 2D × N₀ vertical lifts (0, z).
    pub g_basis: DMatrix<f64>,
    /// 2D × N₀ quotient representatives (z, w) with M w = −F z, w ⟂ span z.
    pub p_reps: DMatrix<f64>,
    /// N₀ × D dual covectors: theta_q · z = I.
    pub theta_q: DMatrix<f64>,
    /// ‖M w + F z‖ per representative.
    pub lift_residuals: Vec<f64>,
    /// N₀ + dim ker F̄.
    pub predicted_by_reduced_force: usize,
}

impl KernelData {
    pub fn n0(&self) -> usize {
        self.z.ncols()
    }

    pub fn svd_dim(&self) -> usize {
        self.ker_omega.ncols()
    }

    pub fn predicted_two_n0(&self) -> usize {
        2 * self.n0()
    }

    /// Whether the SVD dimension equals both predicted counts.
    pub fn counts_agree(&self) -> bool {
        self.svd_dim() == self.predicted_two_n0()
            && self.svd_dim() == self.predicted_by_reduced_force
    }
}

/// Orthonormal null basis of a symmetric matrix (σ ≤ tol·σ_max).
pub fn null_basis(mass: &DMatrix<f64>, tol_rank: f64) -> (DMatrix<f64>, usize) {
    let ns = linalg::null_space(mass, tol_rank);
    let n0 = ns.dim();
    (ns.basis, n0)
}

pub fn reduced_force(force: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    z.transpose() * force * z
}

/// Lifts horizontal kernel directions to (z, −M⁺F z).
pub fn lift(mass_pinv: &DMatrix<f64>, force: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let d = z.nrows();
    let mut out = DMatrix::zeros(2 * d, z.ncols());
    out.view_mut((0, 0), (d, z.ncols())).copy_from(z);
    out.view_mut((d, 0), (d, z.ncols()))
        .copy_from(&(-(mass_pinv * force * z)));
    out
}

/// Vertical lifts (0, z).
pub fn vertical(z: &DMatrix<f64>) -> DMatrix<f64> {
    let d = z.nrows();
    let mut out = DMatrix::zeros(2 * d, z.ncols());
    out.view_mut((d, 0), (d, z.ncols())).copy_from(z);
    out
}

pub fn ker_omega_basis(t: &TensorEval, tol_rank: f64) -> Result<KernelData> {
    let mass_ns = linalg::null_space(&t.mass, tol_rank);
    if mass_ns.gap < MIN_GAP {
        return Err(LagError::IllConditionedKernel { gap: mass_ns.gap });
    }
    let omega_ns = linalg::null_space(&t.omega, tol_rank);
    if omega_ns.gap < MIN_GAP {
        return Err(LagError::IllConditionedKernel { gap: omega_ns.gap });
    }
    let z = mass_ns.basis;
    let n0 = z.ncols();
    let fbar = reduced_force(&t.force, &z);
    let fscale = 1.0 + linalg::max_abs(&t.force);
    let fbar_kernel = linalg::sorted_svd(&fbar)
        .sigma
        .iter()
        .filter(|&&s| s <= tol_rank * fscale)
        .count();

    let mass_pinv = linalg::pinv(&t.mass, tol_rank);
    let mut p_reps = lift(&mass_pinv, &t.force, &z);
    // pinv already yields w in the row space of M; remove any round-off drift
    let d = t.dim();
    for n in 0..n0 {
        let w = p_reps.view((d, n), (d, 1)).into_owned();
        let w = &w - &z * (z.transpose() * &w);
        p_reps.view_mut((d, n), (d, 1)).copy_from(&w);
    }
    let lift_residuals = (0..n0)
        .map(|n| {
            let w = p_reps.view((d, n), (d, 1)).into_owned();
            (&t.mass * w + &t.force * z.column(n)).norm()
        })
        .collect();
    let theta_q = linalg::pinv(&z, 1e-12);
    Ok(KernelData {
        g_basis: vertical(&z),
        fbar,
        ker_omega: omega_ns.basis,
        omega_sigma: omega_ns.sigma,
        omega_gap: omega_ns.gap,
        mass_gap: mass_ns.gap,
        p_reps,
        theta_q,
        lift_residuals,
        predicted_by_reduced_force: n0 + fbar_kernel,
        z,
    })
}

/// Re-mixes `cur` by an orthogonal transformation to best match `prev`.
pub fn align_basis(prev: &KernelData, cur: &KernelData) -> Result<KernelData> {
    if prev.n0() != cur.n0() {
        return Err(LagError::RankChange {
            expected: prev.n0(),
            found: cur.n0(),
        });
    }
    let r = linalg::procrustes(&prev.z, &cur.z);
    let mut out = cur.clone();
    out.z = &cur.z * &r;
    out.p_reps = &cur.p_reps * &r;
    out.g_basis = &cur.g_basis * &r;
    out.theta_q = r.transpose() * &cur.theta_q;
    out.fbar = r.transpose() * &cur.fbar * &r;
    if prev.svd_dim() == cur.svd_dim() {
        let rk = linalg::procrustes(&prev.ker_omega, &cur.ker_omega);
        out.ker_omega = &cur.ker_omega * rk;
    }
    Ok(out)
}

/// Diagonal overlaps zₙ(prev)·zₙ(cur) after alignment.
pub fn basis_overlaps(prev: &KernelData, cur: &KernelData) -> Vec<f64> {
    (0..prev.n0().min(cur.n0()))
        .map(|n| prev.z.column(n).dot(&cur.z.column(n)))
        .collect()
}

/// Projects `x` onto the column span of an orthonormal `basis`.
pub fn project(basis: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    basis * (basis.transpose() * x)
}

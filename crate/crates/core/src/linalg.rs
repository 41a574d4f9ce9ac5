//! Rank-revealing dense linear algebra on top of nalgebra's SVD.

use std::sync::Once;

use nalgebra::{DMatrix, DVector};

/// Minimum singular-value ratio across a rank cut before it is trusted.
pub const MIN_GAP: f64 = 1e3;

/// SVD with singular values sorted in descending order and a full set of
/// right singular vectors (columns of `v`), also for wide matrices.
/// `sigma` always has one entry per column.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

static SEQUENTIAL: Once = Once::new();

pub fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let (m, n) = a.shape();
    if n == 0 || m == 0 {
        return SortedSvd {
            u: DMatrix::zeros(m, 0),
            sigma: vec![0.0; n],
            v: DMatrix::identity(n, n),
        };
    }
    // nalgebra's bidiagonal SVD can return inaccurate factors for matrices
    // with exact zero blocks, so the decomposition is delegated to faer
    SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    let fm = faer::Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
    let svd = fm.svd().expect("SVD of a finite matrix");
    let k = m.min(n);
    let s = svd.S().column_vector();
    let mut sigma: Vec<f64> = (0..k).map(|i| s[i]).collect();
    sigma.resize(n, 0.0);
    let fu = svd.U();
    let fv = svd.V();
    let u = DMatrix::from_fn(m, n, |i, j| if j < k { fu[(i, j)] } else { 0.0 });
    let v = DMatrix::from_fn(n, n, |i, j| fv[(i, j)]);
    SortedSvd { u, sigma, v }
}

/// Orthonormal basis of a numerical null space.
#[derive(Debug, Clone)]
pub struct NullSpace {
    /// n × k, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub rank: usize,
    /// σ_{rank-1} / σ_rank; infinite when there is no cut.
    pub gap: f64,
}

impl NullSpace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Flips `x` so that its first non-negligible component is positive.
pub fn sign_fix(x: &mut DVector<f64>) {
    let norm = x.norm();
    if let Some(&first) = x.iter().find(|c| c.abs() > 1e-10 * norm) {
        if first < 0.0 {
            x.neg_mut();
        }
    }
}

fn sign_fixed_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m;
    for mut col in out.column_iter_mut() {
        let mut c = col.clone_owned();
        sign_fix(&mut c);
        col.copy_from(&c);
    }
    out
}

/// Right null space: right singular vectors with σ ≤ tol·σ_max.
/// Columns are ordered by descending σ and sign-fixed.
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> NullSpace {
    let n = a.ncols();
    let svd = sorted_svd(a);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let rank = svd.sigma.iter().filter(|&&s| s > tol * smax).count();
    let gap = gap_at(&svd.sigma, rank);
    let basis = sign_fixed_columns(svd.v.columns(rank, n - rank).into_owned());
    NullSpace {
        basis,
        sigma: svd.sigma,
        rank,
        gap,
    }
}

/// Null space of prescribed dimension k (the k smallest singular directions).
pub fn null_space_fixed(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = a.ncols();
    let svd = sorted_svd(a);
    svd.v.columns(n - k, k).into_owned()
}

pub fn gap_at(sigma: &[f64], rank: usize) -> f64 {
    if rank == 0 || rank >= sigma.len() {
        return f64::INFINITY;
    }
    let below = sigma[rank];
    if below <= 0.0 {
        f64::INFINITY
    } else {
        sigma[rank - 1] / below
    }
}

/// Numerical rank with σ > tol·σ_max (absolute floor `abs_tol`).
pub fn rank(a: &DMatrix<f64>, tol: f64, abs_tol: f64) -> usize {
    let svd = sorted_svd(a);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    svd.sigma
        .iter()
        .filter(|&&s| s > (tol * smax).max(abs_tol))
        .count()
}

/// Moore–Penrose pseudo-inverse with relative cutoff.
pub fn pinv(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let svd = sorted_svd(a);
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let r = svd
        .sigma
        .iter()
        .filter(|&&s| s > tol * smax && s > 0.0)
        .count();
    pinv_rank(&svd, r, a.shape())
}

/// Pseudo-inverse truncated to the leading `r` singular triplets.
pub fn pinv_truncated(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = sorted_svd(a);
    let r = r.min(svd.sigma.iter().filter(|&&s| s > 0.0).count());
    pinv_rank(&svd, r, a.shape())
}

fn pinv_rank(svd: &SortedSvd, r: usize, (m, n): (usize, usize)) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, m);
    for k in 0..r {
        let vk = svd.v.column(k);
        let uk = svd.u.column(k);
        out += (vk * uk.transpose()) / svd.sigma[k];
    }
    out
}

/// Orthonormal basis for the column span (relative cutoff `tol`).
pub fn orthonormal_span(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let svd = sorted_svd(&a.transpose());
    // right singular vectors of aᵀ are left singular vectors of a
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let r = svd
        .sigma
        .iter()
        .filter(|&&s| s > tol * smax && s > 0.0)
        .count();
    svd.v.columns(0, r).into_owned()
}

/// Cosines of the principal angles between two column spans.
pub fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_span(a, 1e-12);
    let qb = orthonormal_span(b, 1e-12);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return vec![];
    }
    sorted_svd(&(qa.transpose() * qb))
        .sigma
        .into_iter()
        .map(|c| c.min(1.0))
        .collect()
}

/// Smallest cos² of principal angles; 1 for identical spans.
pub fn span_overlap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let c = principal_cosines(a, b);
    if a.ncols() != b.ncols() || c.len() < a.ncols() {
        return 0.0;
    }
    c.iter().fold(1.0f64, |m, x| m.min(x * x))
}

/// Distance of `x` from the column span of `a`, relative to ‖x‖.
pub fn relative_distance_from_span(x: &DVector<f64>, a: &DMatrix<f64>) -> f64 {
    let nx = x.norm();
    if nx == 0.0 {
        return 0.0;
    }
    let q = orthonormal_span(a, 1e-12);
    let proj = &q * (q.transpose() * x);
    (x - proj).norm() / nx
}

/// Orthogonal R minimizing ‖target − current·R‖ (orthogonal Procrustes).
pub fn procrustes(target: &DMatrix<f64>, current: &DMatrix<f64>) -> DMatrix<f64> {
    let k = current.ncols();
    if k == 0 {
        return DMatrix::zeros(0, 0);
    }
    let svd = sorted_svd(&(current.transpose() * target));
    &svd.u * svd.v.transpose()
}

/// Frobenius norm of the antisymmetric part.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).norm()
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn max_abs_vec(a: &DVector<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

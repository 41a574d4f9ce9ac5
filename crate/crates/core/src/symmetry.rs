//! Sampled classification of symmetry generators among the quotient
//! representatives of ker Ω / G.
//!
//! Generators are combinations Σ cⁿ(u) Pₙ with coefficient functions, so the
//! tests are pointwise linear conditions on c at each sample. A candidate is
//! an action symmetry when its pairing with γ vanishes identically; on the
//! first-order surface that means cᵀγ = 0 and cᵀ∂γ = 0, and off it cᵀγ = 0.
//! A candidate is a symmetry of the equations of motion when
//! Σₘ (Pγₘ) Θᵐ − Σₘ ⟨Θᵐ|P⟩ dγₘ vanishes on the first-order surface.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::compile::CompiledLagrangian;
use crate::config::Settings;
use crate::constraints::{project_to_constraint_surface, ConstraintLedger, Hierarchy};
use crate::error::{LagError, Result};
use crate::expr::Expr;
use crate::fd;
use crate::geometry::{eval_tensors, PhasePoint};
use crate::linalg;
use crate::sampling::Sampler;
use crate::tape::Tape;

/// Outcome of one pointwise null-space test.
#[derive(Debug, Clone, Serialize)]
pub struct SampleEvidence {
    pub dim: usize,
    /// Largest singular value counted as zero, over the local scale.
    pub accepted: f64,
    /// Smallest singular value counted as nonzero, over the local scale.
    pub rejected: Option<f64>,
}

/// Null space of `a` with singular values at most `threshold`, and its margins relative to `scale`.
pub fn null_test(a: &DMatrix<f64>, threshold: f64, scale: f64) -> (DMatrix<f64>, SampleEvidence) {
    let n = a.ncols();
    let svd = linalg::sorted_svd(a);
    let mut sigma = svd.sigma.clone();
    sigma.resize(n, 0.0);
    let rank = sigma.iter().filter(|&&s| s > threshold).count();
    let accepted = sigma[rank..].iter().fold(0.0f64, |m, &s| m.max(s)) / scale;
    let rejected = if rank > 0 {
        Some(sigma[rank - 1] / scale)
    } else {
        None
    };
    let basis = svd.v.columns(rank, n - rank).into_owned();
    (
        basis,
        SampleEvidence {
            dim: n - rank,
            accepted,
            rejected,
        },
    )
}

/// First-order data at one point, in the orthonormal null frame there.
#[derive(Debug, Clone)]
pub struct PointData {
    pub point: PhasePoint,
    pub scale: f64,
    pub gamma: DVector<f64>,
    /// N₀ × 2D derivative of γ in the frame anchored at the point.
    pub jacobian: DMatrix<f64>,
    /// 2D × N₀ representatives.
    pub reps: DMatrix<f64>,
    /// D × N₀.
    pub z: DMatrix<f64>,
}

impl PointData {
    pub fn at(h: &Hierarchy, u: &PhasePoint, with_jacobian: bool) -> Result<Self> {
        let a = h.build_anchors(u, 0)?;
        let frame = h.frame(u, &a.z0);
        let jacobian = if with_jacobian {
            fd::jacobian(
                |s| h.values(1, &PhasePoint::from_state(s), &a),
                &u.state(),
                h.fd_step,
            )
        } else {
            DMatrix::zeros(h.n0, 2 * h.dim())
        };
        Ok(PointData {
            point: u.clone(),
            scale: frame.t.scale(),
            gamma: frame.constraints(),
            jacobian,
            reps: frame.p,
            z: frame.z,
        })
    }

    /// Γ⁽¹⁾ = ∂γ · P.
    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        &self.jacobian * &self.reps
    }

    /// Columns are the residual covectors of the equation-symmetry test for each Pₙ.
    pub fn sym_matrix(&self) -> DMatrix<f64> {
        let d = self.z.nrows();
        let n0 = self.z.ncols();
        let mut theta = DMatrix::zeros(n0, 2 * d);
        theta
            .view_mut((0, 0), (n0, d))
            .copy_from(&self.z.transpose());
        theta.transpose() * self.gamma_matrix() - self.jacobian.transpose()
    }

    /// Stacked conditions for an action symmetry at an on-shell point.
    pub fn sym_l_matrix(&self) -> DMatrix<f64> {
        let n0 = self.z.ncols();
        let rows = 1 + self.jacobian.ncols();
        let mut m = DMatrix::zeros(rows, n0);
        m.row_mut(0).copy_from(&self.gamma.transpose());
        m.view_mut((1, 0), (rows - 1, n0))
            .copy_from(&self.jacobian.transpose());
        m
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryClass {
    /// None when no sample could decide the question.
    pub dim: Option<usize>,
    /// Quotient representatives (2D vectors) at the reference point.
    pub basis: Vec<Vec<f64>>,
    /// Their horizontal parts.
    pub horizontal: Vec<Vec<f64>>,
    pub samples: usize,
    pub max_accepted: f64,
    pub min_rejected: Option<f64>,
    pub evidence: Vec<SampleEvidence>,
}

impl SymmetryClass {
    fn from_tests(
        tests: Vec<(DMatrix<f64>, SampleEvidence)>,
        reference: Option<&PointData>,
    ) -> Self {
        let dim = tests.iter().map(|t| t.1.dim).min();
        let max_accepted = tests.iter().fold(0.0f64, |m, t| m.max(t.1.accepted));
        let min_rejected = tests.iter().filter_map(|t| t.1.rejected).reduce(f64::min);
        let (basis, horizontal) = match (dim, reference, tests.first()) {
            (Some(k), Some(r), Some((null, _))) if k > 0 => {
                let c = null.columns(null.ncols() - k, k);
                let reps = &r.reps * c;
                let hor = &r.z * c;
                (columns(&reps), columns(&hor))
            }
            _ => (vec![], vec![]),
        };
        SymmetryClass {
            dim,
            basis,
            horizontal,
            samples: tests.len(),
            max_accepted,
            min_rejected,
            evidence: tests.into_iter().map(|t| t.1).collect(),
        }
    }

    /// Horizontal basis as a D × k matrix.
    pub fn horizontal_matrix(&self) -> DMatrix<f64> {
        let k = self.horizontal.len();
        let d = self.horizontal.first().map_or(0, |h| h.len());
        DMatrix::from_fn(d, k, |i, j| self.horizontal[j][i])
    }
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter()
        .map(|c| c.iter().copied().collect())
        .collect()
}

/// Off-shell samples and their projections onto the first-order surface.
pub struct SampleSet {
    pub off_shell: Vec<PointData>,
    pub on_shell: Vec<PointData>,
}

pub fn sample_points(h: &Hierarchy, settings: &Settings) -> Result<SampleSet> {
    let seeds = Sampler::new(settings.seed.wrapping_add(1)).admissible(h.sys, settings.samples)?;
    let off_shell = seeds
        .par_iter()
        .map(|u| PointData::at(h, u, false))
        .collect::<Result<Vec<_>>>()?;
    let first = Hierarchy {
        ranks: vec![],
        ..h.clone()
    };
    let on_shell: Vec<PointData> = seeds
        .par_iter()
        .filter_map(|u| project_to_constraint_surface(&first, u, 1, settings).ok())
        .filter_map(|u| PointData::at(h, &u, true).ok())
        .collect();
    Ok(SampleSet {
        off_shell,
        on_shell,
    })
}

/// Action symmetries: cᵀγ = 0 at every off-shell sample and cᵀγ = cᵀ∂γ = 0
/// on the first-order surface.
pub fn classify_action_symmetries(set: &SampleSet, settings: &Settings) -> SymmetryClass {
    let off: Vec<_> = set
        .off_shell
        .iter()
        .map(|p| {
            null_test(
                &DMatrix::from_row_slice(1, p.gamma.len(), p.gamma.as_slice()),
                settings.eps_id * p.scale,
                p.scale,
            )
        })
        .collect();
    let on: Vec<_> = set
        .on_shell
        .iter()
        .map(|p| null_test(&p.sym_l_matrix(), settings.eps_id * p.scale, p.scale))
        .collect();
    let reference = set.on_shell.first();
    if on.is_empty() {
        return SymmetryClass::from_tests(off, set.off_shell.first());
    }
    let off_min = off.iter().map(|t| t.1.dim).min();
    let mut class = SymmetryClass::from_tests(on, reference);
    if let (Some(d), Some(o)) = (class.dim, off_min) {
        if o < d {
            class.dim = Some(o);
            class.basis.truncate(o);
            class.horizontal.truncate(o);
        }
    }
    class
}

/// Symmetries of the equations of motion, tested on the first-order surface.
pub fn classify_el_symmetries(set: &SampleSet, settings: &Settings) -> SymmetryClass {
    let tests: Vec<_> = set
        .on_shell
        .iter()
        .map(|p| null_test(&p.sym_matrix(), settings.eps_id * p.scale, p.scale))
        .collect();
    SymmetryClass::from_tests(tests, set.on_shell.first())
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    pub n0: usize,
    pub dim_sym: Option<usize>,
    pub dim_sym_l: usize,
    pub i1: usize,
    pub dim_sol: usize,
    pub sym: SymmetryClass,
    pub sym_l: SymmetryClass,
    /// Largest equation-symmetry residual of action-symmetry directions.
    pub inclusion_residual: f64,
    /// Distance of pairwise brackets of the action-symmetry fields from
    /// span{P, G}; None when not evaluated.
    pub involutivity: Option<f64>,
    pub off_shell_samples: usize,
    pub on_shell_samples: usize,
    pub invariants_hold: bool,
}

impl SymmetryReport {
    /// (ker/G, Sym, SymL, I₁, Sol) with Sym None mapped to usize::MAX.
    pub fn row(&self) -> [usize; 5] {
        [
            self.n0,
            self.dim_sym.unwrap_or(usize::MAX),
            self.dim_sym_l,
            self.i1,
            self.dim_sol,
        ]
    }
}

pub fn symmetry_report(
    sys: &CompiledLagrangian,
    ledger: &ConstraintLedger,
    settings: &Settings,
) -> Result<SymmetryReport> {
    let h = ledger.hierarchy(sys, settings);
    let set = sample_points(&h, settings)?;
    if set.off_shell.len() < 16 {
        return Err(LagError::TooFewSamples {
            found: set.off_shell.len(),
            needed: 16,
        });
    }
    let sym_l = classify_action_symmetries(&set, settings);
    let sym = classify_el_symmetries(&set, settings);
    let dim_sym_l = sym_l.dim.unwrap_or(0);

    let inclusion_residual = set
        .on_shell
        .iter()
        .map(|p| {
            let (null, _) = null_test(&p.sym_l_matrix(), settings.eps_id * p.scale, p.scale);
            let k = dim_sym_l.min(null.ncols());
            let c = null.columns(null.ncols() - k, k);
            linalg::max_abs(&(p.sym_matrix() * c)) / p.scale
        })
        .fold(0.0f64, f64::max);

    let involutivity = if dim_sym_l <= 1 {
        Some(0.0)
    } else if dim_sym_l == ledger.n0 {
        set.on_shell
            .first()
            .map(|p| kernel_involutivity(sys, ledger.n0, &p.point, settings.fd_step))
    } else {
        None
    };

    let dim_sol = ledger.free_count;
    let invariants_hold = dim_sym_l <= sym.dim.unwrap_or(ledger.n0)
        && sym.dim.unwrap_or(0) <= ledger.n0
        && dim_sol >= dim_sym_l;
    Ok(SymmetryReport {
        n0: ledger.n0,
        dim_sym: sym.dim,
        dim_sym_l,
        i1: ledger.independent(1),
        dim_sol,
        sym,
        sym_l,
        inclusion_residual,
        involutivity,
        off_shell_samples: set.off_shell.len(),
        on_shell_samples: set.on_shell.len(),
        invariants_hold,
    })
}

/// Brackets of lifted coordinate projections onto ker M, measured against
/// span{P, G} at `u`.
fn kernel_involutivity(sys: &CompiledLagrangian, n0: usize, u: &PhasePoint, step: f64) -> f64 {
    let d = sys.dim();
    let fields: Vec<GeneratorField> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            GeneratorField::Projected(e)
        })
        .collect();
    let Ok(frame) = GeneratorFrame::at(sys, n0, u) else {
        return f64::INFINITY;
    };
    let span = frame.span();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let Ok(b) = bracket(sys, n0, &fields[i], &fields[j], u, step) else {
                return f64::INFINITY;
            };
            worst = worst.max(linalg::relative_distance_from_span(&b, &span) * b.norm().min(1.0));
        }
    }
    worst
}

/// Null frame of M at a point with the associated lift.
pub struct GeneratorFrame {
    pub z: DMatrix<f64>,
    pub mass_pinv: DMatrix<f64>,
    pub force: DMatrix<f64>,
}

impl GeneratorFrame {
    pub fn at(sys: &CompiledLagrangian, n0: usize, u: &PhasePoint) -> Result<Self> {
        let t = eval_tensors(sys, u)?;
        let d = t.dim();
        let z = linalg::null_space_fixed(&t.mass, n0);
        Ok(GeneratorFrame {
            z,
            mass_pinv: linalg::pinv_truncated(&t.mass, d - n0),
            force: t.force,
        })
    }

    /// (Πh, −M⁺F Πh) with Π the projector onto ker M.
    pub fn lift(&self, h: &DVector<f64>) -> DVector<f64> {
        let zh = &self.z * (self.z.transpose() * h);
        let d = zh.len();
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&zh);
        out.rows_mut(d, d)
            .copy_from(&(-(&self.mass_pinv * &self.force * &zh)));
        out
    }

    /// Columns spanning ker Ω: the lifts and the vertical directions.
    pub fn span(&self) -> DMatrix<f64> {
        let p = crate::kernel::lift(&self.mass_pinv, &self.force, &self.z);
        let g = crate::kernel::vertical(&self.z);
        let mut out = DMatrix::zeros(p.nrows(), 2 * self.z.ncols());
        out.view_mut((0, 0), p.shape()).copy_from(&p);
        out.view_mut((0, p.ncols()), g.shape()).copy_from(&g);
        out
    }
}

/// A generator evaluated as a vector field on phase space.
#[derive(Debug, Clone)]
pub enum GeneratorField {
    /// Lift of a horizontal direction field given by expressions in q, v.
    Lift(Tape),
    /// Lift of a fixed horizontal vector projected onto ker M at each point.
    Projected(DVector<f64>),
}

impl GeneratorField {
    pub fn lift_of(sys: &CompiledLagrangian, direction: &[Expr]) -> Self {
        GeneratorField::Lift(Tape::compile(direction, &sys.spec.params))
    }

    pub fn eval(
        &self,
        sys: &CompiledLagrangian,
        n0: usize,
        u: &PhasePoint,
    ) -> Result<DVector<f64>> {
        let frame = GeneratorFrame::at(sys, n0, u)?;
        let h = match self {
            GeneratorField::Lift(tape) => {
                DVector::from_vec(tape.eval(u.q.as_slice(), u.v.as_slice()))
            }
            GeneratorField::Projected(h) => h.clone(),
        };
        Ok(frame.lift(&h))
    }
}

/// [X, Y] = DY·X − DX·Y by finite differences.
pub fn bracket(
    sys: &CompiledLagrangian,
    n0: usize,
    x: &GeneratorField,
    y: &GeneratorField,
    u: &PhasePoint,
    step: f64,
) -> Result<DVector<f64>> {
    let fx = x.eval(sys, n0, u)?;
    let fy = y.eval(sys, n0, u)?;
    let s = u.state();
    let ex = |w: &DVector<f64>| {
        x.eval(sys, n0, &PhasePoint::from_state(w))
            .unwrap_or_else(|_| w * f64::NAN)
    };
    let ey = |w: &DVector<f64>| {
        y.eval(sys, n0, &PhasePoint::from_state(w))
            .unwrap_or_else(|_| w * f64::NAN)
    };
    Ok(fd::jvp(ey, &s, &fx, step) - fd::jvp(ex, &s, &fy, step))
}

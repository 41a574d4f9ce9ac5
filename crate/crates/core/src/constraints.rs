//! Constraint functions, the constraint one-form and the iterative
//! constraint algorithm.
//!
//! Constraint functions beyond first order involve null bases of M and of
//! the Γ matrices, which are only defined up to rotation. To differentiate
//! them numerically every evaluation is done in a frame *anchored* at a base
//! point: a null basis `b0` chosen there is carried to nearby points as
//! `P(u)·b0`, where `P(u)` is the (smooth) projector onto the null space at
//! `u`. At the base point the anchored frame is orthonormal, and quantities
//! that are invariant under orthogonal re-mixing (minimum-norm multiplier
//! solutions, constraint surfaces, ranks) do not depend on the choice.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::compile::CompiledLagrangian;
use crate::config::Settings;
use crate::error::{LagError, Result};
use crate::fd;
use crate::geometry::{eval_tensors, eval_tensors_unchecked, PhasePoint, TensorEval};
use crate::kernel::{self, KernelData};
use crate::linalg;
use crate::sampling::Sampler;

/// γ⁽¹⁾ₙ = zₙ·(∂E/∂q + F v).
pub fn first_order_constraints(t: &TensorEval, kd: &KernelData) -> DVector<f64> {
    kd.z.transpose() * t.force_term()
}

/// The same constraints written as ⟨dE|Pₙ⟩; equal to the above when F̄ = 0.
pub fn constraints_via_energy(t: &TensorEval, kd: &KernelData) -> DVector<f64> {
    kd.p_reps.transpose() * t.de()
}

#[derive(Debug, Clone)]
pub struct BetaEval {
    pub gamma1: DVector<f64>,
    pub theta_q: DMatrix<f64>,
    /// D-covector Σ γₙ Θⁿ.
    pub beta: DVector<f64>,
}

pub fn beta_form(t: &TensorEval, kd: &KernelData) -> BetaEval {
    let gamma1 = first_order_constraints(t, kd);
    let beta = kd.theta_q.transpose() * &gamma1;
    BetaEval {
        gamma1,
        theta_q: kd.theta_q.clone(),
        beta,
    }
}

/// Mass-matrix null frame and its lifts at one point.
#[derive(Debug, Clone)]
pub struct Frame {
    pub t: TensorEval,
    /// D × N₀ (anchored; orthonormal at the anchor point).
    pub z: DMatrix<f64>,
    /// 2D × N₀ lifts (z, −M⁺F z).
    pub p: DMatrix<f64>,
    pub mass_pinv: DMatrix<f64>,
}

/// Horizontal part of the base solution of the energy equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseConvention {
    /// Horizontal part v.
    #[default]
    Velocity,
    /// Kernel components of v removed along the lifts: horizontal part Π v.
    Reduced,
}

impl Frame {
    /// X_L = (v, a) with a the minimum-norm solution of M a = −(∂E/∂q + F v).
    pub fn base_field(&self) -> DVector<f64> {
        let d = self.t.dim();
        let mut x = DVector::zeros(2 * d);
        x.rows_mut(0, d).copy_from(&self.t.v);
        x.rows_mut(d, d)
            .copy_from(&(-(&self.mass_pinv * self.t.force_term())));
        x
    }

    pub fn base_field_in(&self, base: BaseConvention) -> DVector<f64> {
        let x = self.base_field();
        match base {
            BaseConvention::Velocity => x,
            BaseConvention::Reduced => x - &self.p * (self.z.transpose() * &self.t.v),
        }
    }

    pub fn constraints(&self) -> DVector<f64> {
        self.z.transpose() * self.t.force_term()
    }

    /// Lift of an arbitrary horizontal direction, projected onto ker M.
    pub fn lift_direction(&self, h: &DVector<f64>) -> DVector<f64> {
        let zh = &self.z * (linalg::pinv(&self.z, 1e-12) * h);
        let d = self.t.dim();
        let mut out = DVector::zeros(2 * d);
        out.rows_mut(0, d).copy_from(&zh);
        out.rows_mut(d, d)
            .copy_from(&(-(&self.mass_pinv * &self.t.force * &zh)));
        out
    }
}

/// Anchor bases fixing smooth frames near one base point.
#[derive(Debug, Clone)]
pub struct Anchors {
    pub z0: DMatrix<f64>,
    /// Per order: right null basis of Γ (free directions carried forward).
    pub right: Vec<DMatrix<f64>>,
    /// Per order: left null basis of Γ (combinations giving new constraints).
    pub left: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct LevelEval {
    /// Γ⁽ˡ⁾: derivatives of order-l constraints along the free lifts.
    pub gamma: DMatrix<f64>,
    /// Derivatives of order-l constraints along the current field.
    pub b: DVector<f64>,
    /// N₀ × nₗ free coefficient directions entering this order.
    pub free: DMatrix<f64>,
    /// Field before this order's determination.
    pub field: DVector<f64>,
    pub computed: bool,
}

#[derive(Debug, Clone)]
pub struct Ladder {
    pub frame: Frame,
    pub levels: Vec<LevelEval>,
    /// Field with every determination applied.
    pub field: DVector<f64>,
    /// Free coefficient directions remaining after the last processed order.
    pub free: DMatrix<f64>,
}

fn anchored(basis_at_point: &DMatrix<f64>, anchor: &DMatrix<f64>) -> DMatrix<f64> {
    basis_at_point * (basis_at_point.transpose() * anchor)
}

/// Evaluator for the constraint hierarchy given the ranks decided so far.
#[derive(Clone)]
pub struct Hierarchy<'a> {
    pub sys: &'a CompiledLagrangian,
    pub n0: usize,
    /// r⁽ˡ⁾ for the orders decided so far.
    pub ranks: Vec<usize>,
    pub tol_rank: f64,
    pub fd_step: f64,
    pub base: BaseConvention,
}

impl<'a> Hierarchy<'a> {
    pub fn new(sys: &'a CompiledLagrangian, n0: usize, settings: &Settings) -> Self {
        Hierarchy {
            sys,
            n0,
            ranks: vec![],
            tol_rank: settings.tol_rank,
            fd_step: settings.fd_step,
            base: BaseConvention::Velocity,
        }
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    /// nₗ, the number of order-l constraint functions.
    pub fn count(&self, order: usize) -> usize {
        let mut n = self.n0;
        for l in 1..order {
            n -= self.ranks[l - 1].min(n);
        }
        n
    }

    pub fn total_count(&self, order: usize) -> usize {
        (1..=order).map(|l| self.count(l)).sum()
    }

    pub fn frame(&self, u: &PhasePoint, z0: &DMatrix<f64>) -> Frame {
        let t = eval_tensors_unchecked(self.sys, u);
        let d = t.dim();
        let null = linalg::null_space_fixed(&t.mass, self.n0);
        let z = anchored(&null, z0);
        let mass_pinv = linalg::pinv_truncated(&t.mass, d - self.n0);
        let p = kernel::lift(&mass_pinv, &t.force, &z);
        Frame { t, z, p, mass_pinv }
    }

    /// Order-l constraint values at `u`.
    pub fn values(&self, order: usize, u: &PhasePoint, a: &Anchors) -> DVector<f64> {
        if order == 1 {
            return self.frame(u, &a.z0).constraints();
        }
        let lad = self.ladder(u, a, order - 1, true);
        self.next_values(&lad.levels[order - 2], order - 1, a)
    }

    fn next_values(&self, lev: &LevelEval, order: usize, a: &Anchors) -> DVector<f64> {
        let n = lev.gamma.nrows();
        let r = self.ranks[order - 1];
        if n == 0 || r >= n {
            return DVector::zeros(0);
        }
        if r == 0 {
            return &a.left[order - 1].transpose() * &lev.b;
        }
        let left = linalg::null_space_fixed(&lev.gamma.transpose(), n - r);
        anchored(&left, &a.left[order - 1]).transpose() * &lev.b
    }

    /// All constraint values of orders 1..=order, stacked.
    pub fn stacked_values(&self, order: usize, u: &PhasePoint, a: &Anchors) -> DVector<f64> {
        let mut parts = vec![];
        if order == 1 {
            parts.push(self.frame(u, &a.z0).constraints());
        } else {
            let lad = self.ladder(u, a, order - 1, true);
            parts.push(lad.frame.constraints());
            for l in 1..order {
                parts.push(self.next_values(&lad.levels[l - 1], l, a));
            }
        }
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let mut out = DVector::zeros(total);
        let mut k = 0;
        for p in parts {
            out.rows_mut(k, p.len()).copy_from(&p);
            k += p.len();
        }
        out
    }

    /// Γ and b for orders 1..=upto at `u`, applying the decided determinations.
    /// With `full_last == false` the last order is skipped when its rank is
    /// known to be zero (nothing is determined there).
    pub fn ladder(&self, u: &PhasePoint, a: &Anchors, upto: usize, full_last: bool) -> Ladder {
        let frame = self.frame(u, &a.z0);
        let mut x = frame.base_field_in(self.base);
        let mut free = DMatrix::identity(self.n0, self.n0);
        let mut levels = Vec::with_capacity(upto);
        let state = u.state();
        for l in 1..=upto {
            let n = free.ncols();
            let rank = self.ranks.get(l - 1).copied();
            let skip = l == upto && !full_last && rank == Some(0);
            if n == 0 || skip {
                levels.push(LevelEval {
                    gamma: DMatrix::zeros(n, n),
                    b: DVector::zeros(n),
                    free: free.clone(),
                    field: x.clone(),
                    computed: false,
                });
                continue;
            }
            let dirs = &frame.p * &free;
            let f = |s: &DVector<f64>| self.values(l, &PhasePoint::from_state(s), a);
            let cols: Vec<DVector<f64>> = (0..n)
                .map(|j| fd::jvp(f, &state, &dirs.column(j).into_owned(), self.fd_step))
                .collect();
            let gamma = DMatrix::from_fn(n, n, |i, j| cols[j][i]);
            let b = fd::jvp(f, &state, &x, self.fd_step);
            levels.push(LevelEval {
                gamma: gamma.clone(),
                b: b.clone(),
                free: free.clone(),
                field: x.clone(),
                computed: true,
            });
            let (Some(r), Some(anchor)) = (rank, a.right.get(l - 1)) else {
                break;
            };
            if r > 0 {
                let y = -linalg::pinv_truncated(&gamma, r) * &b;
                x += &dirs * y;
            }
            let right = if r == 0 {
                anchor.clone()
            } else if r >= n {
                DMatrix::zeros(n, 0)
            } else {
                anchored(&linalg::null_space_fixed(&gamma, n - r), anchor)
            };
            free = &free * right;
        }
        Ladder {
            frame,
            levels,
            field: x,
            free,
        }
    }

    /// Orthonormal anchors at `u` for orders 1..=upto (ranks must be known).
    pub fn build_anchors(&self, u: &PhasePoint, upto: usize) -> Result<Anchors> {
        let t = eval_tensors(self.sys, u)?;
        let ns = linalg::null_space(&t.mass, self.tol_rank);
        if ns.dim() != self.n0 {
            return Err(LagError::RankChange {
                expected: self.n0,
                found: ns.dim(),
            });
        }
        let mut a = Anchors {
            z0: ns.basis,
            right: vec![],
            left: vec![],
        };
        for l in 1..=upto {
            let n = self.count(l);
            let r = self.ranks[l - 1];
            if n == 0 || r == 0 || r >= n {
                let keep = if r >= n { 0 } else { n };
                a.right
                    .push(DMatrix::identity(n, n).columns(0, keep).into_owned());
                a.left
                    .push(DMatrix::identity(n, n).columns(0, keep).into_owned());
                continue;
            }
            let lad = self.ladder(u, &a, l, true);
            let gamma = &lad.levels[l - 1].gamma;
            a.right.push(linalg::null_space_fixed(gamma, n - r));
            a.left
                .push(linalg::null_space_fixed(&gamma.transpose(), n - r));
        }
        Ok(a)
    }

    /// Scale of constraint values at `u`.
    pub fn scale(&self, u: &PhasePoint) -> f64 {
        eval_tensors_unchecked(self.sys, u).scale()
    }

    /// Jacobian of the stacked constraints of orders 1..=order (rows) at `u`.
    pub fn stacked_jacobian(&self, order: usize, u: &PhasePoint, a: &Anchors) -> DMatrix<f64> {
        fd::jacobian(
            |s| self.stacked_values(order, &PhasePoint::from_state(s), a),
            &u.state(),
            self.fd_step,
        )
    }

    /// Γ⁽ˡ⁾ at `u` in the orthonormal frame anchored there.
    pub fn gamma_at(&self, u: &PhasePoint, order: usize) -> Result<DMatrix<f64>> {
        let a = self.build_anchors(u, order - 1)?;
        Ok(self.ladder(u, &a, order, true).levels[order - 1]
            .gamma
            .clone())
    }
}

#[derive(Debug, Clone)]
pub struct GammaEval {
    pub gamma: DMatrix<f64>,
    /// ‖Γ − Γᵀ‖ / (1 + ‖Γ‖).
    pub asymmetry: f64,
}

/// Γ⁽ˡ⁾ at a point of the order-(l) surface.
pub fn gamma_matrix(h: &Hierarchy, u: &PhasePoint, order: usize, tol: f64) -> Result<GammaEval> {
    let a = h.build_anchors(u, order - 1)?;
    let lower = h.stacked_values(order, u, &a);
    let violation = linalg::max_abs_vec(&lower);
    if violation > tol * h.scale(u) {
        return Err(LagError::OffSurface { violation });
    }
    let gamma = h.ladder(u, &a, order, true).levels[order - 1].gamma.clone();
    let asymmetry = linalg::asymmetry(&gamma) / (1.0 + gamma.norm());
    Ok(GammaEval { gamma, asymmetry })
}

/// Gauss–Newton projection onto the surface where all constraints of
/// orders 1..=order vanish.
pub fn project_to_constraint_surface(
    h: &Hierarchy,
    guess: &PhasePoint,
    order: usize,
    settings: &Settings,
) -> Result<PhasePoint> {
    project_onto(h, guess, order, settings, true)
}

/// As [`project_to_constraint_surface`], optionally accepting points outside
/// the sampling box (flows may leave it).
pub fn project_onto(
    h: &Hierarchy,
    guess: &PhasePoint,
    order: usize,
    settings: &Settings,
    inside_box: bool,
) -> Result<PhasePoint> {
    let fail = |reason: &str| LagError::SurfaceNotFound {
        order,
        reason: reason.to_string(),
    };
    if h.total_count(order) == 0 {
        return Ok(guess.clone());
    }
    let mut u = guess.clone();
    for _ in 0..50 {
        let a = h
            .build_anchors(&u, order - 1)
            .map_err(|e| fail(&e.to_string()))?;
        let c = h.stacked_values(order, &u, &a);
        let cmax = linalg::max_abs_vec(&c);
        if !cmax.is_finite() {
            return Err(fail("non-finite constraint value"));
        }
        if cmax <= settings.newton_tol * h.scale(&u) {
            if inside_box && !h.sys.spec.domain.contains(u.q.as_slice(), u.v.as_slice()) {
                return Err(fail("converged outside the domain box"));
            }
            eval_tensors(h.sys, &u).map_err(|e| fail(&e.to_string()))?;
            return Ok(u);
        }
        let jac = h.stacked_jacobian(order, &u, &a);
        let step = -linalg::pinv(&jac, settings.fd_rank_tol) * &c;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..20 {
            let cand = u.shifted(&step, alpha);
            let cc = h.stacked_values(order, &cand, &a);
            let cm = linalg::max_abs_vec(&cc);
            if cm.is_finite() && cm < cmax {
                accepted = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        u = accepted.ok_or_else(|| fail("line search stalled"))?;
    }
    Err(fail("no convergence in 50 iterations"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    FixedPoint,
    FullRank,
    MaxOrderExceeded,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderRecord {
    pub order: usize,
    /// Number of order-l constraint functions (undetermined multipliers entering).
    pub constraint_count: usize,
    /// r⁽ˡ⁾, number of multipliers determined at this order.
    pub rank: usize,
    /// I₍ₗ₎, independent constraints of orders ≤ l.
    pub independent: usize,
    pub rank_votes: Vec<usize>,
    pub independent_votes: Vec<usize>,
    pub samples: usize,
    pub max_gamma_asymmetry: f64,
    pub max_gamma_entry: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintLedger {
    pub dim: usize,
    pub n0: usize,
    pub orders: Vec<OrderRecord>,
    pub n_f: usize,
    pub termination: Termination,
    /// Multipliers left free at the terminal order.
    pub free_count: usize,
    #[serde(skip)]
    pub surface_points: Vec<PhasePoint>,
    #[serde(skip)]
    pub first_order_points: Vec<PhasePoint>,
}

impl ConstraintLedger {
    pub fn ranks(&self) -> Vec<usize> {
        self.orders.iter().map(|o| o.rank).collect()
    }

    pub fn hierarchy<'a>(&self, sys: &'a CompiledLagrangian, settings: &Settings) -> Hierarchy<'a> {
        let mut h = Hierarchy::new(sys, self.n0, settings);
        h.ranks = self.ranks();
        h
    }

    pub fn independent(&self, order: usize) -> usize {
        if order == 0 {
            0
        } else {
            self.orders.get(order - 1).map_or(0, |o| o.independent)
        }
    }

    /// Whether any order beyond the first added independent constraints.
    pub fn higher_order_constraints_found(&self) -> bool {
        self.orders
            .windows(2)
            .any(|w| w[1].independent > w[0].independent)
    }

    /// Total number of constraint functions and independent ones: zero for an
    /// unconstrained system.
    pub fn is_empty(&self) -> bool {
        self.independent(self.n_f) == 0
    }
}

/// Most common value; errors if it wins less than three quarters of votes.
fn consensus(votes: &[usize], order: usize) -> Result<usize> {
    let mut best = (0, 0);
    for &v in votes {
        let c = votes.iter().filter(|&&w| w == v).count();
        if c > best.1 || (c == best.1 && v < best.0) {
            best = (v, c);
        }
    }
    if 4 * best.1 < 3 * votes.len() {
        return Err(LagError::ConstantRankViolation {
            order,
            ranks: votes.to_vec(),
        });
    }
    Ok(best.0)
}

fn relative_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sigma = linalg::sorted_svd(m).sigma;
    let smax = sigma.first().copied().unwrap_or(0.0);
    sigma.iter().filter(|&&s| s > tol * (1.0 + smax)).count()
}

/// Seeds for [`run_constraint_algorithm`]: several per retained sample,
/// since projections can leave the box or hit a guard.
pub fn seed_points(sys: &CompiledLagrangian, settings: &Settings) -> Result<Vec<PhasePoint>> {
    Sampler::new(settings.seed).admissible(sys, 4 * settings.ledger_samples)
}

pub fn run_constraint_algorithm(
    sys: &CompiledLagrangian,
    seeds: &[PhasePoint],
    settings: &Settings,
) -> Result<ConstraintLedger> {
    let d = sys.dim();
    let n0_votes = seeds
        .iter()
        .map(|u| {
            let t = eval_tensors(sys, u)?;
            Ok(kernel::ker_omega_basis(&t, settings.tol_rank)?.n0())
        })
        .collect::<Result<Vec<usize>>>()?;
    let n0 = consensus(&n0_votes, 0)?;
    let mut h = Hierarchy::new(sys, n0, settings);
    let needed = settings.ledger_samples.min(seeds.len()).min(8);

    let mut orders = Vec::new();
    let mut previous = 0;
    let mut first_order_points = vec![];
    let mut outcome = None;
    for l in 1..=settings.max_order {
        let mut points: Vec<PhasePoint> = seeds
            .par_iter()
            .filter_map(|s| project_to_constraint_surface(&h, s, l, settings).ok())
            .collect();
        points.truncate(settings.ledger_samples);
        if points.len() < needed {
            return Err(LagError::SurfaceNotFound {
                order: l,
                reason: format!("{} of {} seeds projected", points.len(), seeds.len()),
            });
        }
        if l == 1 {
            first_order_points = points.clone();
        }
        let per_point: Vec<(usize, usize, f64, f64)> = points
            .par_iter()
            .map(|u| {
                let a = h.build_anchors(u, l - 1)?;
                let lad = h.ladder(u, &a, l, true);
                let gamma = &lad.levels[l - 1].gamma;
                let rank = relative_rank(gamma, settings.fd_rank_tol);
                let jac = h.stacked_jacobian(l, u, &a);
                let independent = relative_rank(&jac, settings.fd_rank_tol);
                let asym = linalg::asymmetry(gamma) / (1.0 + gamma.norm());
                Ok((rank, independent, asym, linalg::max_abs(gamma)))
            })
            .collect::<Result<Vec<_>>>()?;
        let rank_votes: Vec<usize> = per_point.iter().map(|p| p.0).collect();
        let independent_votes: Vec<usize> = per_point.iter().map(|p| p.1).collect();
        let rank = consensus(&rank_votes, l)?;
        let independent = consensus(&independent_votes, l)?;
        orders.push(OrderRecord {
            order: l,
            constraint_count: h.count(l),
            rank,
            independent,
            rank_votes,
            independent_votes,
            samples: points.len(),
            max_gamma_asymmetry: per_point.iter().fold(0.0, |m, p| m.max(p.2)),
            max_gamma_entry: per_point.iter().fold(0.0, |m, p| m.max(p.3)),
        });
        h.ranks.push(rank);
        if independent == previous {
            outcome = Some((l, Termination::FixedPoint, points));
            break;
        }
        if independent == 2 * d {
            outcome = Some((l, Termination::FullRank, points));
            break;
        }
        previous = independent;
    }
    let (n_f, termination, surface_points) = match outcome {
        Some(o) => o,
        None => (settings.max_order, Termination::MaxOrderExceeded, vec![]),
    };
    let free_count = h.count(n_f + 1);
    Ok(ConstraintLedger {
        dim: d,
        n0,
        orders,
        n_f,
        termination,
        free_count,
        surface_points,
        first_order_points,
    })
}

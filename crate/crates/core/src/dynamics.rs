//! Second-order vector fields solving the energy equation, and their flows.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::compile::CompiledLagrangian;
use crate::config::Settings;
use crate::constraints::{project_onto, BaseConvention, ConstraintLedger, Hierarchy, Termination};
use crate::error::{LagError, Result};
use crate::expr::Expr;
use crate::fd;
use crate::geometry::{eval_tensors, PhasePoint};
use crate::kernel;
use crate::linalg;
use crate::ode::{self, OdeOptions};
use crate::symmetry::GeneratorField;
use crate::tape::Tape;

/// `coefficient · (Πd, −M⁺FΠd)` restricted to the undetermined directions.
#[derive(Debug, Clone)]
pub struct GaugeTerm {
    pub coefficient: Expr,
    pub direction: Vec<Expr>,
    pub text: String,
}

impl GaugeTerm {
    /// Parses `coef : d1, d2, ..., dD`.
    pub fn parse(sys: &CompiledLagrangian, text: &str) -> Result<GaugeTerm> {
        let (coef, dir) = text.split_once(':').ok_or_else(|| {
            LagError::Config(format!(
                "gauge term `{text}` needs `coefficient : direction`"
            ))
        })?;
        let coefficient = sys.spec.parse_expr(coef.trim())?;
        let direction = split_top_level(dir)
            .iter()
            .map(|s| sys.spec.parse_expr(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        if direction.len() != sys.dim() {
            return Err(LagError::Config(format!(
                "gauge direction has {} components, system has dimension {}",
                direction.len(),
                sys.dim()
            )));
        }
        Ok(GaugeTerm {
            coefficient,
            direction,
            text: text.trim().to_string(),
        })
    }
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = vec![];
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    parts.push(cur);
    parts
}

struct CompiledGauge {
    coefficient: Tape,
    direction: Tape,
}

/// The assembled field X = X_base + determined multipliers + gauge terms.
pub struct Soelvf<'a> {
    pub h: Hierarchy<'a>,
    pub n_f: usize,
    pub free_count: usize,
    pub gauge: Vec<GaugeTerm>,
    compiled: Vec<CompiledGauge>,
}

/// Field value with the pieces it was built from.
#[derive(Debug, Clone)]
pub struct FieldEval {
    pub field: DVector<f64>,
    /// Lifts of the undetermined directions (2D × free_count).
    pub free_lifts: DMatrix<f64>,
    /// Their horizontal parts, orthonormal (D × free_count).
    pub free_horizontal: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

pub fn assemble_soelvf<'a>(
    sys: &'a CompiledLagrangian,
    ledger: &ConstraintLedger,
    settings: &Settings,
    base: BaseConvention,
    gauge: Vec<GaugeTerm>,
) -> Result<Soelvf<'a>> {
    if ledger.termination == Termination::MaxOrderExceeded {
        return Err(LagError::Config(
            "constraint algorithm did not terminate; no field to assemble".into(),
        ));
    }
    let mut h = ledger.hierarchy(sys, settings);
    h.base = base;
    let compiled = gauge
        .iter()
        .map(|g| CompiledGauge {
            coefficient: Tape::compile(std::slice::from_ref(&g.coefficient), &sys.spec.params),
            direction: Tape::compile(&g.direction, &sys.spec.params),
        })
        .collect();
    let sv = Soelvf {
        h,
        n_f: ledger.n_f,
        free_count: ledger.free_count,
        gauge,
        compiled,
    };
    if !sv.gauge.is_empty() && sv.free_count == 0 {
        return Err(LagError::GaugeRejected {
            index: 0,
            reason: "no undetermined multipliers remain".into(),
        });
    }
    let checks: Vec<&PhasePoint> = ledger
        .surface_points
        .iter()
        .chain(&ledger.first_order_points)
        .collect();
    for u in checks {
        let Ok(parts) = sv.parts_without_gauge(u) else {
            continue;
        };
        for (i, g) in sv.compiled.iter().enumerate() {
            let d = DVector::from_vec(g.direction.eval(u.q.as_slice(), u.v.as_slice()));
            let dn = d.norm();
            if dn == 0.0 {
                continue;
            }
            let off = linalg::relative_distance_from_span(&d, &parts.free_horizontal);
            if off > 1e-6 {
                return Err(LagError::GaugeRejected {
                    index: i,
                    reason: format!(
                        "direction leaves the undetermined subspace (relative distance {off:.3e})"
                    ),
                });
            }
        }
    }
    Ok(sv)
}

impl<'a> Soelvf<'a> {
    pub fn sys(&self) -> &'a CompiledLagrangian {
        self.h.sys
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    fn parts_without_gauge(&self, u: &PhasePoint) -> Result<FieldEval> {
        if self.h.n0 == 0 {
            let t = eval_tensors(self.h.sys, u)?;
            let d = t.dim();
            let mut x = DVector::zeros(2 * d);
            x.rows_mut(0, d).copy_from(&u.v);
            x.rows_mut(d, d)
                .copy_from(&t.base_acceleration(self.h.tol_rank));
            return Ok(FieldEval {
                field: x,
                free_lifts: DMatrix::zeros(2 * d, 0),
                free_horizontal: DMatrix::zeros(d, 0),
                z: DMatrix::zeros(d, 0),
            });
        }
        let a = self.h.build_anchors(u, self.n_f)?;
        let lad = self.h.ladder(u, &a, self.n_f, false);
        Ok(FieldEval {
            free_lifts: &lad.frame.p * &lad.free,
            free_horizontal: &lad.frame.z * &lad.free,
            z: lad.frame.z,
            field: lad.field,
        })
    }

    pub fn eval_parts(&self, u: &PhasePoint) -> Result<FieldEval> {
        let mut parts = self.parts_without_gauge(u)?;
        for g in &self.compiled {
            let c = g.coefficient.eval(u.q.as_slice(), u.v.as_slice())[0];
            let d = DVector::from_vec(g.direction.eval(u.q.as_slice(), u.v.as_slice()));
            let coords = parts.free_horizontal.transpose() * d;
            parts.field += &parts.free_lifts * coords * c;
        }
        Ok(parts)
    }

    pub fn eval(&self, u: &PhasePoint) -> Result<DVector<f64>> {
        Ok(self.eval_parts(u)?.field)
    }

    /// Stacked constraint values of every order at `u`.
    pub fn constraint_values(&self, u: &PhasePoint) -> Result<DVector<f64>> {
        if self.n_f == 0 || self.h.n0 == 0 {
            return Ok(DVector::zeros(0));
        }
        let a = self.h.build_anchors(u, self.n_f - 1)?;
        Ok(self.h.stacked_values(self.n_f, u, &a))
    }

    /// Largest constraint value relative to the local scale.
    pub fn constraint_violation(&self, u: &PhasePoint) -> Result<f64> {
        Ok(linalg::max_abs_vec(&self.constraint_values(u)?) / self.h.scale(u))
    }

    /// Relative residual of the energy equation for the field at `u`.
    pub fn energy_equation_residual(&self, u: &PhasePoint) -> Result<f64> {
        let t = eval_tensors(self.h.sys, u)?;
        let x = self.eval(u)?;
        Ok(t.energy_residual(&x).norm() / t.scale())
    }

    /// Horizontal part minus v, with its component along ker M removed.
    /// The field is second order modulo kernel directions, so this vanishes.
    pub fn second_order_defect(&self, u: &PhasePoint) -> Result<f64> {
        let parts = self.eval_parts(u)?;
        let d = self.dim();
        let diff = parts.field.rows(0, d) - &u.v;
        let off = &diff - kernel::project(&parts.z, &diff);
        Ok(off.norm() / (1.0 + u.v.norm()))
    }

    pub fn project(&self, u: &PhasePoint, settings: &Settings) -> Result<PhasePoint> {
        if self.n_f == 0 {
            return Ok(u.clone());
        }
        project_onto(&self.h, u, self.n_f, settings, false)
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub t_end: f64,
    pub dt: f64,
    pub project_each_step: bool,
    pub ode: OdeOptions,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            t_end: 1.0,
            dt: 0.1,
            project_each_step: false,
            ode: OdeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySummary {
    pub outputs: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub max_energy_drift: f64,
    pub max_constraint: f64,
    /// Smallest overlap of aligned kernel bases between consecutive outputs.
    pub min_basis_overlap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    /// |E − E(0)| / (1 + |E(0)|).
    pub energy_drift: Vec<f64>,
    pub constraints: Vec<Vec<f64>>,
    /// Largest constraint value relative to the local scale.
    pub max_constraint: Vec<f64>,
    pub basis_overlap: Vec<f64>,
    pub summary: TrajectorySummary,
}

impl Trajectory {
    pub fn points(&self) -> Vec<PhasePoint> {
        self.q
            .iter()
            .zip(&self.v)
            .map(|(q, v)| PhasePoint::new(q.clone(), v.clone()))
            .collect()
    }

    pub fn last(&self) -> PhasePoint {
        PhasePoint::new(
            self.q.last().unwrap().clone(),
            self.v.last().unwrap().clone(),
        )
    }

    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let nc = self.constraints.first().map_or(0, |c| c.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("q{i}")));
        header.extend((1..=d).map(|i| format!("v{i}")));
        header.push("energy".into());
        header.push("energy_drift".into());
        header.extend((1..=nc).map(|i| format!("c{i}")));
        header.push("max_constraint".into());
        header.push("basis_overlap".into());
        let mut out = header.join(",");
        out.push('\n');
        for k in 0..self.times.len() {
            let mut row = vec![self.times[k]];
            row.extend(&self.q[k]);
            row.extend(&self.v[k]);
            row.push(self.energy[k]);
            row.push(self.energy_drift[k]);
            row.extend(&self.constraints[k]);
            row.push(self.max_constraint[k]);
            row.push(self.basis_overlap[k]);
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.12e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn integrate_flow(
    sv: &Soelvf,
    u0: &PhasePoint,
    opts: &FlowOptions,
    settings: &Settings,
) -> Result<Trajectory> {
    let f = |s: &DVector<f64>| sv.eval(&PhasePoint::from_state(s));
    let post = |s: &DVector<f64>| {
        if opts.project_each_step {
            Ok(sv.project(&PhasePoint::from_state(s), settings)?.state())
        } else {
            Ok(s.clone())
        }
    };
    let (states, stats) = ode::integrate(f, &u0.state(), opts.t_end, opts.dt, &opts.ode, post)?;

    let d = sv.dim();
    let mut traj = Trajectory {
        dim: d,
        times: vec![],
        q: vec![],
        v: vec![],
        energy: vec![],
        energy_drift: vec![],
        constraints: vec![],
        max_constraint: vec![],
        basis_overlap: vec![],
        summary: TrajectorySummary {
            outputs: states.len(),
            accepted_steps: stats.accepted,
            rejected_steps: stats.rejected,
            max_energy_drift: 0.0,
            max_constraint: 0.0,
            min_basis_overlap: 1.0,
        },
    };
    let mut prev_kernel: Option<kernel::KernelData> = None;
    let mut e0 = None;
    for (t, s) in &states {
        let u = PhasePoint::from_state(s);
        let tensors = eval_tensors(sv.sys(), &u).map_err(|e| LagError::StepFailure {
            t: *t,
            reason: e.to_string(),
        })?;
        let e0v = *e0.get_or_insert(tensors.energy);
        let drift = (tensors.energy - e0v).abs() / (1.0 + e0v.abs());
        let c = sv.constraint_values(&u)?;
        let cmax = linalg::max_abs_vec(&c) / tensors.scale();
        let kd = kernel::ker_omega_basis(&tensors, settings.tol_rank)?;
        let (overlap, kd) = match &prev_kernel {
            None => (1.0, kd),
            Some(prev) => {
                let aligned = kernel::align_basis(prev, &kd)?;
                (
                    kernel::basis_overlaps(prev, &aligned)
                        .into_iter()
                        .fold(1.0, f64::min),
                    aligned,
                )
            }
        };
        prev_kernel = Some(kd);
        traj.times.push(*t);
        traj.q.push(u.q.iter().copied().collect());
        traj.v.push(u.v.iter().copied().collect());
        traj.energy.push(tensors.energy);
        traj.energy_drift.push(drift);
        traj.constraints.push(c.iter().copied().collect());
        traj.max_constraint.push(cmax);
        traj.basis_overlap.push(overlap);
        traj.summary.max_energy_drift = traj.summary.max_energy_drift.max(drift);
        traj.summary.max_constraint = traj.summary.max_constraint.max(cmax);
        traj.summary.min_basis_overlap = traj.summary.min_basis_overlap.min(overlap);
    }
    Ok(traj)
}

/// σ_P(ε, u₀): the flow of a generator field for parameter ε.
pub fn symmetry_flow(
    sys: &CompiledLagrangian,
    n0: usize,
    generator: &GeneratorField,
    eps: f64,
    u0: &PhasePoint,
    opts: &OdeOptions,
) -> Result<PhasePoint> {
    if eps == 0.0 {
        return Ok(u0.clone());
    }
    let sign = eps.signum();
    let f = |s: &DVector<f64>| Ok(generator.eval(sys, n0, &PhasePoint::from_state(s))? * sign);
    let (out, _) = ode::integrate(
        f,
        &u0.state(),
        eps.abs(),
        eps.abs(),
        opts,
        |s| Ok(s.clone()),
    )?;
    Ok(PhasePoint::from_state(&out.last().unwrap().1))
}

/// Same flow by fixed-step RK4, so that it is a smooth function of `u0`.
pub fn symmetry_flow_fixed(
    sys: &CompiledLagrangian,
    n0: usize,
    generator: &GeneratorField,
    eps: f64,
    u0: &PhasePoint,
) -> Result<PhasePoint> {
    let steps = ((eps.abs() / 2e-3).ceil() as usize).max(32);
    let f = |s: &DVector<f64>| generator.eval(sys, n0, &PhasePoint::from_state(s));
    Ok(PhasePoint::from_state(&ode::rk4(
        f,
        &u0.state(),
        eps,
        steps,
    )?))
}

/// max over points of ‖Ω([X, P])‖ / (1 + ‖Ω‖), the bracket measured in the
/// quotient by ker Ω.
pub fn bracket_residual(
    sv: &Soelvf,
    generator: &GeneratorField,
    points: &[PhasePoint],
    step: f64,
) -> Result<f64> {
    let sys = sv.sys();
    let n0 = sv.h.n0;
    let mut worst: f64 = 0.0;
    for u in points {
        let s = u.state();
        let x = sv.eval(u)?;
        let p = generator.eval(sys, n0, u)?;
        let fx = |w: &DVector<f64>| {
            sv.eval(&PhasePoint::from_state(w))
                .unwrap_or_else(|_| w * f64::NAN)
        };
        let fp = |w: &DVector<f64>| {
            generator
                .eval(sys, n0, &PhasePoint::from_state(w))
                .unwrap_or_else(|_| w * f64::NAN)
        };
        let br = fd::jvp(fp, &s, &x, step) - fd::jvp(fx, &s, &p, step);
        let t = eval_tensors(sys, u)?;
        let r = (t.omega.transpose() * br).norm() / (1.0 + t.omega.norm());
        if !r.is_finite() {
            return Err(LagError::StepFailure {
                t: 0.0,
                reason: "bracket stencil left the admissible set".into(),
            });
        }
        worst = worst.max(r);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitCheck {
    pub eps: f64,
    /// Largest constraint value along the transported curve.
    pub image_constraint: f64,
    /// Largest relative energy-equation residual of the transported tangent.
    pub energy_residual: f64,
    pub samples: usize,
}

/// Transports a solution curve by σ_P(ε, ·) and checks that the image is again
/// a solution: it stays on the final constraint surface and its tangent
/// Dσ·X satisfies the energy equation.
pub fn orbit_map_check(
    sv: &Soelvf,
    generator: &GeneratorField,
    eps: f64,
    u0: &PhasePoint,
    flow: &FlowOptions,
    settings: &Settings,
) -> Result<OrbitCheck> {
    let sys = sv.sys();
    let n0 = sv.h.n0;
    let traj = integrate_flow(sv, u0, flow, settings)?;
    let sigma = |s: &DVector<f64>| {
        symmetry_flow_fixed(sys, n0, generator, eps, &PhasePoint::from_state(s))
            .map(|p| p.state())
            .unwrap_or_else(|_| s * f64::NAN)
    };
    let mut check = OrbitCheck {
        eps,
        image_constraint: 0.0,
        energy_residual: 0.0,
        samples: 0,
    };
    for u in traj.points() {
        let w = symmetry_flow_fixed(sys, n0, generator, eps, &u)?;
        let x = sv.eval(&u)?;
        let y = fd::jvp(sigma, &u.state(), &x, settings.fd_step);
        let t = eval_tensors(sys, &w)?;
        check.energy_residual = check
            .energy_residual
            .max(t.energy_residual(&y).norm() / t.scale());
        check.image_constraint = check.image_constraint.max(sv.constraint_violation(&w)?);
        check.samples += 1;
    }
    Ok(check)
}

//! Built-in systems and the reproduction harness for their symmetry table.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::compile::CompiledLagrangian;
use crate::config::Settings;
use crate::constraints::{
    project_to_constraint_surface, run_constraint_algorithm, seed_points, ConstraintLedger,
    Hierarchy,
};
use crate::error::{LagError, Result};
use crate::expr::{differentiate, Var};
use crate::geometry::{eval_tensors, PhasePoint};
use crate::sampling::Sampler;
use crate::spec::SystemSpec;
use crate::symmetry::{symmetry_report, GeneratorField, SymmetryReport};

pub const BUILTIN_NAMES: [&str; 6] = [
    "oscillator",
    "s1_conformal",
    "s1_spherical",
    "s1_generic",
    "s2",
    "s3",
];

/// Rows of the symmetry table, in table order.
pub const TABLE1_SYSTEMS: [&str; 5] = ["s1_conformal", "s1_spherical", "s1_generic", "s2", "s3"];

pub const TABLE1_COLUMNS: [&str; 5] = ["ker/G", "Sym", "SymL", "I[1]", "Sol"];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "oscillator" => include_str!("../systems/oscillator.lag"),
        "s1_conformal" => include_str!("../systems/s1_conformal.lag"),
        "s1_spherical" => include_str!("../systems/s1_spherical.lag"),
        "s1_generic" => include_str!("../systems/s1_generic.lag"),
        "s2" => include_str!("../systems/s2.lag"),
        "s3" => include_str!("../systems/s3.lag"),
        _ => return None,
    })
}

#[derive(Debug, Clone)]
pub struct BuiltinExample {
    pub name: &'static str,
    pub spec: SystemSpec,
    /// (ker/G, Sym, SymL, I[1], Sol).
    pub expected: [usize; 5],
}

pub fn builtin(name: &str) -> Result<BuiltinExample> {
    let (name, src) = BUILTIN_NAMES
        .iter()
        .find(|&&n| n == name)
        .and_then(|&n| builtin_source(n).map(|s| (n, s)))
        .ok_or_else(|| LagError::UnknownBuiltin(name.to_string()))?;
    let expected = match name {
        "oscillator" => [0, 0, 0, 0, 0],
        "s1_conformal" => [1, 1, 1, 0, 1],
        "s1_spherical" => [1, 1, 0, 1, 0],
        "s1_generic" => [1, 0, 0, 1, 0],
        "s2" => [2, 1, 1, 1, 1],
        _ => [2, 2, 2, 0, 2],
    };
    Ok(BuiltinExample {
        name,
        spec: SystemSpec::parse(src)?,
        expected,
    })
}

impl BuiltinExample {
    pub fn compile(&self) -> CompiledLagrangian {
        CompiledLagrangian::new(self.spec.clone())
    }

    /// Closed-form generator fields spanning Sym, as lifts of horizontal
    /// directions in ker M.
    pub fn sym_generators(&self, sys: &CompiledLagrangian) -> Vec<(&'static str, GeneratorField)> {
        let lift = |exprs: &[String]| {
            let parsed: Vec<_> = exprs
                .iter()
                .map(|e| sys.spec.parse_expr(e).expect("built-in direction"))
                .collect();
            GeneratorField::lift_of(sys, &parsed)
        };
        let d = sys.dim();
        let comps = |f: &dyn Fn(usize) -> String| (1..=d).map(f).collect::<Vec<_>>();
        match self.name {
            "s1_conformal" | "s1_spherical" => {
                vec![("P1", lift(&comps(&|i| format!("q[{i}]/norm(q)"))))]
            }
            "s2" => vec![("P+", lift(&comps(&|i| format!("q[{i}]"))))],
            "s3" => vec![
                ("U1", lift(&comps(&|i| format!("q[{i}]/norm(q)")))),
                (
                    "U2",
                    lift(&comps(&|i| {
                        format!("(v[{i}] - dot(q,v)*q[{i}]/dot(q,q))/sqrt(dot(v,v) - dot(q,v)^2/dot(q,q))")
                    })),
                ),
            ],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub ledger: ConstraintLedger,
    pub symmetry: SymmetryReport,
}

/// Constraint algorithm followed by symmetry classification.
pub fn analyze(sys: &CompiledLagrangian, settings: &Settings) -> Result<Analysis> {
    settings.validate()?;
    let seeds = seed_points(sys, settings)?;
    let ledger = run_constraint_algorithm(sys, &seeds, settings)?;
    let symmetry = symmetry_report(sys, &ledger, settings)?;
    Ok(Analysis { ledger, symmetry })
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Row {
    pub name: String,
    pub expected: [usize; 5],
    /// Computed row; a Sym dimension that could not be decided is null.
    pub computed: Option<[Option<usize>; 5]>,
    /// Names of the cells that differ, with both values.
    pub mismatches: Vec<String>,
    pub error: Option<String>,
    pub seconds: f64,
    pub analysis: Option<Analysis>,
}

impl Table1Row {
    pub fn matches(&self) -> bool {
        self.error.is_none() && self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
    pub all_match: bool,
    pub seconds: f64,
}

fn table_row(name: &str, settings: &Settings) -> Table1Row {
    let start = Instant::now();
    let ex = builtin(name).expect("table system is built in");
    let sys = ex.compile();
    let mut row = Table1Row {
        name: name.to_string(),
        expected: ex.expected,
        computed: None,
        mismatches: vec![],
        error: None,
        seconds: 0.0,
        analysis: None,
    };
    match analyze(&sys, settings) {
        Ok(a) => {
            let r = &a.symmetry;
            let got = [
                Some(r.n0),
                r.dim_sym,
                Some(r.dim_sym_l),
                Some(r.i1),
                Some(r.dim_sol),
            ];
            for (k, col) in TABLE1_COLUMNS.iter().enumerate() {
                if got[k] != Some(ex.expected[k]) {
                    let shown = got[k].map_or("undetermined".to_string(), |x| x.to_string());
                    row.mismatches.push(format!(
                        "{name}.{col}: expected {}, computed {shown}",
                        ex.expected[k]
                    ));
                }
            }
            row.computed = Some(got);
            row.analysis = Some(a);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row.seconds = start.elapsed().as_secs_f64();
    row
}

pub fn reproduce_table1(settings: &Settings) -> Table1Report {
    let start = Instant::now();
    let rows: Vec<Table1Row> = TABLE1_SYSTEMS
        .par_iter()
        .map(|n| table_row(n, settings))
        .collect();
    let all_match = rows.iter().all(Table1Row::matches);
    Table1Report {
        rows,
        all_match,
        seconds: start.elapsed().as_secs_f64(),
    }
}

impl Table1Report {
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14}", "system");
        for c in TABLE1_COLUMNS {
            out.push_str(&format!("{c:>8}"));
        }
        out.push_str("   status\n");
        for r in &self.rows {
            out.push_str(&format!("{:<14}", r.name));
            for k in 0..5 {
                let cell = match &r.computed {
                    Some(c) => c[k].map_or("?".to_string(), |x| x.to_string()),
                    None => "-".to_string(),
                };
                out.push_str(&format!("{cell:>8}"));
            }
            let status = match (&r.error, r.mismatches.is_empty()) {
                (Some(e), _) => format!("error: {e}"),
                (None, true) => "ok".to_string(),
                (None, false) => r.mismatches.join("; "),
            };
            out.push_str(&format!("   {status} ({:.2}s)\n", r.seconds));
        }
        out.push_str(&format!(
            "{} in {:.2}s\n",
            if self.all_match {
                "all cells match"
            } else {
                "MISMATCH"
            },
            self.seconds
        ));
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AppendixReport {
    pub points: usize,
    /// Radii |q| of the projected points.
    pub radii: Vec<f64>,
    /// Largest Π-projected acceleration difference between the spherical
    /// system and the scale-invariant one, relative to the local scale.
    pub max_acceleration_residual: f64,
    /// Largest |Π ∂V_Sph/∂q|.
    pub max_projected_radial_gradient: f64,
    /// Largest |Π ∂V_AS/∂q − ∂V_AS/∂q|.
    pub max_angular_identity_residual: f64,
    /// Largest first-order constraint value (dV_Sph/d|q| at the point).
    pub max_constraint: f64,
}

/// On the critical sphere of the spherical potential, its projected dynamics
/// coincide with those of the scale-invariant system carrying only the
/// angular potential.
pub fn appendix_check(settings: &Settings, points: usize) -> Result<AppendixReport> {
    let sph_ex = builtin("s1_spherical")?;
    let conf_ex = builtin("s1_conformal")?;
    let sph = sph_ex.compile();
    let conf = conf_ex.compile();
    let radial = sph.spec.parse_expr("0.5*kappa*(norm(q) - 1)^2")?;
    let angular = sph.spec.parse_expr("k*q[3]/norm(q)")?;
    let d = sph.dim();
    let grad = |e| {
        (0..d)
            .map(|i| differentiate(e, Var::Q(i)))
            .collect::<Vec<_>>()
    };
    let (g_rad, g_ang) = (grad(&radial), grad(&angular));

    let h = Hierarchy::new(&sph, 1, settings);
    let mut sampler = Sampler::new(settings.seed.wrapping_add(2));
    let seeds = sampler.admissible(&sph, 4 * points)?;
    let projected: Vec<PhasePoint> = seeds
        .par_iter()
        .filter_map(|s| project_to_constraint_surface(&h, s, 1, settings).ok())
        .collect();
    if projected.len() < points {
        return Err(LagError::SurfaceNotFound {
            order: 1,
            reason: format!(
                "{} of {} seeds reached the critical sphere",
                projected.len(),
                seeds.len()
            ),
        });
    }
    let mut rep = AppendixReport {
        points,
        radii: vec![],
        max_acceleration_residual: 0.0,
        max_projected_radial_gradient: 0.0,
        max_angular_identity_residual: 0.0,
        max_constraint: 0.0,
    };
    for u in projected.iter().take(points) {
        let (q, v) = (u.q.as_slice(), u.v.as_slice());
        let qhat = &u.q / u.q.norm();
        let proj = |x: &DVector<f64>| x - &qhat * qhat.dot(x);
        let ts = eval_tensors(&sph, u)?;
        let tc = eval_tensors(&conf, u)?;
        let a_sph = proj(&ts.base_acceleration(settings.tol_rank));
        let a_conf = proj(&tc.base_acceleration(settings.tol_rank));
        rep.max_acceleration_residual = rep
            .max_acceleration_residual
            .max((a_sph - a_conf).norm() / ts.scale().max(tc.scale()));
        let eval = |g: &[crate::expr::Expr]| {
            DVector::from_iterator(d, g.iter().map(|e| e.eval(q, v, &sph.spec.params)))
        };
        let gr = eval(&g_rad);
        let ga = eval(&g_ang);
        rep.max_projected_radial_gradient = rep.max_projected_radial_gradient.max(proj(&gr).norm());
        rep.max_angular_identity_residual = rep
            .max_angular_identity_residual
            .max((proj(&ga) - &ga).norm());
        rep.max_constraint = rep.max_constraint.max(qhat.dot(&ts.force_term()).abs());
        rep.radii.push(u.q.norm());
    }
    Ok(rep)
}

//! Versioned JSON report of a full analysis.

use serde::Serialize;

use crate::compile::CompiledLagrangian;
use crate::config::Settings;
use crate::error::Result;
use crate::examples::{analyze, Analysis};
use crate::geometry::eval_tensors;
use crate::kernel::ker_omega_basis;
use crate::linalg;
use crate::sampling::Sampler;
use crate::spec::DomainBox;

pub const SCHEMA: &str = "lagsym-report/1";

/// Kernel dimensions at sampled points, counted three ways.
#[derive(Debug, Clone, Serialize)]
pub struct KernelSurvey {
    pub samples: usize,
    pub n0_votes_agree: bool,
    /// dim ker Ω from the SVD, per point.
    pub svd_dims: Vec<usize>,
    /// 2 N₀ per point.
    pub predicted_two_n0: Vec<usize>,
    /// N₀ + dim ker F̄ per point.
    pub predicted_reduced_force: Vec<usize>,
    pub all_counts_agree: bool,
    /// Smallest singular-value ratio across the rank cut of Ω.
    pub min_gap: f64,
    /// max ‖M w + F z‖ / scale over the lifts.
    pub max_lift_residual: f64,
    /// max ‖Pᵀ Ω‖ / (1 + ‖Ω‖) over the lifts.
    pub max_lift_omega_residual: f64,
}

pub fn kernel_survey(
    sys: &CompiledLagrangian,
    settings: &Settings,
    samples: usize,
) -> Result<KernelSurvey> {
    let points = Sampler::new(settings.seed.wrapping_add(3)).admissible(sys, samples)?;
    let mut s = KernelSurvey {
        samples,
        n0_votes_agree: true,
        svd_dims: vec![],
        predicted_two_n0: vec![],
        predicted_reduced_force: vec![],
        all_counts_agree: true,
        min_gap: f64::INFINITY,
        max_lift_residual: 0.0,
        max_lift_omega_residual: 0.0,
    };
    let mut first_n0 = None;
    for u in &points {
        let t = eval_tensors(sys, u)?;
        let kd = ker_omega_basis(&t, settings.tol_rank)?;
        s.n0_votes_agree &= *first_n0.get_or_insert(kd.n0()) == kd.n0();
        s.all_counts_agree &= kd.counts_agree();
        s.svd_dims.push(kd.svd_dim());
        s.predicted_two_n0.push(kd.predicted_two_n0());
        s.predicted_reduced_force
            .push(kd.predicted_by_reduced_force);
        s.min_gap = s.min_gap.min(kd.omega_gap.min(kd.mass_gap));
        let scale = t.scale();
        for r in &kd.lift_residuals {
            s.max_lift_residual = s.max_lift_residual.max(r / scale);
        }
        let po = kd.p_reps.transpose() * &t.omega;
        s.max_lift_omega_residual = s
            .max_lift_omega_residual
            .max(linalg::max_abs(&po) / (1.0 + t.omega.norm()));
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub settings: Settings,
    pub domain: DomainBox,
    pub guards: Vec<String>,
    pub package_version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub system: String,
    pub dim: usize,
    pub kernel: KernelSurvey,
    pub ledger: crate::constraints::ConstraintLedger,
    pub symmetry: crate::symmetry::SymmetryReport,
    /// (ker/G, Sym, SymL, I[1], Sol); Sym is null when undetermined.
    pub row: [Option<usize>; 5],
    pub provenance: Provenance,
}

pub fn build_report(sys: &CompiledLagrangian, settings: &Settings) -> Result<Report> {
    let kernel = kernel_survey(sys, settings, settings.samples)?;
    let Analysis { ledger, symmetry } = analyze(sys, settings)?;
    let row = [
        Some(symmetry.n0),
        symmetry.dim_sym,
        Some(symmetry.dim_sym_l),
        Some(symmetry.i1),
        Some(symmetry.dim_sol),
    ];
    Ok(Report {
        schema: SCHEMA,
        system: sys.spec.to_text(),
        dim: sys.dim(),
        kernel,
        ledger,
        symmetry,
        row,
        provenance: Provenance {
            seed: settings.seed,
            settings: settings.clone(),
            domain: sys.spec.domain.clone(),
            guards: sys
                .spec
                .guards
                .iter()
                .map(|g| format!("{} >= {}", g.expr, g.threshold))
                .collect(),
            package_version: env!("CARGO_PKG_VERSION"),
        },
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let cell = |x: Option<usize>| x.map_or("undetermined".to_string(), |x| x.to_string());
        let mut out = String::new();
        out.push_str(&format!("dimension            {}\n", self.dim));
        out.push_str(&format!("N0                   {}\n", self.ledger.n0));
        out.push_str(&format!(
            "ker Omega            svd {:?}, 2N0 and N0+dim ker Fbar agree: {}\n",
            self.kernel
                .svd_dims
                .iter()
                .min()
                .zip(self.kernel.svd_dims.iter().max()),
            self.kernel.all_counts_agree
        ));
        for o in &self.ledger.orders {
            out.push_str(&format!(
                "order {:<2}             constraints {}  rank {}  independent {}\n",
                o.order, o.constraint_count, o.rank, o.independent
            ));
        }
        out.push_str(&format!(
            "termination          {:?} at n_F = {}\n",
            self.ledger.termination, self.ledger.n_f
        ));
        out.push_str(&format!(
            "free multipliers     {}\n",
            self.ledger.free_count
        ));
        out.push_str(&format!("dim Sym              {}\n", cell(self.row[1])));
        out.push_str(&format!("dim SymL             {}\n", cell(self.row[2])));
        out.push_str(&format!("I[1]                 {}\n", cell(self.row[3])));
        out.push_str(&format!("dim Sol              {}\n", cell(self.row[4])));
        out.push_str(&format!("seed                 {}\n", self.provenance.seed));
        out
    }
}

//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::time::Instant;

use common::*;
use lagsym::constraints::{gamma_matrix, BaseConvention};
use lagsym::dynamics::{assemble_soelvf, bracket_residual, integrate_flow, FlowOptions};
use lagsym::examples::{appendix_check, builtin, reproduce_table1, BUILTIN_NAMES};
use lagsym::linalg;
use lagsym::report::kernel_survey;
use lagsym::sampling::Sampler;
use lagsym::symmetry::{null_test, sample_points, symmetry_report};
use lagsym::{LagError, PhasePoint, Settings};
use nalgebra::DVector;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn table1(s: &Settings) -> Outcome {
    let rep = reproduce_table1(s);
    let cells: usize = rep
        .rows
        .iter()
        .map(|r| {
            if r.error.is_some() {
                0
            } else {
                5 - r.mismatches.len()
            }
        })
        .sum();
    let mut detail = format!(
        "{cells}/25 cells match in {:.1} s (limit 60 s)",
        rep.seconds
    );
    for r in rep.rows.iter().filter(|r| !r.matches()) {
        detail.push_str(&format!("; {}: {:?} {:?}", r.name, r.mismatches, r.error));
    }
    outcome(rep.all_match && rep.seconds < 60.0, detail)
}

fn kernel_dimension(s: &Settings) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for name in BUILTIN_NAMES {
        let sys = system(name);
        match kernel_survey(&sys, s, 64) {
            Ok(k) => {
                let exact = k
                    .svd_dims
                    .iter()
                    .zip(&k.predicted_two_n0)
                    .all(|(a, b)| a == b);
                let ok = exact && k.all_counts_agree && k.min_gap >= 1e3 && k.samples >= 64;
                pass &= ok;
                parts.push(format!(
                    "{name} dim={} gap={:.1e}",
                    k.svd_dims[0], k.min_gap
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    outcome(pass, format!("64 points each: {}", parts.join(", ")))
}

fn lift_consistency(s: &Settings) -> Outcome {
    let mut worst: (f64, f64) = (0.0, 0.0);
    for name in BUILTIN_NAMES {
        let k = kernel_survey(&system(name), s, 64).unwrap();
        worst.0 = worst.0.max(k.max_lift_residual);
        worst.1 = worst.1.max(k.max_lift_omega_residual);
    }
    outcome(
        worst.0 <= 1e-8 && worst.1 <= 1e-8,
        format!(
            "max |Mw+Fz|/scale = {:.1e}, max |P^T Omega|/(1+|Omega|) = {:.1e} (limit 1e-8)",
            worst.0, worst.1
        ),
    )
}

fn gamma_symmetry(s: &Settings) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["s1_spherical", "s2"] {
        let sys = system(name);
        let l = ledger(&sys, s);
        let h = l.hierarchy(&sys, s);
        let mut worst: f64 = 0.0;
        for u in &l.first_order_points {
            let g = gamma_matrix(&h, u, 1, 1e-8).unwrap();
            worst = worst.max(g.asymmetry);
        }
        let n = l.first_order_points.len();
        pass &= n >= 8 && worst <= 1e-6;
        parts.push(format!("{name}: {n} points, max {worst:.1e}"));
    }
    outcome(
        pass,
        format!("|G-G^T|/(1+|G|) {} (limit 1e-6)", parts.join(", ")),
    )
}

fn sym_l_block(s: &Settings) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["s1_conformal", "s2", "s3"] {
        let sys = system(name);
        let l = ledger(&sys, s);
        let rep = symmetry_report(&sys, &l, s).unwrap();
        let h = l.hierarchy(&sys, s);
        let set = sample_points(&h, s).unwrap();
        let mut worst: f64 = 0.0;
        for p in &set.on_shell {
            let (c, ev) = null_test(&p.sym_l_matrix(), s.eps_id * p.scale, p.scale);
            pass &= ev.dim >= rep.dim_sym_l;
            let g = p.gamma_matrix();
            let block = linalg::max_abs(&(&g * &c)).max(linalg::max_abs(&(c.transpose() * &g)));
            worst = worst.max(block / p.scale);
        }
        let free_ok = l.free_count >= rep.dim_sym_l;
        pass &= worst <= 1e-8 && free_ok && !set.on_shell.is_empty();
        parts.push(format!(
            "{name}: block {worst:.1e}, free {} >= SymL {}",
            l.free_count, rep.dim_sym_l
        ));
    }
    outcome(pass, format!("{} (limit 1e-8)", parts.join(", ")))
}

fn closed_forms(s: &Settings) -> Outcome {
    let sys = system("s1_generic");
    let l = ledger(&sys, s);
    let sv = assemble_soelvf(&sys, &l, s, BaseConvention::Reduced, vec![]).unwrap();
    let pts = on_shell(&sys, &l, s, 16);
    let e1 = pts
        .iter()
        .map(|u| {
            let o = s1_closed_form_field(u);
            modulo(&(sv.eval(u).unwrap() - &o), &s1_vertical(u)).norm() / o.norm()
        })
        .fold(0.0, f64::max);
    let n1 = pts.len();

    let sys = system("s2");
    let l = ledger(&sys, s);
    let sv = assemble_soelvf(&sys, &l, s, BaseConvention::Reduced, vec![]).unwrap();
    let pts = on_shell(&sys, &l, s, 16);
    let e2 = pts
        .iter()
        .map(|u| {
            let o = s2_closed_form_field(u);
            modulo(&(sv.eval(u).unwrap() - &o), &s2_gauge_span(u)).norm() / o.norm()
        })
        .fold(0.0, f64::max);
    let n2 = pts.len();
    outcome(
        n1 >= 16 && n2 >= 16 && e1 <= 1e-6 && e2 <= 1e-6,
        format!("s1_generic coefficient {e1:.1e} ({n1} pts), s2 determined coefficient {e2:.1e} ({n2} pts) (limit 1e-6)"),
    )
}

fn dynamics_monitors(s: &Settings) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["s1_conformal", "s2"] {
        let sys = system(name);
        let l = ledger(&sys, s);
        let sv = assemble_soelvf(&sys, &l, s, BaseConvention::Velocity, vec![]).unwrap();
        let opts = FlowOptions {
            t_end: 5.0,
            dt: 0.25,
            ..FlowOptions::default()
        };
        // orbits may leave the admissible set through a guard; those starts are skipped
        let mut skipped = 0;
        let mut done = None;
        for u0 in on_shell(&sys, &l, s, 16) {
            match integrate_flow(&sv, &u0, &opts, s) {
                Ok(t) => {
                    done = Some(t);
                    break;
                }
                Err(LagError::StepFailure { .. }) => skipped += 1,
                Err(e) => {
                    parts.push(format!("{name}: {e}"));
                    break;
                }
            }
        }
        match done {
            Some(t) => {
                let sm = &t.summary;
                pass &= sm.max_energy_drift <= 1e-6 && sm.max_constraint <= 1e-6;
                parts.push(format!(
                    "{name}: drift {:.1e}, |gamma| {:.1e} ({skipped} starts left the guards)",
                    sm.max_energy_drift, sm.max_constraint
                ));
            }
            None => pass = false,
        }
    }
    outcome(
        pass,
        format!(
            "t in [0,5], no projection: {} (limit 1e-6)",
            parts.join(", ")
        ),
    )
}

fn brackets(s: &Settings) -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for name in ["s2", "s3"] {
        let ex = builtin(name).unwrap();
        let sys = ex.compile();
        let l = ledger(&sys, s);
        let rep = symmetry_report(&sys, &l, s).unwrap();
        let sv = assemble_soelvf(&sys, &l, s, BaseConvention::Velocity, vec![]).unwrap();
        let pts = on_shell(&sys, &l, s, 8);
        let gens = ex.sym_generators(&sys);
        pass &= Some(gens.len()) == rep.dim_sym;
        // the closed-form generators must lie in the classified span
        let hor = rep.sym.horizontal_matrix();
        let reference = sample_points(&l.hierarchy(&sys, s), s)
            .unwrap()
            .on_shell
            .remove(0)
            .point;
        for (label, g) in &gens {
            let x = g.eval(&sys, l.n0, &reference).unwrap();
            let dist =
                linalg::relative_distance_from_span(&x.rows(0, sys.dim()).into_owned(), &hor);
            let r = bracket_residual(&sv, g, &pts, s.fd_step).unwrap();
            pass &= r <= 1e-5 && dist <= 1e-6;
            parts.push(format!("{name} {label}: {r:.1e}"));
        }
    }
    outcome(pass, format!("{} (limit 1e-5)", parts.join(", ")))
}

fn appendix(s: &Settings) -> Outcome {
    match appendix_check(s, 16) {
        Ok(r) => outcome(
            r.points >= 16
                && r.max_acceleration_residual <= 1e-8
                && r.max_projected_radial_gradient <= 1e-12
                && r.max_angular_identity_residual <= 1e-12
                && r.max_constraint <= 1e-10,
            format!(
                "16 points at |q|=1: acceleration {:.1e}, radial identity {:.1e}, angular identity {:.1e}, constraint {:.1e}",
                r.max_acceleration_residual,
                r.max_projected_radial_gradient,
                r.max_angular_identity_residual,
                r.max_constraint
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn gradients(s: &Settings) -> Outcome {
    let mut worst: f64 = 0.0;
    for name in BUILTIN_NAMES {
        let sys = system(name);
        let d = sys.dim();
        for u in Sampler::new(s.seed.wrapping_add(9))
            .admissible(&sys, 10)
            .unwrap()
        {
            let raw = sys.eval_raw(u.q.as_slice(), u.v.as_slice());
            let st = u.state();
            let at = |w: &DVector<f64>| {
                let p = PhasePoint::from_state(w);
                sys.eval_raw(p.q.as_slice(), p.v.as_slice())
            };
            let mut check = |symbolic: &[f64], f: &dyn Fn(&DVector<f64>) -> f64, offset: usize| {
                let scale = 1.0 + symbolic.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for (i, &sym) in symbolic.iter().enumerate() {
                    let mut e = DVector::zeros(2 * d);
                    e[offset + i] = 1.0;
                    let fd = derivative(f, &st, &e);
                    worst = worst.max((sym - fd).abs() / scale);
                }
            };
            check(&raw.dl_dv, &|w| at(w).lagrangian, d);
            check(&raw.de_dq, &|w| at(w).energy, 0);
            check(&raw.de_dv, &|w| at(w).energy, d);
            for j in 0..d {
                let row: Vec<f64> = (0..d).map(|i| raw.mass[j * d + i]).collect();
                check(&row, &|w| at(w).dl_dv[j], d);
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("10 points per system, max relative error {worst:.1e} (limit 1e-6)"),
    )
}

fn regular_control(s: &Settings) -> Outcome {
    let sys = system("oscillator");
    let l = ledger(&sys, s);
    let rep = symmetry_report(&sys, &l, s).unwrap();
    let sv = assemble_soelvf(&sys, &l, s, BaseConvention::Velocity, vec![]).unwrap();
    let tau = 2.0 * std::f64::consts::PI;
    let t = integrate_flow(
        &sv,
        &PhasePoint::new(vec![1.0], vec![0.0]),
        &FlowOptions {
            t_end: tau,
            dt: 0.1,
            ..FlowOptions::default()
        },
        s,
    )
    .unwrap();
    let err = t
        .times
        .iter()
        .enumerate()
        .map(|(k, t_k)| {
            (t.q[k][0] - t_k.cos())
                .abs()
                .max((t.v[k][0] + t_k.sin()).abs())
        })
        .fold(0.0, f64::max);
    outcome(
        l.n0 == 0 && l.is_empty() && rep.row() == [0; 5] && err <= 1e-6,
        format!(
            "N0 = {}, ledger empty: {}, row {:?}, max deviation from cos/sin {err:.1e}",
            l.n0,
            l.is_empty(),
            rep.row()
        ),
    )
}

type Criterion = (&'static str, fn(&Settings) -> Outcome);

fn main() {
    let settings = Settings::default();
    let criteria: [Criterion; 11] = [
        ("table1-reproduction", table1),
        ("kernel-dimension", kernel_dimension),
        ("lift-consistency", lift_consistency),
        ("gamma-symmetry-on-shell", gamma_symmetry),
        ("symL-block-vanishing", sym_l_block),
        ("determined-gauge-closed-forms", closed_forms),
        ("dynamics-monitors", dynamics_monitors),
        ("sym-bracket", brackets),
        ("appendix-identity", appendix),
        ("gradient-integrity", gradients),
        ("regular-control", regular_control),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = std::panic::catch_unwind(|| f(&settings))
            .unwrap_or_else(|_| outcome(false, "panicked".to_string()));
        if !o.pass {
            failed += 1;
        }
        println!(
            "acceptance {:>2} {:<30} {} {} [{:.1}s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

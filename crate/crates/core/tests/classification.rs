mod common;

use common::*;
use lagsym::examples::{analyze, builtin, TABLE1_SYSTEMS};
use lagsym::linalg::relative_distance_from_span;
use lagsym::sampling::Sampler;
use lagsym::symmetry::{
    classify_action_symmetries, classify_el_symmetries, sample_points, SymmetryClass,
};
use lagsym::{PhasePoint, Settings};
use nalgebra::{DMatrix, DVector};

/// Horizontal directions that span Sym at `u`, written out by hand.
fn expected_sym_span(name: &str, u: &PhasePoint) -> DMatrix<f64> {
    let qhat = &u.q / u.q.norm();
    match name {
        "s1_conformal" | "s1_spherical" => DMatrix::from_columns(&[qhat]),
        "s2" => DMatrix::from_columns(std::slice::from_ref(&u.q)),
        "s3" => {
            let pv = &u.v - &qhat * qhat.dot(&u.v);
            DMatrix::from_columns(&[qhat, pv])
        }
        _ => DMatrix::zeros(u.q.len(), 0),
    }
}

fn assert_span(class: &SymmetryClass, expected: &DMatrix<f64>, what: &str) {
    assert_eq!(class.dim, Some(expected.ncols()), "{what}");
    let got = class.horizontal_matrix();
    for c in expected.column_iter() {
        let d = relative_distance_from_span(&c.into_owned(), &got);
        assert!(
            d < 1e-6,
            "{what}: expected direction is {d:.3e} away from the computed span"
        );
    }
}

#[test]
fn classification_is_stable_under_reseeding_and_more_samples() {
    let base = Settings::default();
    let variants = [
        base.clone(),
        Settings {
            seed: base.seed.wrapping_add(17),
            ..base.clone()
        },
        Settings {
            samples: 2 * base.samples,
            ..base.clone()
        },
    ];
    for name in TABLE1_SYSTEMS {
        let ex = builtin(name).unwrap();
        let sys = ex.compile();
        for s in &variants {
            let a = analyze(&sys, s).unwrap();
            assert_eq!(
                a.symmetry.row(),
                ex.expected,
                "{name} seed {} samples {}",
                s.seed,
                s.samples
            );

            let set = sample_points(&a.ledger.hierarchy(&sys, s), s).unwrap();
            let reference = &set.on_shell[0].point;
            let sym = classify_el_symmetries(&set, s);
            assert_span(&sym, &expected_sym_span(name, reference), name);
        }
    }
}

#[test]
fn action_symmetries_are_equation_symmetries() {
    let s = Settings::default();
    for name in TABLE1_SYSTEMS {
        let sys = system(name);
        let a = analyze(&sys, &s).unwrap();
        let r = &a.symmetry;
        assert!(r.invariants_hold, "{name}");
        assert!(r.dim_sym_l <= r.dim_sym.unwrap(), "{name}");
        assert!(
            r.inclusion_residual <= s.eps_id,
            "{name}: {:.3e}",
            r.inclusion_residual
        );

        let set = sample_points(&a.ledger.hierarchy(&sys, &s), &s).unwrap();
        let sym = classify_el_symmetries(&set, &s).horizontal_matrix();
        let sym_l = classify_action_symmetries(&set, &s);
        for c in sym_l.horizontal_matrix().column_iter() {
            assert!(
                relative_distance_from_span(&c.into_owned(), &sym) < 1e-6,
                "{name}"
            );
        }
    }
}

#[test]
fn spherical_potential_is_not_an_action_symmetry() {
    let s = Settings::default();
    let sys = system("s1_spherical");
    let a = analyze(&sys, &s).unwrap();
    let set = sample_points(&a.ledger.hierarchy(&sys, &s), &s).unwrap();
    let sym_l = classify_action_symmetries(&set, &s);
    assert_eq!(sym_l.dim, Some(0));
    // γ = |q|·dV/d|q| is far from zero off the critical sphere
    assert!(sym_l.min_rejected.unwrap() > 1e3 * s.eps_id);
}

#[test]
fn interacting_pair_minus_direction_breaks_the_equations() {
    let s = Settings::default();
    let sys = system("s2");
    let l = ledger(&sys, &s);
    let points = on_shell(&sys, &l, &s, 16);
    assert_eq!(points.len(), 16);
    for u in &points {
        let along = derivative(s2_gamma_minus, &u.state(), &s2_minus(u));
        let expected = s2_gamma_minus_along_minus(u);
        assert!(
            (along - expected).abs() < 1e-8 * expected.abs().max(1.0),
            "{along} vs {expected}"
        );
        assert!(
            expected > 0.1,
            "alignment guard keeps the pairing away from zero"
        );
        // P₍₊₎ carries no such obstruction
        assert!(derivative(s2_gamma_minus, &u.state(), &s2_plus(u)).abs() < 1e-8);
    }
}

#[test]
fn dilations_leave_the_scale_invariant_actions_unchanged() {
    let mut rng = Sampler::new(5);
    for name in ["s1_conformal", "s2", "s3"] {
        let sys = system(name);
        for u in rng.admissible(&sys, 16).unwrap() {
            let l = sys.eval_raw(u.q.as_slice(), u.v.as_slice()).lagrangian;
            let scale = 1.0 + l.abs();
            for alpha in [0.5, 2.0] {
                let (q, v): (DVector<f64>, DVector<f64>) = (&u.q * alpha, &u.v * alpha);
                let la = sys.eval_raw(q.as_slice(), v.as_slice()).lagrangian;
                assert!((la - l).abs() <= 1e-10 * scale, "{name} α={alpha}");
            }
            if name == "s3" {
                for c in [0.5, 3.0] {
                    let v = &u.v * c;
                    let lc = sys.eval_raw(u.q.as_slice(), v.as_slice()).lagrangian;
                    assert!((lc - c * l).abs() <= 1e-10 * scale);
                }
            }
        }
    }
}

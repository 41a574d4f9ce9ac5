//! Derived quantities of a Lagrangian, built symbolically and compiled into
//! a single evaluation tape.

use crate::expr::{differentiate, mul, neg, simplify, sub, Expr, Var};
use crate::spec::SystemSpec;
use crate::tape::Tape;

/// Raw values of every compiled output at one point.
#[derive(Debug, Clone)]
pub struct RawEval {
    pub lagrangian: f64,
    pub energy: f64,
    pub dl_dv: Vec<f64>,
    pub de_dq: Vec<f64>,
    pub de_dv: Vec<f64>,
    /// Row-major D×D.
    pub mass: Vec<f64>,
    /// Row-major D×D.
    pub force: Vec<f64>,
    pub guards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CompiledLagrangian {
    pub spec: SystemSpec,
    pub dl_dq: Vec<Expr>,
    pub dl_dv: Vec<Expr>,
    pub energy: Expr,
    pub de_dq: Vec<Expr>,
    pub de_dv: Vec<Expr>,
    pub mass: Vec<Vec<Expr>>,
    pub force: Vec<Vec<Expr>>,
    tape: Tape,
}

impl CompiledLagrangian {
    pub fn new(spec: SystemSpec) -> Self {
        let d = spec.dim;
        let l = &spec.lagrangian;
        let dl_dq: Vec<Expr> = (0..d)
            .map(|a| simplify(&differentiate(l, Var::Q(a))))
            .collect();
        let dl_dv: Vec<Expr> = (0..d)
            .map(|a| simplify(&differentiate(l, Var::V(a))))
            .collect();

        let mut energy = neg(l);
        for (a, p) in dl_dv.iter().enumerate() {
            energy = &energy + &mul(&Expr::v(a), p);
        }
        let energy = simplify(&energy);
        let de_dq: Vec<Expr> = (0..d)
            .map(|a| simplify(&differentiate(&energy, Var::Q(a))))
            .collect();
        let de_dv: Vec<Expr> = (0..d)
            .map(|a| simplify(&differentiate(&energy, Var::V(a))))
            .collect();

        let zero = Expr::constant(0.0);
        let mut mass = vec![vec![zero.clone(); d]; d];
        let mut force = vec![vec![zero; d]; d];
        // mixed[a][b] = d^2 L / dv^a dq^b
        let mixed: Vec<Vec<Expr>> = dl_dv
            .iter()
            .map(|p| {
                (0..d)
                    .map(|b| simplify(&differentiate(p, Var::Q(b))))
                    .collect()
            })
            .collect();
        for a in 0..d {
            for b in a..d {
                let m = simplify(&differentiate(&dl_dv[a], Var::V(b)));
                mass[a][b] = m.clone();
                mass[b][a] = m;
                if a != b {
                    let f = simplify(&sub(&mixed[a][b], &mixed[b][a]));
                    force[b][a] = neg(&f);
                    force[a][b] = f;
                }
            }
        }

        let mut roots = vec![l.clone(), energy.clone()];
        roots.extend(dl_dv.iter().cloned());
        roots.extend(de_dq.iter().cloned());
        roots.extend(de_dv.iter().cloned());
        roots.extend(mass.iter().flatten().cloned());
        roots.extend(force.iter().flatten().cloned());
        roots.extend(spec.guards.iter().map(|g| g.expr.clone()));
        let tape = Tape::compile(&roots, &spec.params);

        CompiledLagrangian {
            spec,
            dl_dq,
            dl_dv,
            energy,
            de_dq,
            de_dv,
            mass,
            force,
            tape,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    pub fn eval_raw(&self, q: &[f64], v: &[f64]) -> RawEval {
        let d = self.dim();
        let out = self.tape.eval(q, v);
        let mut it = out.into_iter();
        let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
        let lagrangian = take(1)[0];
        let energy = take(1)[0];
        RawEval {
            lagrangian,
            energy,
            dl_dv: take(d),
            de_dq: take(d),
            de_dv: take(d),
            mass: take(d * d),
            force: take(d * d),
            guards: take(self.spec.guards.len()),
        }
    }

    /// Evaluates an arbitrary expression with this system's parameters.
    pub fn eval_expr(&self, e: &Expr, q: &[f64], v: &[f64]) -> f64 {
        e.eval(q, v, &self.spec.params)
    }
}

pub fn compile_system(spec: SystemSpec) -> CompiledLagrangian {
    CompiledLagrangian::new(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillator_quantities() {
        let spec = SystemSpec::parse("dim 1; param k=1; L = 0.5*v[1]^2 - 0.5*k*q[1]^2").unwrap();
        let sys = compile_system(spec);
        let r = sys.eval_raw(&[1.0], &[2.0]);
        assert_eq!(r.mass, vec![1.0]);
        assert_eq!(r.force, vec![0.0]);
        assert!((r.energy - 2.5).abs() < 1e-15);
        assert_eq!(sys.mass[0][0], Expr::constant(1.0));
    }

    #[test]
    fn mass_and_force_have_exact_symmetry() {
        let spec = SystemSpec::parse("dim 2; L = q[1]*v[2]*v[1] + sin(q[2])*v[1]^2 + q[1]^2*v[2]")
            .unwrap();
        let sys = compile_system(spec);
        let r = sys.eval_raw(&[0.3, -0.8], &[0.4, 1.1]);
        assert_eq!(r.mass[1], r.mass[2]);
        assert_eq!(r.force[1], -r.force[2]);
        assert_eq!(r.force[0], 0.0);
        // F_12 = d2L/dv1 dq2 - d2L/dv2 dq1 = 2 cos(q2) v1 - (v1 + 2 q1)
        let expected = 2.0 * (-0.8f64).cos() * 0.4 - (0.4 + 0.6);
        assert!((r.force[1] - expected).abs() < 1e-14);
    }
}

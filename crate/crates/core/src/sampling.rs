//! Seeded rejection sampling of admissible phase points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compile::CompiledLagrangian;
use crate::error::{LagError, Result};
use crate::geometry::{is_admissible, PhasePoint};

pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform point in the domain box, ignoring guards.
    pub fn uniform(&mut self, sys: &CompiledLagrangian) -> PhasePoint {
        let dom = &sys.spec.domain;
        let q = dom
            .q
            .iter()
            .map(|&(lo, hi)| self.rng.gen_range(lo..hi))
            .collect();
        let v = dom
            .v
            .iter()
            .map(|&(lo, hi)| self.rng.gen_range(lo..hi))
            .collect();
        PhasePoint::new(q, v)
    }

    /// `count` admissible points; fails if rejection exhausts its budget.
    pub fn admissible(
        &mut self,
        sys: &CompiledLagrangian,
        count: usize,
    ) -> Result<Vec<PhasePoint>> {
        let budget = 200 * count.max(1);
        let mut out = Vec::with_capacity(count);
        for _ in 0..budget {
            if out.len() == count {
                break;
            }
            let u = self.uniform(sys);
            if is_admissible(sys, &u) {
                out.push(u);
            }
        }
        if out.len() < count {
            return Err(LagError::TooFewSamples {
                found: out.len(),
                needed: count,
            });
        }
        Ok(out)
    }
}

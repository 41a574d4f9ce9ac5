//! Numerical settings shared by the analysis stages.

use serde::Serialize;

use crate::error::{LagError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    /// Samples for identity tests.
    pub samples: usize,
    /// Seed points projected per order of the constraint algorithm.
    pub ledger_samples: usize,
    /// Relative cut for null spaces of M and Ω.
    pub tol_rank: f64,
    /// Identity-test threshold (times the local scale).
    pub eps_id: f64,
    /// Relative cut for ranks of finite-difference matrices (Γ, stacked gradients).
    pub fd_rank_tol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Newton stopping threshold (times the local scale).
    pub newton_tol: f64,
    pub max_order: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 20240611,
            samples: 64,
            ledger_samples: 12,
            tol_rank: 1e-9,
            eps_id: 1e-8,
            fd_rank_tol: 1e-6,
            fd_step: crate::fd::DEFAULT_STEP,
            newton_tol: 1e-10,
            max_order: 10,
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.tol_rank,
            self.eps_id,
            self.fd_rank_tol,
            self.fd_step,
            self.newton_tol,
        ];
        if positive.iter().any(|&x| !(x > 0.0)) {
            return Err(LagError::Config("tolerances must be positive".into()));
        }
        if self.samples < 16 {
            return Err(LagError::Config(format!(
                "samples must be at least 16, got {}",
                self.samples
            )));
        }
        if self.ledger_samples < 8 {
            return Err(LagError::Config("ledger_samples must be at least 8".into()));
        }
        if self.max_order < 1 {
            return Err(LagError::Config("max_order must be at least 1".into()));
        }
        Ok(())
    }
}

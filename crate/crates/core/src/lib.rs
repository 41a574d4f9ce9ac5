//! Geometry, constraints and symmetries of singular Lagrangians.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compile;
pub mod config;
pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod examples;
pub mod expr;
pub mod fd;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod ode;
pub mod parse;
pub mod report;
pub mod sampling;
pub mod spec;
pub mod symmetry;
pub mod tape;

pub use compile::{compile_system, CompiledLagrangian};
pub use config::Settings;
pub use error::{LagError, Result};
pub use expr::{differentiate, simplify, Expr, Var};
pub use geometry::PhasePoint;
pub use spec::{DomainBox, Guard, SystemSpec};

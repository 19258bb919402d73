//! Parametric sensitivities of Smoluchowski coagulation by central
//! differences over two coupled Marcus–Lushnikov particle systems.
//!
//! The `+` and `−` systems use kernels `K_{λ+ε/2}` and `K_{λ−ε/2}`. Particles
//! present in both systems carry the label `⊙`, particles present in only
//! one carry `⊕` or `⊖`. Coupling keeps most particles shared so the
//! difference of the two empirical measures has small variance.

// negated comparisons are used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod oracle;
pub mod seed;
pub mod stats;
mod tree;

pub use config::ExperimentConfig;
pub use coupling::{Algorithm, EventCounts, SimRng, TrajectoryRecord};
pub use ensemble::{CoupledState, Event, EventType, Label, MeasureSnapshot, System};
pub use error::{Error, Result};
pub use kernel::{FactorizedMajorant, KernelFamily, KernelSpec, Mass, PerturbedKernels};

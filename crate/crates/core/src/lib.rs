//! Multi-fidelity hyperparameter optimization over conditional spaces.

pub mod analysis;
pub mod configspace;
pub mod ensemble;
pub mod executor;
pub mod kde;
pub mod optimizer;
pub mod portfolio;
pub mod shaped_arch;

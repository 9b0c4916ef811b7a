//! Tabular off-policy evaluation: exact operator algebra for n-step,
//! importance-weighted, Retrace and TreeBackup updates, Monte Carlo variance
//! estimates, the adaptive C-trace learner and a policy-iteration control
//! loop.

pub mod control;
pub mod ctrace;
pub mod decomposition;
pub mod dp;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod operator;
pub mod rng;
pub mod rules;
pub mod sampler;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use control::{ControlConfig, Evaluation};
pub use ctrace::{CtraceConfig, CtraceState, StepSchedule};
pub use decomposition::DecompositionReport;
pub use error::{Error, Result};
pub use mdp::{Mdp, Policy, QTable, StateActionDist};
pub use operator::{AffineOperator, ContractionProfile, TradeoffPoint};
pub use rng::RngStream;
pub use rules::{RuleKind, UpdateRule};
pub use sampler::{McConfig, Trajectory, VarianceEstimate};

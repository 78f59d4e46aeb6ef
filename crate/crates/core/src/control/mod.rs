//! Controllers and regret accounting.

pub mod bandit;
pub mod etc;
pub mod geometric;
pub mod gpc;
pub mod regret;
pub mod schedule;
pub mod stabilize;
pub mod warmup_case;

use serde::{Deserialize, Serialize};

use crate::lds::system::LinearSystem;

pub use bandit::{
    robust_repeats, robust_value_oracle, BanditConfig, BanditController, ConstantOptimizer, RobustOracleParams,
    TwoPointOptimizer, ZerothOrderOptimizer,
};
pub use etc::{EtcConfig, EtcController};
pub use geometric::{EpochRecord, GeometricConfig, GeometricController, Initialization};
pub use gpc::{GpcConfig, GpcController, SimulationCheck};
pub use regret::{
    comparator, compute_regret, policy_value, stationary_covariance, ComparatorValue, PlayedPolicy, PolicySegment,
    RegretLedger,
};
pub use schedule::EpochSchedule;
pub use stabilize::{effective_budget, StabilizedController};
pub use warmup_case::{
    control_comparator, control_regret, ControlEpochRecord, ControlEtcConfig, ControlEtcController, ControlObjective, WarmupCaseConfig, WarmupCaseController,
};

/// What a learner may know about the system: dimensions and the stability
/// and norm parameters, never the matrices themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub dx: usize,
    pub du: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl ProblemInfo {
    pub fn of(sys: &LinearSystem) -> Self {
        Self { dx: sys.dx(), du: sys.du(), kappa: sys.kappa(), gamma: sys.gamma(), beta: sys.beta() }
    }
}

//! Multi-capability policy-gradient training kernel on synthetic
//! environments with exactly computable gradients.
//!
//! Modules:
//! - [`envpolicy`]: capability environments and the linear-softmax policy
//! - [`taskgen`]: rule-based task generation with quality gates
//! - [`reward`]: sub-rewards and the composite reward
//! - [`grpo`]: stratified groups, group-relative advantages, SFT loss
//! - [`balance`]: reward-weight controller and orthogonality monitor
//! - [`metrics`]: Integration Score, Pareto archive, stationarity check
//! - [`train`]: the two-stage training loop
//! - [`verify`]: oracle self-checks

pub mod balance;
pub mod envpolicy;
pub mod error;
pub mod grpo;
pub mod metrics;
pub mod reward;
pub mod rng;
pub mod taskgen;
pub mod train;
pub mod verify;

pub use balance::{
    balance_score, gradient_cosine, orthogonality_check, remediate, update_weights, CapabilityScores,
    ControllerConfig, GradientReport, OrthogonalityConfig,
};
pub use envpolicy::{
    action_distribution, exact_capability_objective, init_policy, logprob_gradient, Capability, Difficulty, EnvSpec,
    Environment, PolicyParams, TaskContext,
};
pub use error::{Error, Result};
pub use grpo::{build_group, group_advantages, grpo_gradient, sft_loss, AdvantageSet, Group, GroupSpec, TrainState};
pub use metrics::{integration_score, pareto_update, stationarity_check, IntegrationConfig, ParetoArchive, ParetoConfig};
pub use reward::{composite, RewardModelSpec, RewardWeights, Rollout, SubScores};
pub use taskgen::{curate, Dataset, QualityConfig, SourceDoc, TaskInstance};
pub use train::{train, RunLog, RunLogRecord, TrainConfig};

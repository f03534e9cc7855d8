//! Sub-rewards and the hybrid composite reward.
//!
//! The composite mixes a model-based score with two rule-based checks:
//!
//! ```text
//! R = alpha * R_model + (1 - alpha) * (beta1 * R_format + beta2 * R_accuracy)
//! ```
//!
//! `composite` validates weights and never clamps; clamping is the weight
//! controller's job (see [`crate::balance::update_weights`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envpolicy::TaskContext;
use crate::error::{Error, Result};
use crate::rng;

pub const ALPHA_BOUNDS: (f64, f64) = (0.2, 0.8);
pub const BETA_BOUNDS: (f64, f64) = (0.1, 0.9);
const BETA_SUM_TOL: f64 = 1e-9;

/// Mixing weights `(alpha, beta1, beta2)` of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta1: 0.5,
            beta2: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn new(alpha: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let w = Self { alpha, beta1, beta2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.alpha, ALPHA_BOUNDS) {
            return Err(Error::InvalidWeights(format!(
                "alpha = {} outside [{}, {}]",
                self.alpha, ALPHA_BOUNDS.0, ALPHA_BOUNDS.1
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !in_range(v, BETA_BOUNDS) {
                return Err(Error::InvalidWeights(format!(
                    "{name} = {v} outside [{}, {}]",
                    BETA_BOUNDS.0, BETA_BOUNDS.1
                )));
            }
        }
        if (self.beta1 + self.beta2 - 1.0).abs() > BETA_SUM_TOL {
            return Err(Error::InvalidWeights(format!(
                "beta1 + beta2 = {} (must be 1)",
                self.beta1 + self.beta2
            )));
        }
        Ok(())
    }
}

/// The three sub-rewards of one rollout, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub r_model: f64,
    pub r_format: f64,
    pub r_accuracy: f64,
}

impl SubScores {
    pub fn new(r_model: f64, r_format: f64, r_accuracy: f64) -> Self {
        Self {
            r_model,
            r_format,
            r_accuracy,
        }
    }
}

/// Hybrid composite reward. Lies in `[0, 1]` whenever the sub-scores do.
pub fn composite(weights: &RewardWeights, s: &SubScores) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [
        ("r_model", s.r_model),
        ("r_format", s.r_format),
        ("r_accuracy", s.r_accuracy),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidWeights(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok(weights.alpha * s.r_model
        + (1.0 - weights.alpha) * (weights.beta1 * s.r_format + weights.beta2 * s.r_accuracy))
}

/// Serializable description of the simulated reward model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardModelSpec {
    pub seed: u64,
    pub n_features: usize,
    pub n_actions: usize,
    /// Hidden weights are drawn uniformly from `[-scale, scale]`.
    pub scale: f64,
}

impl Default for RewardModelSpec {
    fn default() -> Self {
        Self {
            seed: 17,
            n_features: 2,
            n_actions: 2,
            scale: 0.5,
        }
    }
}

/// Fixed hidden linear scorer over `features ⊗ onehot(action)`, squashed by
/// a sigmoid. Stands in for an external learned reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub n_features: usize,
    pub n_actions: usize,
    /// Row-major `n_actions x n_features`.
    pub hidden: Vec<f64>,
}

impl RewardModel {
    pub fn from_spec(spec: &RewardModelSpec) -> Result<Self> {
        if spec.n_features == 0 || spec.n_actions == 0 {
            return Err(Error::Config("reward model dimensions must be positive".into()));
        }
        if !(spec.scale.is_finite() && spec.scale >= 0.0) {
            return Err(Error::Config(format!("reward model scale {} invalid", spec.scale)));
        }
        let mut r = rng::stream(spec.seed, rng::tags::REWARD_MODEL);
        let hidden = (0..spec.n_features * spec.n_actions)
            .map(|_| spec.scale * r.random_range(-1.0..=1.0))
            .collect();
        Ok(Self {
            n_features: spec.n_features,
            n_actions: spec.n_actions,
            hidden,
        })
    }

    pub fn zeros(n_features: usize, n_actions: usize) -> Self {
        Self {
            n_features,
            n_actions,
            hidden: vec![0.0; n_features * n_actions],
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Model-based score in `(0, 1)`.
///
/// Panics if `action` or the feature length do not match the model.
pub fn score_model(ctx: &TaskContext, action: usize, rm: &RewardModel) -> f64 {
    assert!(action < rm.n_actions, "action {action} out of range");
    assert_eq!(ctx.features.len(), rm.n_features, "feature length mismatch");
    let row = &rm.hidden[action * rm.n_features..(action + 1) * rm.n_features];
    sigmoid(row.iter().zip(&ctx.features).map(|(h, x)| h * x).sum())
}

/// Structure a response declares: how many reasoning stages it emits and
/// whether it closes with an answer tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMeta {
    pub stage_count: usize,
    pub answer_tag: bool,
}

impl ResponseMeta {
    /// Canonical response structure for `action`: even actions carry the
    /// answer tag, and every second pair of actions drops one stage.
    pub fn for_action(action: usize, full_stages: usize) -> Self {
        Self {
            stage_count: full_stages.saturating_sub(action / 2),
            answer_tag: action.is_multiple_of(2),
        }
    }
}

/// Format constraints attached to a task. An empty constraint set is
/// satisfied by every response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatConstraints {
    pub required_stages: Option<usize>,
    pub require_answer_tag: bool,
}

impl FormatConstraints {
    pub fn is_empty(&self) -> bool {
        self.required_stages.is_none() && !self.require_answer_tag
    }
}

/// Binary format check.
pub fn score_format(constraints: &FormatConstraints, meta: &ResponseMeta) -> f64 {
    let stages_ok = constraints
        .required_stages
        .is_none_or(|n| n == meta.stage_count);
    let tag_ok = !constraints.require_answer_tag || meta.answer_tag;
    if stages_ok && tag_ok {
        1.0
    } else {
        0.0
    }
}

pub fn score_accuracy(ctx: &TaskContext, action: usize) -> f64 {
    if action == ctx.gold_action {
        1.0
    } else {
        0.0
    }
}

/// One scored rollout. `task` indexes the environment's context list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub task: usize,
    pub action: usize,
    pub subscores: SubScores,
    pub composite: f64,
}

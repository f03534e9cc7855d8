//! Adaptive reward-weight controller and the gradient-orthogonality monitor.

use serde::{Deserialize, Serialize};

use crate::envpolicy::{exact_capability_objective, Capability, Environment, PolicyParams};
use crate::error::{Error, Result};
use crate::grpo::TrainState;
use crate::reward::{RewardWeights, ALPHA_BOUNDS, BETA_BOUNDS};

/// Per-capability scores on a 0-100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityScores {
    pub s_domain: f64,
    pub s_reasoning: f64,
    pub s_instruction: f64,
}

impl CapabilityScores {
    pub fn new(s_domain: f64, s_reasoning: f64, s_instruction: f64) -> Result<Self> {
        let s = Self {
            s_domain,
            s_reasoning,
            s_instruction,
        };
        if s.as_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!(
                "capability scores must be finite and nonnegative, got {:?}",
                s.as_array()
            )));
        }
        Ok(s)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.s_domain, self.s_reasoning, self.s_instruction]
    }

    pub fn get(&self, cap: Capability) -> f64 {
        self.as_array()[cap.index()]
    }

    /// Weakest capability; ties go to the earlier of Domain, Reasoning,
    /// Instruction.
    pub fn argmin(&self) -> Capability {
        let a = self.as_array();
        let mut best = 0;
        for i in 1..3 {
            if a[i] < a[best] {
                best = i;
            }
        }
        Capability::ALL[best]
    }

    pub fn min(&self) -> f64 {
        self.as_array().into_iter().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub balance_threshold: f64,
    pub alpha_gain: f64,
    pub delta_beta: f64,
    pub alpha_bounds: (f64, f64),
    pub beta_bounds: (f64, f64),
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            balance_threshold: 0.85,
            alpha_gain: 0.1,
            delta_beta: 0.05,
            alpha_bounds: ALPHA_BOUNDS,
            beta_bounds: BETA_BOUNDS,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.alpha_bounds) || !ordered(self.beta_bounds) {
            return Err(Error::Config("controller bounds must be finite and ordered".into()));
        }
        // the beta bounds must admit a pair summing to one
        if self.beta_bounds.0 > 0.5 || self.beta_bounds.1 < 0.5 {
            return Err(Error::Config(format!(
                "beta bounds {:?} admit no pair with beta1 + beta2 = 1",
                self.beta_bounds
            )));
        }
        if !(self.balance_threshold > 0.0 && self.balance_threshold < 1.0) {
            return Err(Error::Config(format!(
                "balance_threshold {} outside (0, 1)",
                self.balance_threshold
            )));
        }
        if !(self.alpha_gain.is_finite() && self.alpha_gain >= 0.0)
            || !(self.delta_beta.is_finite() && self.delta_beta >= 0.0)
        {
            return Err(Error::Config("controller gains must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrthogonalityConfig {
    /// When false the monitor still measures and logs, but never remediates.
    pub enabled: bool,
    pub epsilon: f64,
    pub check_interval: u64,
    pub group_size_cap: usize,
    pub penalty_lambda: f64,
    /// Central-difference step for the penalty gradient.
    pub fd_step: f64,
}

impl Default for OrthogonalityConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: 0.01,
            check_interval: 100,
            group_size_cap: 32,
            penalty_lambda: 1.0,
            fd_step: 1e-4,
        }
    }
}

impl OrthogonalityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.check_interval == 0 {
            return Err(Error::Config("check_interval must be at least 1".into()));
        }
        if self.group_size_cap == 0 {
            return Err(Error::Config("group_size_cap must be positive".into()));
        }
        if !(self.penalty_lambda >= 0.0 && self.penalty_lambda.is_finite()) {
            return Err(Error::Config("penalty_lambda must be finite and nonnegative".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        Ok(())
    }
}

/// A cosine similarity, or 0 with `degenerate` set when either vector is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn gradient_cosine(g_i: &[f64], g_j: &[f64]) -> Result<Cosine> {
    if g_i.len() != g_j.len() {
        return Err(Error::Dimension {
            context: "gradient cosine",
            expected: g_i.len(),
            got: g_j.len(),
        });
    }
    let ni = g_i.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nj = g_j.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ni == 0.0 || nj == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = g_i.iter().zip(g_j).map(|(a, b)| (a / ni) * (b / nj)).sum();
    Ok(Cosine {
        value: dot.clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    /// Order: (D,R), (D,I), (R,I).
    pub pairwise_cosines: [f64; 3],
    pub max_cosine: f64,
    pub violated: bool,
    pub degenerate: bool,
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

pub fn orthogonality_check(grads: &[Vec<f64>; 3], cfg: &OrthogonalityConfig) -> Result<GradientReport> {
    let mut pairwise_cosines = [0.0; 3];
    let mut degenerate = false;
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let c = gradient_cosine(&grads[i], &grads[j])?;
        pairwise_cosines[k] = c.value;
        degenerate |= c.degenerate;
    }
    let max_cosine = pairwise_cosines.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(GradientReport {
        pairwise_cosines,
        max_cosine,
        violated: max_cosine > cfg.epsilon,
        degenerate,
    })
}

/// Exact per-capability gradients at `params`, in Domain, Reasoning,
/// Instruction order.
pub fn capability_gradients(
    params: &PolicyParams,
    env: &Environment,
    weights: &RewardWeights,
) -> Result<[Vec<f64>; 3]> {
    let [d, r, i] = Capability::ALL.map(|c| exact_capability_objective(params, env, c, weights));
    Ok([d?.gradient, r?.gradient, i?.gradient])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum RemediationAction {
    None,
    GrowGroup { from: usize, to: usize },
    Penalty { lambda: f64 },
    /// Group size capped and penalty already active.
    Saturated,
}

/// Escalates in order: double the group size up to the cap, then switch on
/// the conflict penalty.
pub fn remediate(
    report: &GradientReport,
    mut state: TrainState,
    cfg: &OrthogonalityConfig,
) -> (TrainState, RemediationAction) {
    if !report.violated {
        return (state, RemediationAction::None);
    }
    let size = state.group_spec.size;
    if size < cfg.group_size_cap {
        let to = (2 * size).min(cfg.group_size_cap);
        state.group_spec = state.group_spec.resized(to);
        return (state, RemediationAction::GrowGroup { from: size, to });
    }
    if state.l2_conflict_penalty < cfg.penalty_lambda {
        state.l2_conflict_penalty = cfg.penalty_lambda;
        return (state, RemediationAction::Penalty { lambda: cfg.penalty_lambda });
    }
    (state, RemediationAction::Saturated)
}

/// `1 - popstd(C) / mean(C)`.
pub fn balance_score(scores: &CapabilityScores) -> Result<f64> {
    let a = scores.as_array();
    let mean = a.iter().sum::<f64>() / 3.0;
    if !(mean > 0.0) {
        return Err(Error::NonPositiveMean(mean));
    }
    let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
    Ok(1.0 - var.sqrt() / mean)
}

/// Everything the controller did in one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerDecision {
    pub before: RewardWeights,
    pub after: RewardWeights,
    pub balance: f64,
    /// Weakest capability, when the controller acted.
    pub argmin: Option<Capability>,
    /// Names of weights that hit a bound.
    pub clamped: Vec<String>,
}

/// Applies the additive update rules when balance is below threshold.
///
/// All-zero scores have no dispersion and are treated as balanced.
pub fn controller_step(
    w: &RewardWeights,
    scores: &CapabilityScores,
    cfg: &ControllerConfig,
) -> Result<ControllerDecision> {
    w.validate()?;
    let b = if scores.as_array().iter().all(|v| *v == 0.0) {
        1.0
    } else {
        balance_score(scores)?
    };
    let unchanged = ControllerDecision {
        before: *w,
        after: *w,
        balance: b,
        argmin: None,
        clamped: Vec::new(),
    };
    if b >= cfg.balance_threshold {
        return Ok(unchanged);
    }
    let m = scores.argmin();
    let (mut alpha, mut b1, mut b2) = (w.alpha, w.beta1, w.beta2);
    match m {
        // the upper clamp below is the min(0.8, .) of the update rule
        Capability::Domain => alpha += cfg.alpha_gain * (cfg.balance_threshold - b),
        Capability::Reasoning => {
            b1 += cfg.delta_beta;
            b2 -= cfg.delta_beta;
        }
        Capability::Instruction => {
            b1 -= cfg.delta_beta;
            b2 += cfg.delta_beta;
        }
    }
    let mut clamped = Vec::new();
    let mut clamp = |name: &str, v: f64, (lo, hi): (f64, f64)| {
        let c = v.clamp(lo, hi);
        if c != v {
            clamped.push(name.to_string());
        }
        c
    };
    alpha = clamp("alpha", alpha, cfg.alpha_bounds);
    b1 = clamp("beta1", b1, cfg.beta_bounds);
    b2 = clamp("beta2", b2, cfg.beta_bounds);
    // renormalize, then pin beta2 to the complement so the sum stays exact
    b1 = (b1 / (b1 + b2)).clamp(cfg.beta_bounds.0, cfg.beta_bounds.1);
    b2 = (1.0 - b1).clamp(cfg.beta_bounds.0, cfg.beta_bounds.1);
    if !clamped.is_empty() {
        log::debug!("controller clamped {clamped:?}");
    }
    Ok(ControllerDecision {
        after: RewardWeights {
            alpha,
            beta1: b1,
            beta2: b2,
        },
        argmin: Some(m),
        clamped,
        ..unchanged
    })
}

pub fn update_weights(w: &RewardWeights, scores: &CapabilityScores, cfg: &ControllerConfig) -> Result<RewardWeights> {
    controller_step(w, scores, cfg).map(|d| d.after)
}

/// `lambda * sum_{i<j} max(0, cos_ij - epsilon)^2`.
pub fn conflict_penalty(cosines: &[f64; 3], epsilon: f64, lambda: f64) -> f64 {
    lambda * cosines.iter().map(|c| (c - epsilon).max(0.0).powi(2)).sum::<f64>()
}

/// Conflict penalty at `params`, using exact capability gradients.
pub fn conflict_penalty_at(
    params: &PolicyParams,
    env: &Environment,
    weights: &RewardWeights,
    epsilon: f64,
    lambda: f64,
) -> Result<f64> {
    let grads = capability_gradients(params, env, weights)?;
    let mut cos = [0.0; 3];
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        cos[k] = gradient_cosine(&grads[i], &grads[j])?.value;
    }
    Ok(conflict_penalty(&cos, epsilon, lambda))
}

/// Central finite-difference gradient of [`conflict_penalty_at`] over theta.
pub fn conflict_penalty_gradient(
    params: &PolicyParams,
    env: &Environment,
    weights: &RewardWeights,
    epsilon: f64,
    lambda: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    if lambda == 0.0 {
        return Ok(grad);
    }
    let mut probe = params.clone();
    for k in 0..params.len() {
        let orig = probe.theta[k];
        probe.theta[k] = orig + h;
        let up = conflict_penalty_at(&probe, env, weights, epsilon, lambda)?;
        probe.theta[k] = orig - h;
        let down = conflict_penalty_at(&probe, env, weights, epsilon, lambda)?;
        probe.theta[k] = orig;
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

//! Synthetic multi-capability environments and a linear-softmax policy.
//!
//! The policy is `pi(a | x) = softmax(W x)` with `W` the parameter vector
//! reshaped row-major to `n_actions x n_features`. Every capability has a
//! finite task set, so expected rewards and their gradients are computed by
//! enumerating all `(task, action)` pairs; nothing here samples.
//!
//! Task features live on the plane spanned by the first two feature axes.
//! The builder rotates each capability's task set until its exact policy
//! gradient at `theta = 0` points along a designated direction; the three
//! directions fan out from identical (`conflict_strength = 0`) to 120 degrees
//! apart (`conflict_strength = 1`).

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{
    self, FormatConstraints, ResponseMeta, RewardModel, RewardWeights, SubScores,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Domain,
    Reasoning,
    Instruction,
}

impl Capability {
    pub const ALL: [Capability; 3] = [Capability::Domain, Capability::Reasoning, Capability::Instruction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Domain => "domain",
            Capability::Reasoning => "reasoning",
            Capability::Instruction => "instruction",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Flat parameter vector of the linear-softmax policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub theta: Vec<f64>,
    pub n_features: usize,
    pub n_actions: usize,
}

impl PolicyParams {
    pub fn zeros(n_features: usize, n_actions: usize) -> Self {
        Self {
            theta: vec![0.0; n_features * n_actions],
            n_features,
            n_actions,
        }
    }

    pub fn from_vec(theta: Vec<f64>, n_features: usize, n_actions: usize) -> Result<Self> {
        if theta.len() != n_features * n_actions {
            return Err(Error::Dimension {
                context: "policy parameters",
                expected: n_features * n_actions,
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("policy parameters must be finite".into()));
        }
        Ok(Self {
            theta,
            n_features,
            n_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.theta
            .chunks_exact(self.n_features)
            .map(|row| row.iter().zip(x).map(|(w, xi)| w * xi).sum())
            .collect()
    }

    fn check(&self, ctx: &TaskContext) -> Result<()> {
        if self.theta.len() != self.n_features * self.n_actions {
            return Err(Error::Dimension {
                context: "policy parameters",
                expected: self.n_features * self.n_actions,
                got: self.theta.len(),
            });
        }
        if ctx.features.len() != self.n_features {
            return Err(Error::Dimension {
                context: "task features",
                expected: self.n_features,
                got: ctx.features.len(),
            });
        }
        Ok(())
    }
}

/// Shape and conflict geometry of a synthetic environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub n_features: usize,
    pub n_actions: usize,
    pub tasks_per_capability: usize,
    /// 0 = the three capability objectives agree at `theta = 0`,
    /// 1 = their gradients are 120 degrees apart.
    pub conflict_strength: f64,
    pub seed: u64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            n_features: 2,
            n_actions: 2,
            tasks_per_capability: 16,
            conflict_strength: 1.0,
            seed: 0,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.n_actions == 0 {
            return Err(Error::Config(format!(
                "n_features ({}) and n_actions ({}) must be positive",
                self.n_features, self.n_actions
            )));
        }
        if self.tasks_per_capability == 0 {
            return Err(Error::Config("tasks_per_capability must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.conflict_strength) {
            return Err(Error::Config(format!(
                "conflict_strength {} outside [0, 1]",
                self.conflict_strength
            )));
        }
        Ok(())
    }

    fn validate_buildable(&self) -> Result<()> {
        self.validate()?;
        if self.n_features < 2 || self.n_actions < 2 {
            return Err(Error::Config(
                "environments need at least 2 features and 2 actions".into(),
            ));
        }
        Ok(())
    }
}

/// One task as seen by the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub capability: Capability,
    /// Unit-length feature vector.
    pub features: Vec<f64>,
    pub gold_action: usize,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub format: FormatConstraints,
}

/// What the builder needs to know about a task before placing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskStub {
    pub capability: Capability,
    pub difficulty: Difficulty,
    pub gold_action: usize,
    pub format: FormatConstraints,
}

/// Number of reasoning stages a complete response carries.
pub const FULL_STAGES: usize = 3;

/// Angular offset band (radians from the capability's axis) per difficulty.
fn offset_band(d: Difficulty) -> (f64, f64) {
    match d {
        Difficulty::Easy => (0.0, 0.35),
        Difficulty::Medium => (0.35, 0.7),
        Difficulty::Hard => (0.7, 1.05),
    }
}

/// Default format constraints of synthetic tasks per capability.
pub fn default_format(cap: Capability) -> FormatConstraints {
    match cap {
        Capability::Domain => FormatConstraints {
            required_stages: None,
            require_answer_tag: true,
        },
        Capability::Reasoning => FormatConstraints {
            required_stages: Some(FULL_STAGES),
            require_answer_tag: false,
        },
        Capability::Instruction => FormatConstraints {
            required_stages: Some(FULL_STAGES),
            require_answer_tag: true,
        },
    }
}

/// A finite multi-capability environment with a fixed reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub n_features: usize,
    pub n_actions: usize,
    pub contexts: Vec<TaskContext>,
    pub reward_model: RewardModel,
    /// Declared response structure per action.
    pub responses: Vec<ResponseMeta>,
    by_capability: [Vec<usize>; 3],
}

impl Environment {
    /// Builds `tasks_per_capability` tasks per capability with a 2:2:1
    /// easy/medium/hard pattern, gold action 0 and per-capability format
    /// constraints.
    pub fn synthetic(spec: &EnvSpec, reward_model: RewardModel) -> Result<Self> {
        spec.validate_buildable()?;
        const PATTERN: [Difficulty; 5] = [
            Difficulty::Easy,
            Difficulty::Medium,
            Difficulty::Easy,
            Difficulty::Medium,
            Difficulty::Hard,
        ];
        let stubs: Vec<TaskStub> = Capability::ALL
            .iter()
            .flat_map(|&cap| {
                (0..spec.tasks_per_capability).map(move |k| TaskStub {
                    capability: cap,
                    difficulty: PATTERN[k % PATTERN.len()],
                    gold_action: 0,
                    format: default_format(cap),
                })
            })
            .collect();
        Self::from_stubs(spec, &stubs, reward_model)
    }

    /// Places the given tasks. `spec.tasks_per_capability` is ignored; every
    /// capability must have at least one stub.
    pub fn from_stubs(spec: &EnvSpec, stubs: &[TaskStub], reward_model: RewardModel) -> Result<Self> {
        spec.validate_buildable()?;
        if reward_model.n_features != spec.n_features || reward_model.n_actions != spec.n_actions {
            return Err(Error::Config(format!(
                "reward model is {}x{}, environment is {}x{}",
                reward_model.n_actions, reward_model.n_features, spec.n_actions, spec.n_features
            )));
        }
        if let Some(s) = stubs.iter().find(|s| s.gold_action >= spec.n_actions) {
            return Err(Error::Config(format!(
                "gold action {} out of range for {} actions",
                s.gold_action, spec.n_actions
            )));
        }
        let responses = (0..spec.n_actions)
            .map(|a| ResponseMeta::for_action(a, FULL_STAGES))
            .collect();
        let mut env = Environment {
            n_features: spec.n_features,
            n_actions: spec.n_actions,
            contexts: Vec::with_capacity(stubs.len()),
            reward_model,
            responses,
            by_capability: Default::default(),
        };

        let mut r = rng::stream(spec.seed, rng::tags::ENV_BUILD);
        let defaults = RewardWeights::default();
        for cap in Capability::ALL {
            let mine: Vec<&TaskStub> = stubs.iter().filter(|s| s.capability == cap).collect();
            if mine.is_empty() {
                return Err(Error::EmptyCapability(cap));
            }
            let offsets: Vec<f64> = mine
                .iter()
                .map(|s| {
                    let (lo, hi) = offset_band(s.difficulty);
                    let mag = r.random_range(lo..hi);
                    if r.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            // With two actions, a task whose gold action is 1 is mirrored so
            // that it pulls along the capability axis like the others.
            let flips: Vec<f64> = mine
                .iter()
                .map(|s| if spec.n_actions == 2 && s.gold_action == 1 { -1.0 } else { 1.0 })
                .collect();
            let target = spec.conflict_strength * cap.index() as f64 * 2.0 * PI / 3.0;
            let place = |gamma: f64| -> Vec<TaskContext> {
                mine.iter()
                    .zip(&offsets)
                    .zip(&flips)
                    .map(|((s, o), flip)| {
                        let mut x = vec![0.0; spec.n_features];
                        x[0] = flip * (gamma + o).cos();
                        x[1] = flip * (gamma + o).sin();
                        TaskContext {
                            capability: cap,
                            features: x,
                            gold_action: s.gold_action,
                            difficulty: s.difficulty,
                            format: s.format,
                        }
                    })
                    .collect()
            };
            let miss = |gamma: f64| -> Result<f64> {
                let mut sum = [0.0f64; 2];
                for ctx in place(gamma) {
                    let r = env.reward_vector(&ctx, &defaults)?;
                    let mean = r.iter().sum::<f64>() / r.len() as f64;
                    sum[0] += (r[0] - mean) * ctx.features[0];
                    sum[1] += (r[0] - mean) * ctx.features[1];
                }
                Ok(wrap_angle(sum[1].atan2(sum[0]) - target))
            };
            let (mut lo, mut hi) = (target - PI / 2.0, target + PI / 2.0);
            let (m_lo, m_hi) = (miss(lo)?, miss(hi)?);
            if !(m_lo < 0.0 && m_hi > 0.0) {
                return Err(Error::Config(format!(
                    "cannot pin the gradient direction of capability {cap}"
                )));
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if miss(mid)? < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let start = env.contexts.len();
            env.contexts.extend(place(0.5 * (lo + hi)));
            env.by_capability[cap.index()] = (start..env.contexts.len()).collect();
        }
        Ok(env)
    }

    /// Indices of `cap`'s tasks in `contexts`.
    pub fn capability_tasks(&self, cap: Capability) -> &[usize] {
        &self.by_capability[cap.index()]
    }

    /// Restricts the environment to a single capability.
    pub fn only(&self, cap: Capability) -> Environment {
        let contexts: Vec<TaskContext> = self
            .capability_tasks(cap)
            .iter()
            .map(|&i| self.contexts[i].clone())
            .collect();
        let mut by_capability: [Vec<usize>; 3] = Default::default();
        by_capability[cap.index()] = (0..contexts.len()).collect();
        Environment {
            contexts,
            by_capability,
            ..self.clone()
        }
    }

    pub fn score(&self, ctx: &TaskContext, action: usize, weights: &RewardWeights) -> Result<(SubScores, f64)> {
        let s = SubScores::new(
            reward::score_model(ctx, action, &self.reward_model),
            reward::score_format(&ctx.format, &self.responses[action]),
            reward::score_accuracy(ctx, action),
        );
        Ok((s, reward::composite(weights, &s)?))
    }

    /// Composite reward of every action on `ctx`.
    pub fn reward_vector(&self, ctx: &TaskContext, weights: &RewardWeights) -> Result<Vec<f64>> {
        (0..self.n_actions)
            .map(|a| self.score(ctx, a, weights).map(|(_, r)| r))
            .collect()
    }
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Draws `theta` i.i.d. uniform in `[-0.01, 0.01]`.
pub fn init_policy(spec: &EnvSpec, seed: u64) -> Result<PolicyParams> {
    spec.validate()?;
    let mut r = rng::stream(seed, rng::tags::POLICY_INIT);
    let theta = (0..spec.n_features * spec.n_actions)
        .map(|_| r.random_range(-0.01..=0.01))
        .collect();
    Ok(PolicyParams {
        theta,
        n_features: spec.n_features,
        n_actions: spec.n_actions,
    })
}

fn softmax(mut z: Vec<f64>) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
    z
}

pub fn action_distribution(params: &PolicyParams, ctx: &TaskContext) -> Result<Vec<f64>> {
    params.check(ctx)?;
    Ok(softmax(params.logits(&ctx.features)))
}

/// Closed-form `grad_theta log pi(action | ctx)`: block `b` equals
/// `(1[b = action] - pi(b)) x`.
pub fn logprob_gradient(params: &PolicyParams, ctx: &TaskContext, action: usize) -> Result<Vec<f64>> {
    if action >= params.n_actions {
        return Err(Error::Dimension {
            context: "action index",
            expected: params.n_actions,
            got: action,
        });
    }
    let probs = action_distribution(params, ctx)?;
    let mut grad = Vec::with_capacity(params.len());
    for (b, p) in probs.iter().enumerate() {
        let coef = if b == action { 1.0 - p } else { -p };
        grad.extend(ctx.features.iter().map(|x| coef * x));
    }
    Ok(grad)
}

/// Expected composite reward of one capability and its exact gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Exact expected composite reward over all `(task, action)` pairs of `cap`,
/// averaged over tasks, with its policy gradient.
pub fn exact_capability_objective(
    params: &PolicyParams,
    env: &Environment,
    cap: Capability,
    weights: &RewardWeights,
) -> Result<Objective> {
    let tasks = env.capability_tasks(cap);
    if tasks.is_empty() {
        return Err(Error::EmptyCapability(cap));
    }
    let mut value = 0.0;
    let mut gradient = vec![0.0; params.len()];
    for &i in tasks {
        let ctx = &env.contexts[i];
        let probs = action_distribution(params, ctx)?;
        let rewards = env.reward_vector(ctx, weights)?;
        let v: f64 = probs.iter().zip(&rewards).map(|(p, r)| p * r).sum();
        value += v;
        for (a, (p, r)) in probs.iter().zip(&rewards).enumerate() {
            let coef = p * (r - v);
            let block = &mut gradient[a * params.n_features..(a + 1) * params.n_features];
            for (g, x) in block.iter_mut().zip(&ctx.features) {
                *g += coef * x;
            }
        }
    }
    let n = tasks.len() as f64;
    gradient.iter_mut().for_each(|g| *g /= n);
    Ok(Objective {
        value: value / n,
        gradient,
    })
}

/// Mean probability of the gold action over `cap`'s tasks.
pub fn expected_accuracy(params: &PolicyParams, env: &Environment, cap: Capability) -> Result<f64> {
    let tasks = env.capability_tasks(cap);
    if tasks.is_empty() {
        return Err(Error::EmptyCapability(cap));
    }
    let mut total = 0.0;
    for &i in tasks {
        let ctx = &env.contexts[i];
        total += action_distribution(params, ctx)?[ctx.gold_action];
    }
    Ok(total / tasks.len() as f64)
}

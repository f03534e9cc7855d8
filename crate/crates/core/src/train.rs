//! Two-stage training loop: SFT warm-start, then GRPO with the balance
//! controller and orthogonality monitor running every `eval_interval`
//! iterations.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::balance::{
    balance_score, capability_gradients, conflict_penalty, controller_step, orthogonality_check, remediate,
    CapabilityScores, ControllerConfig, ControllerDecision, GradientReport, OrthogonalityConfig, RemediationAction,
};
use crate::envpolicy::{expected_accuracy, init_policy, Capability, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::grpo::{build_group, group_advantages, grpo_gradient, rollout_group, sft_loss, GroupSpec, TrainState};
use crate::metrics::{stationarity_from_gradients, ParetoArchive, ParetoConfig};
use crate::reward::{RewardModel, RewardModelSpec};
use crate::rng;
use crate::taskgen::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub reward_model: RewardModelSpec,
    pub group: GroupSpec,
    pub controller: ControllerConfig,
    pub controller_enabled: bool,
    pub orthogonality: OrthogonalityConfig,
    pub pareto: ParetoConfig,
    pub sft_epochs: u64,
    pub sft_step_size: f64,
    pub iterations: u64,
    pub step_size: f64,
    pub eval_interval: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            reward_model: RewardModelSpec::default(),
            group: GroupSpec::default(),
            controller: ControllerConfig::default(),
            controller_enabled: true,
            orthogonality: OrthogonalityConfig::default(),
            pareto: ParetoConfig::default(),
            sft_epochs: 0,
            sft_step_size: 0.05,
            iterations: 2000,
            step_size: 0.05,
            eval_interval: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.group.validate()?;
        self.controller.validate()?;
        self.orthogonality.validate()?;
        self.pareto.validate()?;
        if self.reward_model.n_features != self.env.n_features || self.reward_model.n_actions != self.env.n_actions {
            return Err(Error::Config(format!(
                "reward model is {}x{}, environment is {}x{}",
                self.reward_model.n_actions, self.reward_model.n_features, self.env.n_actions, self.env.n_features
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        for (name, v) in [("step_size", self.step_size), ("sft_step_size", self.sft_step_size)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Synthetic environment, or one laid out from a curated dataset.
    pub fn build_environment(&self, dataset: Option<&Dataset>) -> Result<Environment> {
        self.validate()?;
        let rm = RewardModel::from_spec(&self.reward_model)?;
        match dataset {
            None => Environment::synthetic(&self.env, rm),
            Some(ds) => Environment::from_stubs(&self.env, &ds.task_stubs(self.env.n_actions), rm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sft,
    Grpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Start,
    Eval,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    /// SFT epoch or GRPO iteration.
    pub iteration: u64,
    pub stage: Stage,
    pub event: Event,
    pub capability_scores: CapabilityScores,
    pub balance: f64,
    pub weights: crate::reward::RewardWeights,
    pub controller: Option<ControllerDecision>,
    pub pairwise_cosines: [f64; 3],
    pub max_pairwise_cosine: f64,
    pub violated: bool,
    pub degenerate: bool,
    pub remediation: Option<RemediationAction>,
    pub group_size: usize,
    pub penalty_lambda: f64,
    /// Value of the conflict penalty term at this iterate.
    pub penalty: f64,
    pub any_common_ascent: bool,
    pub sft_loss: Option<f64>,
    /// Seconds since the run started. Excluded from determinism checks.
    pub wall_clock: f64,
}

impl RunLogRecord {
    /// Copy with the wall-clock field zeroed.
    pub fn without_clock(&self) -> Self {
        Self {
            wall_clock: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<RunLogRecord>,
    pub final_state: TrainState,
    pub archive: ParetoArchive,
}

impl RunLog {
    pub fn last(&self) -> &RunLogRecord {
        self.records.last().expect("a run always logs start and end records")
    }
}

/// Capability scores: 100 x mean probability of the gold action.
pub fn capability_scores(state: &TrainState, env: &Environment) -> Result<CapabilityScores> {
    let [d, r, i] = Capability::ALL.map(|c| expected_accuracy(&state.params, env, c));
    let (d, r, i) = (d?, r?, i?);
    if ![d, r, i].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { iteration: state.iteration, module: "metrics" });
    }
    CapabilityScores::new(100.0 * d, 100.0 * r, 100.0 * i)
}

struct Snapshot {
    scores: CapabilityScores,
    balance: f64,
    report: GradientReport,
    penalty: f64,
    any_common_ascent: bool,
}

fn snapshot(state: &TrainState, env: &Environment, cfg: &TrainConfig, stream: u64) -> Result<Snapshot> {
    let scores = capability_scores(state, env)?;
    let grads = capability_gradients(&state.params, env, &state.weights)?;
    let report = orthogonality_check(&grads, &cfg.orthogonality)?;
    let mut r = rng::stream(cfg.seed, rng::tags::STATIONARITY + stream);
    let st = stationarity_from_gradients(&grads, &cfg.pareto, &mut r)?;
    let penalty = conflict_penalty(&report.pairwise_cosines, cfg.orthogonality.epsilon, state.l2_conflict_penalty);
    Ok(Snapshot {
        balance: balance_score(&scores)?,
        scores,
        report,
        penalty,
        any_common_ascent: st.any_common_ascent,
    })
}

fn record(state: &TrainState, snap: &Snapshot, stage: Stage, event: Event, iteration: u64, started: Instant) -> RunLogRecord {
    RunLogRecord {
        iteration,
        stage,
        event,
        capability_scores: snap.scores,
        balance: snap.balance,
        weights: state.weights,
        controller: None,
        pairwise_cosines: snap.report.pairwise_cosines,
        max_pairwise_cosine: snap.report.max_cosine,
        violated: snap.report.violated,
        degenerate: snap.report.degenerate,
        remediation: None,
        group_size: state.group_spec.size,
        penalty_lambda: state.l2_conflict_penalty,
        penalty: snap.penalty,
        any_common_ascent: snap.any_common_ascent,
        sft_loss: None,
        wall_clock: started.elapsed().as_secs_f64(),
    }
}

fn check_finite(v: &[f64], iteration: u64, module: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration, module })
    }
}

/// Runs both stages. Every record is passed to `sink` as soon as it is
/// produced, then collected into the returned log.
pub fn train(
    cfg: &TrainConfig,
    env: &Environment,
    sink: &mut dyn FnMut(&RunLogRecord) -> Result<()>,
) -> Result<RunLog> {
    cfg.validate()?;
    if env.n_features != cfg.env.n_features || env.n_actions != cfg.env.n_actions {
        return Err(Error::Config("environment does not match the configured dimensions".into()));
    }
    let started = Instant::now();
    let mut state = TrainState::new(init_policy(&cfg.env, cfg.seed)?, cfg.group, cfg.seed);
    let mut records: Vec<RunLogRecord> = Vec::new();
    let mut archive = ParetoArchive::new();
    let mut emit = |rec: RunLogRecord, records: &mut Vec<RunLogRecord>| -> Result<()> {
        sink(&rec)?;
        records.push(rec);
        Ok(())
    };

    let snap = snapshot(&state, env, cfg, 0)?;
    emit(record(&state, &snap, Stage::Sft, Event::Start, 0, started), &mut records)?;

    let n = env.contexts.len() as f64;
    for epoch in 1..=cfg.sft_epochs {
        let (loss, grad) = sft_loss(&state.params, &env.contexts)?;
        check_finite(&grad, epoch, "sft")?;
        for (t, g) in state.params.theta.iter_mut().zip(&grad) {
            *t -= cfg.sft_step_size * g / n;
        }
        check_finite(&state.params.theta, epoch, "sft")?;
        let snap = snapshot(&state, env, cfg, records.len() as u64)?;
        let mut rec = record(&state, &snap, Stage::Sft, Event::Eval, epoch, started);
        rec.sft_loss = Some(loss);
        emit(rec, &mut records)?;
    }

    for t in 1..=cfg.iterations {
        state.iteration = t;
        let mut r = rng::stream(cfg.seed, rng::tags::GROUP + t);
        let tasks = build_group(env, &state.group_spec, &mut r)?;
        let group = rollout_group(&state.params, env, &tasks, &state.weights, &mut r).map_err(|e| match e {
            Error::NonFinite { module, .. } => Error::NonFinite { iteration: t, module },
            other => other,
        })?;
        let adv = group_advantages(&group)?;
        let g = grpo_gradient(&state, env, &group, &adv, &cfg.orthogonality)?;
        check_finite(&g, t, "grpo")?;
        for (th, gi) in state.params.theta.iter_mut().zip(&g) {
            *th += cfg.step_size * gi;
        }
        check_finite(&state.params.theta, t, "grpo")?;

        if t % cfg.eval_interval != 0 {
            continue;
        }
        let snap = snapshot(&state, env, cfg, records.len() as u64)?;
        let mut rec = record(&state, &snap, Stage::Grpo, Event::Eval, t, started);
        if cfg.orthogonality.enabled && t % cfg.orthogonality.check_interval == 0 {
            let (next, action) = remediate(&snap.report, state, &cfg.orthogonality);
            state = next;
            rec.remediation = Some(action);
        }
        if cfg.controller_enabled {
            let d = controller_step(&state.weights, &snap.scores, &cfg.controller)?;
            state.weights = d.after;
            rec.controller = Some(d);
        }
        archive.insert(snap.scores);
        emit(rec, &mut records)?;
    }

    let stage = if cfg.iterations > 0 { Stage::Grpo } else { Stage::Sft };
    let last = if cfg.iterations > 0 { cfg.iterations } else { cfg.sft_epochs };
    let snap = snapshot(&state, env, cfg, records.len() as u64)?;
    emit(record(&state, &snap, stage, Event::End, last, started), &mut records)?;

    Ok(RunLog {
        records,
        final_state: state,
        archive,
    })
}

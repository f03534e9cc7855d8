//! Stratified groups, group-relative advantages, the GRPO step and the SFT
//! warm-start loss.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{conflict_penalty_gradient, OrthogonalityConfig};
use crate::envpolicy::{
    action_distribution, logprob_gradient, Capability, Difficulty, Environment, PolicyParams, TaskContext,
};
use crate::error::{Error, Result};
use crate::reward::{Rollout, RewardWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSpec {
    pub size: usize,
    pub n_domain: usize,
    pub n_reasoning: usize,
    pub n_instruction: usize,
    /// Easy, medium, hard fractions.
    pub difficulty_mix: [f64; 3],
}

impl Default for GroupSpec {
    fn default() -> Self {
        Self {
            size: 8,
            n_domain: 3,
            n_reasoning: 3,
            n_instruction: 2,
            difficulty_mix: [0.4, 0.4, 0.2],
        }
    }
}

/// Largest-remainder apportionment of `total` by `quotas`; remainder ties go
/// to the lower index.
fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

impl GroupSpec {
    /// Single-capability spec with the default difficulty mix.
    pub fn only(cap: Capability, size: usize) -> Self {
        let mut s = Self {
            size,
            n_domain: 0,
            n_reasoning: 0,
            n_instruction: 0,
            ..Self::default()
        };
        match cap {
            Capability::Domain => s.n_domain = size,
            Capability::Reasoning => s.n_reasoning = size,
            Capability::Instruction => s.n_instruction = size,
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("group size must be positive".into()));
        }
        if self.n_domain + self.n_reasoning + self.n_instruction != self.size {
            return Err(Error::Config(format!(
                "capability counts {}+{}+{} do not sum to group size {}",
                self.n_domain, self.n_reasoning, self.n_instruction, self.size
            )));
        }
        let mix = self.difficulty_mix;
        if mix.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("difficulty mix {mix:?} must be nonnegative and sum to 1")));
        }
        Ok(())
    }

    pub fn capability_counts(&self) -> [usize; 3] {
        [self.n_domain, self.n_reasoning, self.n_instruction]
    }

    /// Group-level easy/medium/hard counts by largest remainder.
    pub fn difficulty_counts(&self) -> [usize; 3] {
        let q: Vec<f64> = self.difficulty_mix.iter().map(|f| f * self.size as f64).collect();
        let c = largest_remainder(&q, self.size);
        [c[0], c[1], c[2]]
    }

    /// Per-(capability, difficulty) counts whose row sums are the capability
    /// counts and whose column sums are [`GroupSpec::difficulty_counts`].
    ///
    /// Starts from the floored proportional quotas and hands out the missing
    /// units one at a time to the cell with the largest remainder among cells
    /// whose row and column are both still short.
    pub fn cell_counts(&self) -> [[usize; 3]; 3] {
        let rows = self.capability_counts();
        let cols = self.difficulty_counts();
        let mut cells = [[0usize; 3]; 3];
        let mut rem = [[0.0f64; 3]; 3];
        for c in 0..3 {
            for d in 0..3 {
                let q = rows[c] as f64 * self.difficulty_mix[d];
                cells[c][d] = q.floor() as usize;
                rem[c][d] = q - q.floor();
            }
        }
        loop {
            let row_short: Vec<bool> = (0..3).map(|c| cells[c].iter().sum::<usize>() < rows[c]).collect();
            let col_short: Vec<bool> = (0..3).map(|d| (0..3).map(|c| cells[c][d]).sum::<usize>() < cols[d]).collect();
            let mut pick: Option<(usize, usize)> = None;
            for c in 0..3 {
                for d in 0..3 {
                    if row_short[c] && col_short[d] && pick.is_none_or(|(pc, pd)| rem[c][d] > rem[pc][pd]) {
                        pick = Some((c, d));
                    }
                }
            }
            match pick {
                Some((c, d)) => {
                    cells[c][d] += 1;
                    rem[c][d] -= 1.0;
                }
                None => break,
            }
        }
        cells
    }

    /// Same capability proportions at a new size.
    pub fn resized(&self, size: usize) -> Self {
        let scale = size as f64 / self.size as f64;
        let q: Vec<f64> = self.capability_counts().iter().map(|&n| n as f64 * scale).collect();
        let c = largest_remainder(&q, size);
        Self {
            size,
            n_domain: c[0],
            n_reasoning: c[1],
            n_instruction: c[2],
            difficulty_mix: self.difficulty_mix,
        }
    }
}

/// Tiers to borrow from, nearest first, when a difficulty cell runs short.
fn relaxation_order(d: Difficulty) -> [Difficulty; 3] {
    match d {
        Difficulty::Easy => [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard],
        Difficulty::Medium => [Difficulty::Medium, Difficulty::Easy, Difficulty::Hard],
        Difficulty::Hard => [Difficulty::Hard, Difficulty::Medium, Difficulty::Easy],
    }
}

/// Draws a stratified group without replacement and returns indices into
/// `env.contexts`, grouped by capability then difficulty.
pub fn build_group<R: Rng + ?Sized>(env: &Environment, spec: &GroupSpec, rng: &mut R) -> Result<Vec<usize>> {
    spec.validate()?;
    let cells = spec.cell_counts();
    let mut out = Vec::with_capacity(spec.size);
    for cap in Capability::ALL {
        let mut pools: [Vec<usize>; 3] = Default::default();
        for &i in env.capability_tasks(cap) {
            pools[env.contexts[i].difficulty.index()].push(i);
        }
        for d in Difficulty::ALL {
            let mut need = cells[cap.index()][d.index()];
            for tier in relaxation_order(d) {
                if need == 0 {
                    break;
                }
                let pool = &mut pools[tier.index()];
                let take = need.min(pool.len());
                let picked: Vec<usize> = pool.choose_multiple(rng, take).copied().collect();
                pool.retain(|i| !picked.contains(i));
                need -= take;
                out.extend(picked);
            }
            if need > 0 {
                let needed = cells[cap.index()][d.index()];
                return Err(Error::InsufficientStratum {
                    capability: cap,
                    difficulty: d,
                    needed,
                    available: needed - need,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub members: Vec<Rollout>,
    pub counts: [usize; 3],
}

/// Samples one action per task from the current policy and scores it.
pub fn rollout_group<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &Environment,
    tasks: &[usize],
    weights: &RewardWeights,
    rng: &mut R,
) -> Result<Group> {
    let mut counts = [0; 3];
    let mut members = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let ctx = &env.contexts[task];
        let probs = action_distribution(params, ctx)?;
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { iteration: 0, module: "policy" });
        }
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::Config(format!("policy distribution: {e}")))?;
        let action = dist.sample(rng);
        let (subscores, composite) = env.score(ctx, action, weights)?;
        counts[ctx.capability.index()] += 1;
        members.push(Rollout {
            task,
            action,
            subscores,
            composite,
        });
    }
    Ok(Group { members, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub baseline: f64,
}

/// `A_t = R_t - mean(R)`; no variance normalization.
pub fn advantages_from_rewards(rewards: &[f64]) -> Result<AdvantageSet> {
    if rewards.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(AdvantageSet {
        advantages: rewards.iter().map(|r| r - baseline).collect(),
        baseline,
    })
}

pub fn group_advantages(group: &Group) -> Result<AdvantageSet> {
    let rewards: Vec<f64> = group.members.iter().map(|m| m.composite).collect();
    advantages_from_rewards(&rewards)
}

/// `(1/|G|) sum_t A_t grad log pi(a_t | x_t)`.
pub fn policy_gradient(params: &PolicyParams, env: &Environment, group: &Group, adv: &AdvantageSet) -> Result<Vec<f64>> {
    if group.members.len() != adv.advantages.len() {
        return Err(Error::Dimension {
            context: "advantages",
            expected: group.members.len(),
            got: adv.advantages.len(),
        });
    }
    if group.members.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut g = vec![0.0; params.len()];
    for (m, a) in group.members.iter().zip(&adv.advantages) {
        if *a == 0.0 {
            continue;
        }
        let glp = logprob_gradient(params, &env.contexts[m.task], m.action)?;
        for (gi, li) in g.iter_mut().zip(glp) {
            *gi += a * li;
        }
    }
    let n = group.members.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(g)
}

/// Mutable training state. Randomness is addressed by `(seed, iteration)`,
/// so the state carries no generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: PolicyParams,
    pub weights: RewardWeights,
    pub iteration: u64,
    pub group_spec: GroupSpec,
    pub l2_conflict_penalty: f64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(params: PolicyParams, group_spec: GroupSpec, seed: u64) -> Self {
        Self {
            params,
            weights: RewardWeights::default(),
            iteration: 0,
            group_spec,
            l2_conflict_penalty: 0.0,
            seed,
        }
    }
}

/// Ascent direction: the policy gradient minus the conflict-penalty gradient
/// when the penalty is active.
pub fn grpo_gradient(
    state: &TrainState,
    env: &Environment,
    group: &Group,
    adv: &AdvantageSet,
    orth: &OrthogonalityConfig,
) -> Result<Vec<f64>> {
    let mut g = policy_gradient(&state.params, env, group, adv)?;
    if state.l2_conflict_penalty > 0.0 {
        let pg = conflict_penalty_gradient(
            &state.params,
            env,
            &state.weights,
            orth.epsilon,
            state.l2_conflict_penalty,
            orth.fd_step,
        )?;
        for (gi, pi) in g.iter_mut().zip(pg) {
            *gi -= pi;
        }
    }
    Ok(g)
}

/// Summed negative log-likelihood of the gold actions and its exact gradient.
pub fn sft_loss(params: &PolicyParams, dataset: &[TaskContext]) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Config("SFT dataset is empty".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for ctx in dataset {
        let probs = action_distribution(params, ctx)?;
        loss -= probs[ctx.gold_action].ln();
        for (gi, li) in grad.iter_mut().zip(logprob_gradient(params, ctx, ctx.gold_action)?) {
            *gi -= li;
        }
    }
    Ok((loss, grad))
}

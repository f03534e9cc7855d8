//! Self-check suite: finite-difference, identity, sampling and brute-force
//! oracles against the library's closed forms.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::balance::{balance_score, gradient_cosine, CapabilityScores};
use crate::envpolicy::{
    action_distribution, exact_capability_objective, logprob_gradient, Capability, Difficulty, EnvSpec, Environment,
    PolicyParams, TaskContext,
};
use crate::error::Result;
use crate::grpo::{advantages_from_rewards, build_group, policy_gradient, rollout_group, sft_loss, AdvantageSet, GroupSpec};
use crate::metrics::{dominates, integration_score, IntegrationConfig, ParetoArchive};
use crate::reward::{composite, FormatConstraints, RewardModel, RewardModelSpec, RewardWeights, SubScores};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Groups averaged by the estimator-consistency check.
    pub estimator_groups: usize,
    /// Negates every advantage before the estimator check. Test fixture for
    /// confirming that the check can fail.
    #[doc(hidden)]
    pub mutate_advantage_sign: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            estimator_groups: 20_000,
            mutate_advantage_sign: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn random_context(r: &mut StreamRng, n_features: usize, n_actions: usize) -> TaskContext {
    let x: Vec<f64> = (0..n_features).map(|_| r.sample(StandardNormal)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    TaskContext {
        capability: Capability::Domain,
        features: x.into_iter().map(|v| v / norm).collect(),
        gold_action: r.random_range(0..n_actions),
        difficulty: Difficulty::Easy,
        format: FormatConstraints::default(),
    }
}

fn random_params(r: &mut StreamRng, n_features: usize, n_actions: usize) -> PolicyParams {
    let theta = (0..n_features * n_actions).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    PolicyParams::from_vec(theta, n_features, n_actions).expect("finite by construction")
}

/// Max componentwise error of `exact` against central differences of `f`,
/// relative to the larger of `max |fd|` and 1.
pub fn fd_relative_error(theta: &[f64], exact: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut probe = theta.to_vec();
    let mut max_err: f64 = 0.0;
    let mut scale: f64 = 1.0;
    for k in 0..theta.len() {
        probe[k] = theta[k] + h;
        let up = f(&probe);
        probe[k] = theta[k] - h;
        let down = f(&probe);
        probe[k] = theta[k];
        let fd = (up - down) / (2.0 * h);
        max_err = max_err.max((fd - exact[k]).abs());
        scale = scale.max(fd.abs());
    }
    max_err / scale
}

fn with_theta(p: &PolicyParams, theta: &[f64]) -> PolicyParams {
    PolicyParams {
        theta: theta.to_vec(),
        ..p.clone()
    }
}

fn logprob_fd(seed: u64) -> Result<CheckResult> {
    let mut r = rng::stream(seed, 101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nf, na) = (r.random_range(2..=4), r.random_range(2..=4));
        let p = random_params(&mut r, nf, na);
        let ctx = random_context(&mut r, nf, na);
        let a = r.random_range(0..na);
        let g = logprob_gradient(&p, &ctx, a)?;
        let err = fd_relative_error(&p.theta, &g, 1e-5, |t| {
            action_distribution(&with_theta(&p, t), &ctx).map(|d| d[a].ln()).unwrap_or(f64::NAN)
        });
        worst = worst.max(err);
    }
    Ok(check("logprob gradient vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e}")))
}

fn sft_fd(seed: u64) -> Result<CheckResult> {
    let mut r = rng::stream(seed, 102);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (nf, na) = (r.random_range(2..=4), r.random_range(2..=4));
        let p = random_params(&mut r, nf, na);
        let n = r.random_range(1..=6);
        let data: Vec<TaskContext> = (0..n).map(|_| random_context(&mut r, nf, na)).collect();
        let (_, g) = sft_loss(&p, &data)?;
        let err = fd_relative_error(&p.theta, &g, 1e-5, |t| {
            sft_loss(&with_theta(&p, t), &data).map(|v| v.0).unwrap_or(f64::NAN)
        });
        worst = worst.max(err);
    }
    Ok(check("SFT gradient vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e}")))
}

fn small_env(seed: u64, tasks: usize) -> Result<Environment> {
    let spec = EnvSpec {
        tasks_per_capability: tasks,
        seed,
        ..Default::default()
    };
    let rm = RewardModel::from_spec(&RewardModelSpec { seed, ..Default::default() })?;
    Environment::synthetic(&spec, rm)
}

fn objective_fd(seed: u64) -> Result<CheckResult> {
    let env = small_env(seed, 5)?;
    let w = RewardWeights::default();
    let mut r = rng::stream(seed, 103);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = random_params(&mut r, 2, 2);
        for cap in Capability::ALL {
            let g = exact_capability_objective(&p, &env, cap, &w)?.gradient;
            let err = fd_relative_error(&p.theta, &g, 1e-5, |t| {
                exact_capability_objective(&with_theta(&p, t), &env, cap, &w)
                    .map(|o| o.value)
                    .unwrap_or(f64::NAN)
            });
            worst = worst.max(err);
        }
    }
    Ok(check("exact objective gradient vs finite differences", worst < 1e-5, format!("max rel err {worst:.2e}")))
}

fn advantage_identities(seed: u64) -> Result<CheckResult> {
    let mut r = rng::stream(seed, 104);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut dyadic_exact = true;
    for _ in 0..1000 {
        let n = r.random_range(1..=32);
        let rewards: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let c: f64 = r.random_range(-5.0..5.0);
        let a = advantages_from_rewards(&rewards)?;
        worst_sum = worst_sum.max(a.advantages.iter().sum::<f64>().abs());
        let shifted: Vec<f64> = rewards.iter().map(|v| v + c).collect();
        let b = advantages_from_rewards(&shifted)?;
        for (x, y) in a.advantages.iter().zip(&b.advantages) {
            worst_shift = worst_shift.max((x - y).abs());
        }
        // dyadic rewards, dyadic shift and power-of-two groups: no rounding at all
        let m = 1usize << r.random_range(0..=5);
        let rewards: Vec<f64> = (0..m).map(|_| r.random_range(0..=1024) as f64 / 1024.0).collect();
        let c = r.random_range(-64..=64) as f64 / 8.0;
        let a = advantages_from_rewards(&rewards)?;
        let b = advantages_from_rewards(&rewards.iter().map(|v| v + c).collect::<Vec<_>>())?;
        dyadic_exact &= a.advantages == b.advantages;
    }
    Ok(check(
        "advantage identities",
        worst_sum <= 1e-9 && worst_shift <= 1e-12 && dyadic_exact,
        format!("max |sum| {worst_sum:.1e}, max shift drift {worst_shift:.1e}, dyadic exact {dyadic_exact}"),
    ))
}

/// Mean sampled GRPO gradient against the exact gradient on a
/// single-capability environment whose every group contains all of its
/// tasks. Returns the cosine.
pub fn estimator_cosine(seed: u64, groups: usize, mutate_sign: bool) -> Result<f64> {
    let env = small_env(seed, 5)?.only(Capability::Domain);
    let spec = GroupSpec::only(Capability::Domain, 5);
    let w = RewardWeights::default();
    let p = PolicyParams::from_vec(vec![0.4, -0.3, -0.2, 0.5], 2, 2)?;
    let exact = exact_capability_objective(&p, &env, Capability::Domain, &w)?.gradient;
    let mut mean = vec![0.0; p.len()];
    for k in 0..groups {
        let mut r = rng::stream(seed, rng::tags::GROUP + k as u64);
        let tasks = build_group(&env, &spec, &mut r)?;
        let group = rollout_group(&p, &env, &tasks, &w, &mut r)?;
        let rewards: Vec<f64> = group.members.iter().map(|m| m.composite).collect();
        let mut adv = advantages_from_rewards(&rewards)?;
        if mutate_sign {
            adv = AdvantageSet {
                advantages: adv.advantages.iter().map(|a| -a).collect(),
                ..adv
            };
        }
        let g = policy_gradient(&p, &env, &group, &adv)?;
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += gi;
        }
    }
    Ok(gradient_cosine(&mean, &exact)?.value)
}

fn estimator(opts: &VerifyOptions) -> Result<CheckResult> {
    let c = estimator_cosine(opts.seed, opts.estimator_groups, opts.mutate_advantage_sign)?;
    Ok(check(
        "GRPO estimator consistency",
        c > 0.99,
        format!("cosine {c:.5} over {} groups", opts.estimator_groups),
    ))
}

/// Brute-force non-dominated filter, keeping the first copy of duplicates.
pub fn brute_force_front(points: &[CapabilityScores]) -> Vec<CapabilityScores> {
    let mut out: Vec<CapabilityScores> = Vec::new();
    for p in points {
        if !points.iter().any(|q| dominates(q, p)) && !out.contains(p) {
            out.push(*p);
        }
    }
    out
}

fn same_set(a: &[CapabilityScores], b: &[CapabilityScores]) -> bool {
    a.len() == b.len() && a.iter().all(|p| b.contains(p))
}

fn pareto(seed: u64) -> Result<CheckResult> {
    let mut r = rng::stream(seed, 105);
    let mut ok = true;
    for _ in 0..20 {
        let stream: Vec<CapabilityScores> = (0..100)
            .map(|_| {
                // coarse grid to exercise ties and duplicates
                let mut v = || r.random_range(0..20) as f64 * 5.0;
                CapabilityScores::new(v(), v(), v())
            })
            .collect::<Result<_>>()?;
        let mut archive = ParetoArchive::new();
        for p in &stream {
            archive.insert(*p);
        }
        ok &= same_set(&archive.points, &brute_force_front(&stream));
    }
    Ok(check("Pareto archive vs brute-force filter", ok, "20 streams of 100 points".into()))
}

fn reference_values() -> Result<CheckResult> {
    let c = composite(&RewardWeights::default(), &SubScores::new(0.6, 1.0, 0.0))?;
    let b1 = balance_score(&CapabilityScores::new(62.0, 74.8, 52.9)?)?;
    let b2 = balance_score(&CapabilityScores::new(80.95, 67.95, 61.94)?)?;
    let i1 = integration_score(&CapabilityScores::new(80.95, 67.95, 61.94)?, &IntegrationConfig::preset("comparison")?)?;
    let i2 = integration_score(&CapabilityScores::new(62.0, 74.8, 52.9)?, &IntegrationConfig::preset("baseline")?)?;
    let ok = (c - 0.55).abs() < 1e-12
        && (b1 - 0.858).abs() <= 1e-3
        && (b2 - 0.887).abs() <= 1e-3
        && (i1 - 86.7).abs() <= 0.15
        && (i2 - 63.5).abs() <= 0.1;
    Ok(check(
        "reference metric values",
        ok,
        format!("composite {c:.3}, balance {b1:.3}/{b2:.3}, integration {i1:.2}/{i2:.2}"),
    ))
}

/// Runs every check. Errors inside a check surface as a failed row.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    let named: Vec<(&'static str, Box<dyn Fn() -> Result<CheckResult>>)> = vec![
        ("logprob gradient vs finite differences", Box::new(|| logprob_fd(opts.seed))),
        ("SFT gradient vs finite differences", Box::new(|| sft_fd(opts.seed))),
        ("exact objective gradient vs finite differences", Box::new(|| objective_fd(opts.seed))),
        ("advantage identities", Box::new(|| advantage_identities(opts.seed))),
        ("GRPO estimator consistency", Box::new(|| estimator(opts))),
        ("Pareto archive vs brute-force filter", Box::new(|| pareto(opts.seed))),
        ("reference metric values", Box::new(reference_values)),
    ];
    named
        .into_iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, format!("error: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let opts = VerifyOptions { estimator_groups: 5_000, ..Default::default() };
        for c in run_suite(&opts) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let opts = VerifyOptions { estimator_groups: 2_000, mutate_advantage_sign: true, ..Default::default() };
        let c = estimator(&opts).unwrap();
        assert!(!c.passed, "{}", c.detail);
    }
}

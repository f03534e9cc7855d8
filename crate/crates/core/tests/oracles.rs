use rand::Rng;

use bbio_core::balance::{capability_gradients, orthogonality_check};
use bbio_core::envpolicy::{action_distribution, exact_capability_objective, init_policy, Capability, EnvSpec};
use bbio_core::metrics::{stationarity_check, ParetoConfig};
use bbio_core::reward::{RewardModelSpec, RewardWeights};
use bbio_core::rng;
use bbio_core::train::{train, TrainConfig};

fn config(conflict: f64, monitor: bool) -> TrainConfig {
    let mut cfg = TrainConfig {
        env: EnvSpec { tasks_per_capability: 16, conflict_strength: conflict, seed: 7, ..Default::default() },
        reward_model: RewardModelSpec { seed: 7, ..Default::default() },
        iterations: 2000,
        step_size: 0.5,
        ..Default::default()
    };
    cfg.orthogonality.enabled = monitor;
    cfg
}

#[test]
fn objective_matches_monte_carlo() {
    let cfg = config(1.0, false);
    let env = cfg.build_environment(None).unwrap();
    let mut p = init_policy(&cfg.env, 3).unwrap();
    for v in p.theta.iter_mut() {
        *v *= 100.0;
    }
    let w = RewardWeights::default();
    let mut r = rng::stream(21, 0);
    for cap in Capability::ALL {
        let exact = exact_capability_objective(&p, &env, cap, &w).unwrap().value;
        let tasks = env.capability_tasks(cap);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let ctx = &env.contexts[tasks[r.random_range(0..tasks.len())]];
            let pi = action_distribution(&p, ctx).unwrap();
            let u: f64 = r.random();
            let a = if u < pi[0] { 0 } else { 1 };
            let v = env.score(ctx, a, &w).unwrap().1;
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "{cap}: mc {mean} exact {exact} se {se}");
    }
}

#[test]
fn conflict_target_holds_at_init() {
    let w = RewardWeights::default();
    for seed in 0..10 {
        let cfg = TrainConfig { env: EnvSpec { seed, ..config(1.0, true).env }, ..config(1.0, true) };
        let env = cfg.build_environment(None).unwrap();
        let p = init_policy(&cfg.env, 0).unwrap();
        let rep = orthogonality_check(&capability_gradients(&p, &env, &w).unwrap(), &cfg.orthogonality).unwrap();
        let worst = rep.pairwise_cosines.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(worst <= -0.5 + 1e-3, "seed {seed}: min cosine {worst}");
    }
}

/// With partial conflict the three objectives share an ascent direction at
/// initialisation; balanced training removes it.
#[test]
fn common_ascent_disappears_under_training() {
    let cfg = config(0.5, true);
    let env = cfg.build_environment(None).unwrap();
    let pcfg = ParetoConfig::default();
    let w = RewardWeights::default();
    let p0 = init_policy(&cfg.env, cfg.seed).unwrap();
    let before = stationarity_check(&p0, &env, &w, &pcfg, &mut rng::stream(0, rng::tags::STATIONARITY)).unwrap();
    assert!(before.any_common_ascent);
    let log = train(&cfg, &env, &mut |_| Ok(())).unwrap();
    let st = &log.final_state;
    let after =
        stationarity_check(&st.params, &env, &st.weights, &pcfg, &mut rng::stream(0, rng::tags::STATIONARITY)).unwrap();
    assert!(!after.any_common_ascent, "best min derivative {}", after.best_min_derivative);
    assert!(log.records.iter().any(|r| r.any_common_ascent));
}

#[test]
fn monitor_separates_gradients_where_plain_training_does_not() {
    let on = train(&config(1.0, true), &config(1.0, true).build_environment(None).unwrap(), &mut |_| Ok(())).unwrap();
    let off = train(&config(1.0, false), &config(1.0, false).build_environment(None).unwrap(), &mut |_| Ok(())).unwrap();
    assert!(on.last().max_pairwise_cosine <= 0.06);
    assert!(off.last().max_pairwise_cosine > 0.01);
    assert!(on.records.iter().any(|r| r.remediation.is_some()));
    assert!(off.records.iter().all(|r| r.remediation.is_none()));
}

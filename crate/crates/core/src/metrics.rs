//! Integration Score, Pareto archive and the common-ascent (stationarity)
//! check.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::balance::{capability_gradients, CapabilityScores};
use crate::envpolicy::{exact_capability_objective, Capability, Environment, PolicyParams};
use crate::error::{Error, Result};
use crate::reward::RewardWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub mu_target: f64,
    /// Mean score of the weakest capability domain across compared systems.
    pub mu_min_domain: f64,
    /// Round the confidence factor to this many decimals before use, as
    /// when the factor is quoted rather than recomputed.
    pub cf_decimals: Option<u32>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            mu_target: 70.0,
            mu_min_domain: 70.0,
            cf_decimals: None,
        }
    }
}

/// Named reference values of `mu_min_domain`.
pub const PRESETS: [(&str, f64, u32); 2] = [("comparison", 49.97, 3), ("baseline", 58.2, 2)];

impl IntegrationConfig {
    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _, _)| *n == name)
            .map(|&(_, mu, dec)| Self {
                mu_target: 70.0,
                mu_min_domain: mu,
                cf_decimals: Some(dec),
            })
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                Error::Config(format!("unknown preset {name:?}; expected one of {names:?}"))
            })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_target > 0.0 && self.mu_target.is_finite()) {
            return Err(Error::Config(format!("mu_target {} must be positive", self.mu_target)));
        }
        if !(self.mu_min_domain > 0.0 && self.mu_min_domain.is_finite()) {
            return Err(Error::Config(format!("mu_min_domain {} must be positive", self.mu_min_domain)));
        }
        Ok(())
    }

    /// `C_f = mu_target / mu_min_domain`, rounded if configured.
    pub fn confidence_factor(&self) -> Result<f64> {
        self.validate()?;
        let cf = self.mu_target / self.mu_min_domain;
        Ok(match self.cf_decimals {
            Some(d) => {
                let k = 10f64.powi(d as i32);
                (cf * k).round() / k
            }
            None => cf,
        })
    }
}

/// `min(T, D, I) * C_f`.
pub fn integration_score(scores: &CapabilityScores, cfg: &IntegrationConfig) -> Result<f64> {
    Ok(scores.min() * cfg.confidence_factor()?)
}

/// `a` dominates `b`: no worse anywhere and better somewhere.
pub fn dominates(a: &CapabilityScores, b: &CapabilityScores) -> bool {
    let (a, b) = (a.as_array(), b.as_array());
    a.iter().zip(&b).all(|(x, y)| x >= y) && a.iter().zip(&b).any(|(x, y)| x > y)
}

/// Mutually non-dominated set of score triples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub points: Vec<CapabilityScores>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `p` unless an archived point dominates or equals it, then drops
    /// everything `p` dominates. Returns whether `p` was inserted.
    pub fn insert(&mut self, p: CapabilityScores) -> bool {
        if self.points.iter().any(|q| dominates(q, &p) || *q == p) {
            return false;
        }
        self.points.retain(|q| !dominates(&p, q));
        self.points.push(p);
        true
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn pareto_update(mut archive: ParetoArchive, p: CapabilityScores) -> ParetoArchive {
    archive.insert(p);
    archive
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoConfig {
    pub n_directions: usize,
    pub tau: f64,
    /// Step used to confirm the best direction on the objectives themselves.
    pub step: f64,
    /// Minimal trade-off constant. Recorded, not asserted.
    pub delta_pareto: f64,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self {
            n_directions: 256,
            tau: 1e-4,
            step: 1e-3,
            delta_pareto: 1e-4,
        }
    }
}

impl ParetoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_directions == 0 || !(self.tau > 0.0) || !(self.step > 0.0) || !(self.delta_pareto > 0.0) {
            return Err(Error::Config("pareto config values must all be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub any_common_ascent: bool,
    /// Sampled direction whose smallest directional derivative is largest.
    pub worst_direction: Vec<f64>,
    /// That smallest directional derivative.
    pub best_min_derivative: f64,
}

fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return d.into_iter().map(|v| v / n).collect();
        }
    }
}

/// Common-ascent test on given gradients.
pub fn stationarity_from_gradients<R: Rng + ?Sized>(
    grads: &[Vec<f64>],
    cfg: &ParetoConfig,
    rng: &mut R,
) -> Result<StationarityReport> {
    cfg.validate()?;
    let dim = grads.first().map_or(0, Vec::len);
    if let Some(g) = grads.iter().find(|g| g.len() != dim) {
        return Err(Error::Dimension {
            context: "stationarity gradients",
            expected: dim,
            got: g.len(),
        });
    }
    let mut best = f64::NEG_INFINITY;
    let mut worst_direction = vec![0.0; dim];
    for _ in 0..cfg.n_directions {
        let d = unit_direction(dim, rng);
        let m = grads
            .iter()
            .map(|g| g.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if m > best {
            best = m;
            worst_direction = d;
        }
    }
    Ok(StationarityReport {
        any_common_ascent: best > cfg.tau,
        worst_direction,
        best_min_derivative: best,
    })
}

/// Samples unit directions in parameter space and reports whether any of
/// them raises all three capability objectives at rate above `tau`.
pub fn stationarity_check<R: Rng + ?Sized>(
    params: &PolicyParams,
    env: &Environment,
    weights: &RewardWeights,
    cfg: &ParetoConfig,
    rng: &mut R,
) -> Result<StationarityReport> {
    let grads = capability_gradients(params, env, weights)?;
    stationarity_from_gradients(&grads, cfg, rng)
}

/// Change of each capability objective after a `cfg.step` move along `d`.
pub fn step_gains(
    params: &PolicyParams,
    env: &Environment,
    weights: &RewardWeights,
    d: &[f64],
    step: f64,
) -> Result<[f64; 3]> {
    let mut moved = params.clone();
    for (t, di) in moved.theta.iter_mut().zip(d) {
        *t += step * di;
    }
    let mut out = [0.0; 3];
    for cap in Capability::ALL {
        let before = exact_capability_objective(params, env, cap, weights)?.value;
        let after = exact_capability_objective(&moved, env, cap, weights)?.value;
        out[cap.index()] = after - before;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn sc(d: f64, r: f64, i: f64) -> CapabilityScores {
        CapabilityScores::new(d, r, i).unwrap()
    }

    #[test]
    fn integration_examples() {
        let cfg = IntegrationConfig { mu_min_domain: 49.97, ..Default::default() };
        assert!((cfg.confidence_factor().unwrap() - 1.401).abs() < 5e-4);
        let v = integration_score(&sc(61.94, 80.95, 67.95), &cfg).unwrap();
        assert!((v - 86.7).abs() <= 0.15);
        let cfg = IntegrationConfig::preset("baseline").unwrap();
        assert_eq!(cfg.confidence_factor().unwrap(), 1.2);
        let v = integration_score(&sc(52.9, 60.0, 70.0), &cfg).unwrap();
        assert!((v - 63.5).abs() <= 0.1);
        let v = integration_score(&sc(52.9, 60.0, 70.0), &IntegrationConfig::default()).unwrap();
        assert_eq!(v, 52.9);
        let bad = IntegrationConfig { mu_min_domain: 0.0, ..Default::default() };
        assert!(integration_score(&sc(1.0, 1.0, 1.0), &bad).is_err());
        assert!(IntegrationConfig::preset("nope").is_err());
    }

    #[test]
    fn archive_examples() {
        let a = pareto_update(pareto_update(ParetoArchive::new(), sc(1.0, 1.0, 1.0)), sc(2.0, 2.0, 2.0));
        assert_eq!(a.points, vec![sc(2.0, 2.0, 2.0)]);
        let a = pareto_update(pareto_update(ParetoArchive::new(), sc(2.0, 1.0, 1.0)), sc(1.0, 2.0, 1.0));
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn opposed_gradients_have_no_common_ascent() {
        let g = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.0]];
        let r = stationarity_from_gradients(&g, &ParetoConfig::default(), &mut rng::stream(0, 0)).unwrap();
        assert!(!r.any_common_ascent);
        let r2 = stationarity_from_gradients(&g, &ParetoConfig::default(), &mut rng::stream(0, 0)).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn aligned_gradients_have_common_ascent() {
        let g = vec![vec![1.0, 0.1], vec![0.9, 0.0], vec![1.0, -0.1]];
        let r = stationarity_from_gradients(&g, &ParetoConfig::default(), &mut rng::stream(0, 0)).unwrap();
        assert!(r.any_common_ascent);
        let n: f64 = r.worst_direction.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn integration_monotone_and_linear(d in 1.0f64..100.0, r in 1.0f64..100.0, i in 1.0f64..100.0, bump in 0.0f64..10.0, k in 0.5f64..3.0) {
            let cfg = IntegrationConfig { mu_min_domain: 55.0, ..Default::default() };
            let base = integration_score(&sc(d, r, i), &cfg).unwrap();
            prop_assert!(integration_score(&sc(d + bump, r, i), &cfg).unwrap() >= base);
            prop_assert!(integration_score(&sc(d, r + bump, i), &cfg).unwrap() >= base);
            prop_assert!(integration_score(&sc(d, r, i + bump), &cfg).unwrap() >= base);
            let scaled = IntegrationConfig { mu_target: cfg.mu_target * k, ..cfg };
            prop_assert!((integration_score(&sc(d, r, i), &scaled).unwrap() - k * base).abs() < 1e-9);
        }
    }
}

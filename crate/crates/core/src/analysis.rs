//! Estimators and diagnostics computed from ensembles and run logs.

use std::collections::BTreeMap;

use crate::engine::RunLog;
use crate::ensemble::Ensemble;
use crate::error::{QsdError, Result};
use crate::models::{ModelSpec, StateCode};

const NORMALIZATION_TOL: f64 = 1e-9;

/// A finitely supported distribution over states.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Distribution {
    mass: BTreeMap<StateCode, f64>,
}

impl Distribution {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sums the weights at each state. Zero weights are dropped.
    pub fn from_weighted(items: impl IntoIterator<Item = (StateCode, f64)>) -> Self {
        let mut mass = BTreeMap::new();
        for (s, w) in items {
            if w != 0.0 {
                *mass.entry(s).or_insert(0.0) += w;
            }
        }
        Distribution { mass }
    }

    /// Equal-weight average of several distributions.
    pub fn pool(parts: impl IntoIterator<Item = Distribution>) -> Self {
        let mut pooled = BTreeMap::new();
        let mut n = 0usize;
        for part in parts {
            n += 1;
            for (s, w) in part.mass {
                *pooled.entry(s).or_insert(0.0) += w;
            }
        }
        if n > 0 {
            pooled.values_mut().for_each(|w| *w /= n as f64);
        }
        Distribution { mass: pooled }
    }

    pub fn get(&self, state: StateCode) -> f64 {
        self.mass.get(&state).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateCode, f64)> + '_ {
        self.mass.iter().map(|(s, w)| (*s, *w))
    }

    pub fn support(&self) -> impl Iterator<Item = StateCode> + '_ {
        self.mass.keys().copied()
    }

    pub fn max_state(&self) -> Option<StateCode> {
        self.mass.keys().next_back().copied()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn normalized(&self) -> Result<Self> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(QsdError::AllAbsorbed);
        }
        Ok(Distribution {
            mass: self.mass.iter().map(|(s, w)| (*s, w / total)).collect(),
        })
    }

    /// `Σ_s f(s) p_s`.
    pub fn expectation(&self, f: impl Fn(StateCode) -> f64) -> f64 {
        self.mass.iter().map(|(s, w)| f(*s) * w).sum()
    }
}

impl FromIterator<(StateCode, f64)> for Distribution {
    fn from_iter<I: IntoIterator<Item = (StateCode, f64)>>(iter: I) -> Self {
        Distribution::from_weighted(iter)
    }
}

/// Total variation distance `½ Σ_s |p_s − q_s|` over the union support.
pub fn tv_distance(p: &Distribution, q: &Distribution) -> Result<f64> {
    for (name, d) in [("p", p), ("q", q)] {
        if !d.is_normalized() {
            return Err(QsdError::ContractViolation(format!(
                "{name} sums to {} rather than 1",
                d.total()
            )));
        }
    }
    let mut sum = 0.0;
    for (s, w) in p.iter() {
        sum += (w - q.get(s)).abs();
    }
    for (s, w) in q.iter() {
        if !p.mass.contains_key(&s) {
            sum += w.abs();
        }
    }
    Ok((0.5 * sum).min(1.0))
}

/// `α̂ = Σ_s q̃_{s0} · (weight at s)`. Linear in the weights; pass a
/// normalized ensemble for an estimate of the decay parameter.
pub fn decay_estimate(ensemble: &Ensemble, model: &ModelSpec) -> f64 {
    ensemble
        .particles
        .iter()
        .filter(|p| p.is_alive() && p.weight != 0.0)
        .map(|p| model.absorption_rate(p.state) * p.weight)
        .sum()
}

fn decay_estimate_of(dist: &Distribution, model: &ModelSpec) -> f64 {
    dist.expectation(|s| model.absorption_rate(s))
}

/// Decay-parameter estimates at every sampling time of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTrace {
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Equal-weight mean over the sampling times.
    pub pooled: f64,
}

pub fn alpha_trace(log: &RunLog, model: &ModelSpec) -> Result<AlphaTrace> {
    if log.samples.is_empty() {
        return Err(QsdError::EmptyLog);
    }
    let times: Vec<f64> = log.samples.iter().map(|s| s.time).collect();
    let estimates: Vec<f64> = log
        .samples
        .iter()
        .map(|s| decay_estimate_of(&s.distribution(), model))
        .collect();
    let pooled = estimates.iter().sum::<f64>() / estimates.len() as f64;
    Ok(AlphaTrace {
        times,
        estimates,
        pooled,
    })
}

/// Running mean of a scalar statistic: entry `k` averages the weighted
/// means of `statistic` over the first `k + 1` sampling times.
pub fn cumulative_mean_trace(log: &RunLog, statistic: impl Fn(StateCode) -> f64) -> Result<Vec<(f64, f64)>> {
    if log.samples.is_empty() {
        return Err(QsdError::EmptyLog);
    }
    let mut running = 0.0;
    Ok(log
        .samples
        .iter()
        .enumerate()
        .map(|(k, sample)| {
            let mean: f64 = sample.particles.iter().map(|(s, w)| statistic(*s) * w).sum();
            running += (mean - running) / (k + 1) as f64;
            (sample.time, running)
        })
        .collect())
}

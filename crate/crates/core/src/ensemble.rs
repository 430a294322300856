//! Weighted particle populations.

use rand::Rng;
use rand::distr::Distribution;
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::error::{QsdError, Result};
use crate::models::{ModelSpec, StateCode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub state: StateCode,
    pub weight: f64,
    /// Absolute time of the pending jump, if one has been drawn.
    pub next_event_time: Option<f64>,
}

impl Particle {
    pub fn new(state: StateCode, weight: f64) -> Self {
        Particle {
            state,
            weight,
            next_event_time: None,
        }
    }

    pub fn is_alive(&self) -> bool {
        !self.state.is_zero()
    }
}

/// Initial distribution `ν` over transient states.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Point(StateCode),
    Weighted(Vec<(StateCode, f64)>),
}

impl InitialDistribution {
    pub fn support(&self) -> Vec<StateCode> {
        match self {
            InitialDistribution::Point(s) => vec![*s],
            InitialDistribution::Weighted(list) => list
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(s, _)| *s)
                .collect(),
        }
    }

    /// Checks that `ν` is a distribution supported on the transient states.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if let InitialDistribution::Weighted(list) = self {
            if list.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) {
                return Err(QsdError::ContractViolation(
                    "initial weights must be finite and non-negative".into(),
                ));
            }
            if list.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
                return Err(QsdError::ContractViolation(
                    "initial distribution has no mass".into(),
                ));
            }
        }
        for s in self.support() {
            if model.is_absorbed(s) {
                return Err(QsdError::ContractViolation(format!(
                    "initial distribution charges absorbing state {s}"
                )));
            }
            model.encode(model.decode(s))?;
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StateCode {
        match self {
            InitialDistribution::Point(s) => *s,
            InitialDistribution::Weighted(list) => {
                let index = WeightedIndex::new(list.iter().map(|(_, w)| *w))
                    .expect("validated initial distribution");
                list[index.sample(rng)].0
            }
        }
    }

    /// Mass of `ν` as a normalized map.
    pub fn probabilities(&self) -> Vec<(StateCode, f64)> {
        match self {
            InitialDistribution::Point(s) => vec![(*s, 1.0)],
            InitialDistribution::Weighted(list) => {
                let total: f64 = list.iter().map(|(_, w)| w).sum();
                list.iter().map(|(s, w)| (*s, w / total)).collect()
            }
        }
    }
}

/// One cell of a partition of the transient states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionRule {
    /// An explicit list of state codes.
    States(Vec<StateCode>),
    /// Codes in `lo..=hi`; an absent `hi` leaves the range open.
    Range { lo: u64, hi: Option<u64> },
    /// Pair states with no infectives, `{(0, r) : r > 0}`.
    NoInfectives,
    /// Pair states with at least one infective.
    Infectives,
}

impl RegionRule {
    pub fn contains(&self, state: StateCode) -> bool {
        match self {
            RegionRule::States(list) => list.contains(&state),
            RegionRule::Range { lo, hi } => state.0 >= *lo && hi.is_none_or(|h| state.0 <= h),
            RegionRule::NoInfectives => {
                let (i, r) = state.pair_parts();
                i == 0 && r > 0
            }
            RegionRule::Infectives => state.pair_parts().0 > 0,
        }
    }
}

/// Ordered partition `S = S_1 ∪ … ∪ S_L`. A state belongs to the first
/// region whose rule matches it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    pub regions: Vec<RegionRule>,
}

impl Partition {
    pub fn new(regions: Vec<RegionRule>) -> Self {
        Partition { regions }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region_of(&self, state: StateCode) -> Option<usize> {
        if state.is_zero() {
            return None;
        }
        self.regions.iter().position(|r| r.contains(state))
    }
}

/// Per-region particle counts `M_l` and total weights `W(l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
}

/// `M` weighted particles and the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub clock: f64,
}

impl Ensemble {
    pub fn new(particles: Vec<Particle>) -> Self {
        Ensemble {
            particles,
            clock: 0.0,
        }
    }

    pub fn from_weighted(states: &[StateCode], weights: &[f64]) -> Self {
        assert_eq!(states.len(), weights.len());
        let particles = states
            .iter()
            .zip(weights)
            .map(|(&s, &w)| Particle::new(s, if s.is_zero() { 0.0 } else { w }))
            .collect();
        Ensemble::new(particles)
    }

    /// `m` independent draws from `ν`, equally weighted.
    pub fn from_initial<R: Rng + ?Sized>(initial: &InitialDistribution, m: usize, rng: &mut R) -> Self {
        let w = 1.0 / m as f64;
        let particles = (0..m).map(|_| Particle::new(initial.sample(rng), w)).collect();
        Ensemble::new(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    pub fn survivors(&self) -> usize {
        self.particles.iter().filter(|p| p.is_alive()).count()
    }

    pub fn states(&self) -> Vec<StateCode> {
        self.particles.iter().map(|p| p.state).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    /// Scales weights to sum to one.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(QsdError::AllAbsorbed);
        }
        for p in &mut self.particles {
            p.weight /= total;
        }
        Ok(())
    }

    /// Inverse sum of squared normalized weights.
    pub fn ess(&self) -> f64 {
        let total = self.total_weight();
        if !(total > 0.0) {
            return 0.0;
        }
        let sum_sq: f64 = self
            .particles
            .iter()
            .map(|p| {
                let w = p.weight / total;
                w * w
            })
            .sum();
        1.0 / sum_sq
    }

    /// Particle counts and weights per region; absorbed particles fall in no region.
    pub fn region_summary(&self, partition: &Partition) -> RegionSummary {
        let mut counts = vec![0; partition.len()];
        let mut weights = vec![0.0; partition.len()];
        for p in &self.particles {
            if let Some(l) = partition.region_of(p.state) {
                counts[l] += 1;
                weights[l] += p.weight;
            }
        }
        RegionSummary { counts, weights }
    }

    /// Weighted sum `Σ h(X_i) W_i`.
    pub fn weighted_sum(&self, h: impl Fn(StateCode) -> f64) -> f64 {
        self.particles
            .iter()
            .filter(|p| p.weight != 0.0)
            .map(|p| h(p.state) * p.weight)
            .sum()
    }
}

/// Outcome of [`check_proper`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperVerdict {
    /// `Σ h(X_i) W_i` before resampling (normalized weights).
    pub target: f64,
    /// Mean of `Σ h(X'_i) W'_i` over the replications.
    pub estimate: f64,
    pub standard_error: f64,
    pub replications: usize,
    pub pass: bool,
}

/// Monte Carlo test that a resampling procedure preserves proper weighting
/// for test function `h`.
///
/// The input is normalized, so the common constant is one: the mean of
/// `Σ h(X'_i) W'_i` over replications must match `Σ h(X_i) W_i` within four
/// standard errors. A procedure with zero variance must match to 1e-12
/// relative.
pub fn check_proper<R, F, H>(
    before: &Ensemble,
    mut resample: F,
    h: H,
    replications: usize,
    rng: &mut R,
) -> Result<ProperVerdict>
where
    R: Rng + ?Sized,
    F: FnMut(&Ensemble, &mut R) -> Result<Ensemble>,
    H: Fn(StateCode) -> f64,
{
    if replications < 2 {
        return Err(QsdError::ContractViolation("need at least two replications".into()));
    }
    let mut input = before.clone();
    input.normalize()?;
    let target = input.weighted_sum(&h);

    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..replications {
        let mut after = resample(&input, rng)?;
        after.normalize()?;
        let value = after.weighted_sum(&h);
        let delta = value - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (value - mean);
    }
    let variance = m2 / (replications - 1) as f64;
    let standard_error = (variance / replications as f64).sqrt();
    let slack = 1e-12 * target.abs().max(1.0);
    let pass = (mean - target).abs() <= 4.0 * standard_error + slack;
    Ok(ProperVerdict {
        target,
        estimate: mean,
        standard_error,
        replications,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(n: u64) -> StateCode {
        StateCode(n)
    }

    #[test]
    fn normalize_scales_proportionally() {
        let mut e = Ensemble::from_weighted(&[s(1), s(2), s(0)], &[2.0, 2.0, 0.0]);
        e.normalize().unwrap();
        assert_eq!(e.weights(), vec![0.5, 0.5, 0.0]);

        let mut single = Ensemble::from_weighted(&[s(3)], &[1.0]);
        single.normalize().unwrap();
        assert_eq!(single.weights(), vec![1.0]);
    }

    #[test]
    fn normalize_all_absorbed() {
        let mut e = Ensemble::from_weighted(&[s(0), s(0)], &[0.0, 0.0]);
        assert_eq!(e.normalize(), Err(QsdError::AllAbsorbed));
    }

    #[test]
    fn ess_values() {
        let e = Ensemble::from_weighted(&[s(1); 7], &[1.0; 7]);
        assert!((e.ess() - 7.0).abs() < 1e-12);
        let e = Ensemble::from_weighted(&[s(1), s(0), s(0)], &[1.0, 0.0, 0.0]);
        assert!((e.ess() - 1.0).abs() < 1e-12);
        let e = Ensemble::from_weighted(&[s(1), s(2), s(3)], &[0.5, 0.25, 0.25]);
        assert!((e.ess() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn region_summary_pure_death() {
        let partition = Partition::new(vec![
            RegionRule::States(vec![s(1), s(2)]),
            RegionRule::Range { lo: 3, hi: Some(5) },
        ]);
        let e = Ensemble::from_weighted(&[s(1), s(2), s(4), s(0)], &[0.3, 0.3, 0.4, 0.0]);
        let summary = e.region_summary(&partition);
        assert_eq!(summary.counts, vec![2, 1]);
        assert!((summary.weights[0] - 0.6).abs() < 1e-15);
        assert!((summary.weights[1] - 0.4).abs() < 1e-15);

        let dead = Ensemble::from_weighted(&[s(0), s(0)], &[0.0, 0.0]);
        let summary = dead.region_summary(&partition);
        assert_eq!(summary.counts, vec![0, 0]);
        assert_eq!(summary.weights, vec![0.0, 0.0]);

        let whole = Partition::new(vec![RegionRule::Range { lo: 1, hi: None }]);
        let summary = e.region_summary(&whole);
        assert_eq!(summary.counts, vec![3]);
        assert!((summary.weights[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn immunity_regions() {
        let partition = Partition::new(vec![RegionRule::NoInfectives, RegionRule::Infectives]);
        assert_eq!(partition.region_of(StateCode::pair(0, 3).unwrap()), Some(0));
        assert_eq!(partition.region_of(StateCode::pair(2, 0).unwrap()), Some(1));
        assert_eq!(partition.region_of(StateCode::ABSORBED), None);
    }

    #[test]
    fn initial_distribution_must_be_transient() {
        let model = ModelSpec::PureDeath {
            rates: vec![1.0, 2.0],
        };
        assert!(InitialDistribution::Point(s(2)).validate(&model).is_ok());
        assert!(InitialDistribution::Point(s(0)).validate(&model).is_err());
        assert!(InitialDistribution::Point(s(3)).validate(&model).is_err());
        assert!(InitialDistribution::Weighted(vec![(s(1), 1.0), (s(0), 1.0)])
            .validate(&model)
            .is_err());
    }
}

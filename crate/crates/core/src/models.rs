//! Absorbing Markov processes and their one-step simulation kernels.
//!
//! Every model lives on `S ∪ {0}` where `0` is the single identified
//! absorbing state. States are packed into a [`StateCode`]; for the count
//! models the code is the count itself, for the transient immunity process
//! the pair `(i, r)` packs as `i·2^32 + r`.

use std::fmt;

use arrayvec::ArrayVec;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{QsdError, Result};

const PAIR_SHIFT: u32 = 32;
const PAIR_MASK: u64 = (1 << PAIR_SHIFT) - 1;

/// Packed model state. Code 0 is always the absorbing state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateCode(pub u64);

impl StateCode {
    pub const ABSORBED: StateCode = StateCode(0);

    pub fn count(n: u64) -> Self {
        StateCode(n)
    }

    /// Packs an `(infectives, recovered)` pair.
    pub fn pair(infectives: u64, recovered: u64) -> Result<Self> {
        if infectives > PAIR_MASK || recovered > PAIR_MASK {
            return Err(QsdError::StateOverflow(format!(
                "pair ({infectives}, {recovered}) exceeds 32-bit components"
            )));
        }
        Ok(StateCode((infectives << PAIR_SHIFT) | recovered))
    }

    pub fn pair_parts(self) -> (u64, u64) {
        (self.0 >> PAIR_SHIFT, self.0 & PAIR_MASK)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for StateCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Human-readable form of a [`StateCode`] for a given model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum State {
    Count(u64),
    Pair { infectives: u64, recovered: u64 },
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Count(n) => write!(f, "{n}"),
            State::Pair {
                infectives,
                recovered,
            } => write!(f, "({infectives},{recovered})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

/// One transition of a continuous-time model: target state and rate.
pub type Jump = (StateCode, f64);

/// Outgoing jumps of a state. No model has more than three.
pub type Jumps = ArrayVec<Jump, 3>;

/// Result of one simulation step from a transient state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventStep {
    /// Time spent in the current state; exactly 1 for discrete-time models.
    pub holding_time: f64,
    pub next_state: StateCode,
}

/// An absorbing Markov process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Pure death on `{0, 1, …, L}`; state `i` dies at rate `rates[i-1]`.
    PureDeath { rates: Vec<f64> },
    /// Linear birth-death with per-capita birth and death rates.
    LinearBirthDeath { birth_rate: f64, death_rate: f64 },
    /// Two-type Wright-Fisher with selection; the state counts type-1 individuals.
    WrightFisher { population: u64, selection: [f64; 2] },
    /// Infection, recovery into immunity, and loss of immunity; state `(I, R)`.
    TransientImmunity {
        infection_rate: f64,
        recovery_rate: f64,
        immunity_loss_rate: f64,
    },
    /// Pure death on `{0, 1, 2}`: `2 → 1` at rate `delta`, `1 → 0` at rate 1.
    TwoStateDeath { delta: f64 },
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(QsdError::InvalidModel(format!(
            "{name} must be finite and > 0, got {value}"
        )))
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::PureDeath { rates } => {
                if rates.is_empty() {
                    return Err(QsdError::InvalidModel("pure death needs at least one rate".into()));
                }
                for (i, &r) in rates.iter().enumerate() {
                    positive(&format!("rates[{i}]"), r)?;
                }
            }
            ModelSpec::LinearBirthDeath {
                birth_rate,
                death_rate,
            } => {
                positive("birth_rate", *birth_rate)?;
                positive("death_rate", *death_rate)?;
                if death_rate <= birth_rate {
                    log::warn!(
                        "death rate {death_rate} <= birth rate {birth_rate}: no limiting conditional distribution"
                    );
                }
            }
            ModelSpec::WrightFisher {
                population,
                selection,
            } => {
                if *population < 2 {
                    return Err(QsdError::InvalidModel("population must be at least 2".into()));
                }
                if *population > u32::MAX as u64 {
                    return Err(QsdError::InvalidModel("population too large".into()));
                }
                for (k, &s) in selection.iter().enumerate() {
                    if !s.is_finite() || s < 0.0 {
                        return Err(QsdError::InvalidModel(format!(
                            "selection[{k}] must be >= 0, got {s}"
                        )));
                    }
                }
            }
            ModelSpec::TransientImmunity {
                infection_rate,
                recovery_rate,
                immunity_loss_rate,
            } => {
                positive("infection_rate", *infection_rate)?;
                positive("recovery_rate", *recovery_rate)?;
                positive("immunity_loss_rate", *immunity_loss_rate)?;
            }
            ModelSpec::TwoStateDeath { delta } => positive("delta", *delta)?,
        }
        Ok(())
    }

    pub fn time_kind(&self) -> TimeKind {
        match self {
            ModelSpec::WrightFisher { .. } => TimeKind::Discrete,
            _ => TimeKind::Continuous,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.time_kind() == TimeKind::Discrete
    }

    pub fn is_absorbed(&self, state: StateCode) -> bool {
        match self {
            ModelSpec::WrightFisher { population, .. } => state.0 == 0 || state.0 >= *population,
            _ => state.is_zero(),
        }
    }

    pub fn decode(&self, state: StateCode) -> State {
        match self {
            ModelSpec::TransientImmunity { .. } => {
                let (infectives, recovered) = state.pair_parts();
                State::Pair {
                    infectives,
                    recovered,
                }
            }
            _ => State::Count(state.0),
        }
    }

    pub fn encode(&self, state: State) -> Result<StateCode> {
        match (self, state) {
            (ModelSpec::TransientImmunity { .. }, State::Pair { infectives, recovered }) => {
                StateCode::pair(infectives, recovered)
            }
            (ModelSpec::TransientImmunity { .. }, State::Count(_)) => Err(QsdError::ContractViolation(
                "transient immunity states are (infectives, recovered) pairs".into(),
            )),
            (_, State::Pair { .. }) => Err(QsdError::ContractViolation(
                "this model has scalar states".into(),
            )),
            (_, State::Count(n)) => {
                if let Some(max) = self.max_count() {
                    if n > max {
                        return Err(QsdError::ContractViolation(format!(
                            "state {n} exceeds the largest state {max}"
                        )));
                    }
                }
                Ok(StateCode(n))
            }
        }
    }

    fn max_count(&self) -> Option<u64> {
        match self {
            ModelSpec::PureDeath { rates } => Some(rates.len() as u64),
            ModelSpec::WrightFisher { population, .. } => Some(*population),
            ModelSpec::TwoStateDeath { .. } => Some(2),
            _ => None,
        }
    }

    /// Scalar summary of a state: the count, or the number of infectives.
    pub fn statistic(&self, state: StateCode) -> f64 {
        match self.decode(state) {
            State::Count(n) => n as f64,
            State::Pair { infectives, .. } => infectives as f64,
        }
    }

    /// Outgoing jumps of a transient state of a continuous-time model.
    pub fn jumps(&self, state: StateCode) -> Result<Jumps> {
        if self.is_absorbed(state) {
            return Err(QsdError::ContractViolation(format!(
                "state {state} is absorbing"
            )));
        }
        let mut out = Jumps::new();
        match self {
            ModelSpec::PureDeath { rates } => {
                let i = state.0 as usize;
                let rate = rates.get(i - 1).ok_or_else(|| {
                    QsdError::ContractViolation(format!("state {i} outside 1..={}", rates.len()))
                })?;
                out.push((StateCode(state.0 - 1), *rate));
            }
            ModelSpec::LinearBirthDeath {
                birth_rate,
                death_rate,
            } => {
                let n = state.0;
                let up = n.checked_add(1).ok_or_else(|| {
                    QsdError::StateOverflow(format!("population {n} cannot grow"))
                })?;
                out.push((StateCode(up), birth_rate * n as f64));
                out.push((StateCode(n - 1), death_rate * n as f64));
            }
            ModelSpec::TransientImmunity {
                infection_rate,
                recovery_rate,
                immunity_loss_rate,
            } => {
                let (i, r) = state.pair_parts();
                if i > 0 {
                    out.push((StateCode::pair(i + 1, r)?, infection_rate * i as f64));
                    out.push((StateCode::pair(i - 1, r + 1)?, recovery_rate * i as f64));
                }
                if r > 0 {
                    out.push((StateCode::pair(i, r - 1)?, immunity_loss_rate * r as f64));
                }
            }
            ModelSpec::TwoStateDeath { delta } => match state.0 {
                1 => out.push((StateCode::ABSORBED, 1.0)),
                2 => out.push((StateCode(1), *delta)),
                n => {
                    return Err(QsdError::ContractViolation(format!(
                        "state {n} outside 1..=2"
                    )))
                }
            },
            ModelSpec::WrightFisher { .. } => {
                return Err(QsdError::ContractViolation(
                    "Wright-Fisher is a discrete-time model".into(),
                ))
            }
        }
        Ok(out)
    }

    /// Probability that a type-1 offspring is produced from a population
    /// holding `count` type-1 individuals.
    pub fn offspring_probability(&self, count: u64) -> Option<f64> {
        match self {
            ModelSpec::WrightFisher {
                population,
                selection,
            } => {
                let x = count as f64;
                let ones = x * (1.0 + selection[0]);
                let twos = (*population as f64 - x) * (1.0 + selection[1]);
                Some(ones / (ones + twos))
            }
            _ => None,
        }
    }

    /// Rate (continuous time) or one-step probability (discrete time) of
    /// moving from `state` directly into the absorbing state.
    pub fn absorption_rate(&self, state: StateCode) -> f64 {
        if self.is_absorbed(state) {
            return 0.0;
        }
        match self {
            ModelSpec::WrightFisher { population, .. } => {
                let p = self.offspring_probability(state.0).unwrap_or(0.0);
                let d = *population as i32;
                (1.0 - p).powi(d) + p.powi(d)
            }
            _ => self
                .jumps(state)
                .map(|jumps| {
                    jumps
                        .iter()
                        .filter(|(to, _)| self.is_absorbed(*to))
                        .map(|(_, rate)| rate)
                        .sum()
                })
                .unwrap_or(0.0),
        }
    }

    /// Total exit rate of a transient continuous-time state.
    pub fn exit_rate(&self, state: StateCode) -> Result<f64> {
        Ok(self.jumps(state)?.iter().map(|(_, r)| r).sum())
    }

    /// Draws the holding time in `state`. Continuous time only.
    pub fn sample_holding<R: Rng + ?Sized>(&self, state: StateCode, rng: &mut R) -> Result<f64> {
        let rate = self.exit_rate(state)?;
        let e: f64 = Exp1.sample(rng);
        Ok(e / rate)
    }

    /// Draws the state entered at the end of the holding period.
    pub fn sample_jump<R: Rng + ?Sized>(&self, state: StateCode, rng: &mut R) -> Result<StateCode> {
        if let ModelSpec::WrightFisher { population, .. } = self {
            if self.is_absorbed(state) {
                return Err(QsdError::ContractViolation(format!(
                    "state {state} is absorbing"
                )));
            }
            let p = self.offspring_probability(state.0).unwrap_or(0.0);
            let next = Binomial::new(*population, p)
                .map_err(|e| QsdError::InvalidModel(e.to_string()))?
                .sample(rng);
            return Ok(if next >= *population {
                StateCode::ABSORBED
            } else {
                StateCode(next)
            });
        }
        let jumps = self.jumps(state)?;
        let total: f64 = jumps.iter().map(|(_, r)| r).sum();
        let mut u = rng.random::<f64>() * total;
        for &(to, rate) in &jumps {
            if u < rate {
                return Ok(to);
            }
            u -= rate;
        }
        // u landed on the upper edge through rounding
        Ok(jumps.last().map(|j| j.0).unwrap_or(StateCode::ABSORBED))
    }

    /// One Gillespie step (continuous time) or one generation (discrete time).
    pub fn next_event<R: Rng + ?Sized>(&self, state: StateCode, rng: &mut R) -> Result<EventStep> {
        if self.is_absorbed(state) {
            return Err(QsdError::ContractViolation(format!(
                "next_event called on absorbing state {state}"
            )));
        }
        let holding_time = match self.time_kind() {
            TimeKind::Discrete => 1.0,
            TimeKind::Continuous => self.sample_holding(state, rng)?,
        };
        let next_state = self.sample_jump(state, rng)?;
        Ok(EventStep {
            holding_time,
            next_state,
        })
    }
}

/// `P[Binomial(n, p) = k]`, evaluated in log space.
pub fn binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln_choose = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k);
    (ln_choose + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

fn ln_factorial(n: u64) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

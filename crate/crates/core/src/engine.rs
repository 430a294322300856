//! The SMC sampler loop.
//!
//! Particles follow the unconditioned process (the bootstrap kernel), so a
//! surviving particle keeps its weight and an absorbed one drops to zero.
//! Resampling happens either on a fixed grid of times or at the stopping
//! times of the regional particle counts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::Distribution;
use crate::ensemble::{Ensemble, InitialDistribution, Partition};
use crate::error::{QsdError, Result};
use crate::models::{ModelSpec, StateCode};
use crate::resampling::ResamplerSpec;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Resample every `t_step` time units.
    Deterministic { t_step: f64 },
    /// Resample all regions when any region count drops to
    /// `trigger_fraction · N_l`, or `t_max` after the previous resampling.
    /// A trigger fraction of zero disables the count trigger; an absent
    /// `t_max` is unbounded.
    Dynamic {
        trigger_fraction: f64,
        #[serde(default)]
        t_max: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_end: f64,
    pub mode: ScheduleMode,
    /// Samples before this time are discarded.
    pub burn_in: f64,
    /// Minimum spacing between sampling times.
    pub sample_delay: f64,
}

fn is_integral(x: f64) -> bool {
    x.is_finite() && (x - x.round()).abs() < TIME_EPS
}

impl Schedule {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        let bad = |msg: String| Err(QsdError::InvalidSchedule(msg));
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return bad(format!("t_end must be finite and > 0, got {}", self.t_end));
        }
        if !(self.burn_in >= 0.0 && self.burn_in < self.t_end) {
            return bad(format!("burn-in {} must lie in [0, t_end)", self.burn_in));
        }
        if !(self.sample_delay > 0.0 && self.sample_delay.is_finite()) {
            return bad(format!("sample delay must be > 0, got {}", self.sample_delay));
        }
        let mut times = vec![self.t_end, self.burn_in, self.sample_delay];
        match self.mode {
            ScheduleMode::Deterministic { t_step } => {
                if !(t_step > 0.0 && t_step.is_finite()) {
                    return bad(format!("t_step must be > 0, got {t_step}"));
                }
                times.push(t_step);
            }
            ScheduleMode::Dynamic {
                trigger_fraction,
                t_max,
            } => {
                if !(0.0..1.0).contains(&trigger_fraction) {
                    return bad(format!("trigger fraction {trigger_fraction} outside [0, 1)"));
                }
                if let Some(t_max) = t_max {
                    if !(t_max > 0.0) {
                        return bad(format!("t_max must be > 0, got {t_max}"));
                    }
                    if t_max.is_finite() {
                        times.push(t_max);
                    }
                }
            }
        }
        if model.is_discrete() && !times.iter().all(|&t| is_integral(t)) {
            return bad("discrete-time models need integer schedule times".into());
        }
        Ok(())
    }

    /// Number of resampling events a deterministic schedule performs.
    pub fn deterministic_steps(&self) -> Option<usize> {
        match self.mode {
            ScheduleMode::Deterministic { t_step } => Some((self.t_end / t_step - TIME_EPS).ceil() as usize),
            ScheduleMode::Dynamic { .. } => None,
        }
    }
}

/// Normalized surviving particles at one sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub particles: Vec<(StateCode, f64)>,
}

impl Sample {
    fn from_ensemble(ensemble: &Ensemble) -> Option<Self> {
        let total = ensemble.total_weight();
        if !(total > 0.0) {
            return None;
        }
        Some(Sample {
            time: ensemble.clock,
            particles: ensemble
                .particles
                .iter()
                .filter(|p| p.is_alive() && p.weight > 0.0)
                .map(|p| (p.state, p.weight / total))
                .collect(),
        })
    }

    pub fn distribution(&self) -> Distribution {
        Distribution::from_weighted(self.particles.iter().copied())
    }
}

/// Region counts and weight proportions just before a resampling event.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTrace {
    pub time: f64,
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivorRecord {
    pub time: f64,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub time: f64,
    pub error: QsdError,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub samples: Vec<Sample>,
    pub resample_times: Vec<f64>,
    pub region_traces: Vec<RegionTrace>,
    pub survivor_trace: Vec<SurvivorRecord>,
    /// Set when the run aborted; everything before the failure is kept.
    pub failure: Option<RunFailure>,
}

impl RunLog {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn resample_count(&self) -> usize {
        self.resample_times.len()
    }
}

/// Pools all samples of a run, each sampling time weighted equally.
pub fn collect_samples(log: &RunLog) -> Result<Distribution> {
    if log.samples.is_empty() {
        return Err(QsdError::EmptyLog);
    }
    Ok(Distribution::pool(log.samples.iter().map(Sample::distribution)))
}

/// Propagates every surviving particle independently up to time `t`.
/// Newly absorbed particles drop to weight zero.
pub fn advance_to<R: Rng + ?Sized>(ensemble: &mut Ensemble, model: &ModelSpec, t: f64, rng: &mut R) -> Result<()> {
    if t < ensemble.clock - TIME_EPS {
        return Err(QsdError::ContractViolation(format!(
            "cannot advance from {} back to {t}",
            ensemble.clock
        )));
    }
    if model.is_discrete() {
        let generations = (t.round() - ensemble.clock.round()).max(0.0) as u64;
        for p in ensemble.particles.iter_mut().filter(|p| p.is_alive()) {
            for _ in 0..generations {
                p.state = model.sample_jump(p.state, rng)?;
                if model.is_absorbed(p.state) {
                    p.state = StateCode::ABSORBED;
                    p.weight = 0.0;
                    break;
                }
            }
            p.next_event_time = None;
        }
    } else {
        let clock = ensemble.clock;
        for p in ensemble.particles.iter_mut().filter(|p| p.is_alive()) {
            let mut event = match p.next_event_time {
                Some(time) => time,
                None => clock + model.sample_holding(p.state, rng)?,
            };
            while event <= t {
                p.state = model.sample_jump(p.state, rng)?;
                if model.is_absorbed(p.state) {
                    p.state = StateCode::ABSORBED;
                    p.weight = 0.0;
                    break;
                }
                event += model.sample_holding(p.state, rng)?;
            }
            p.next_event_time = p.is_alive().then_some(event);
        }
    }
    ensemble.clock = t;
    Ok(())
}

/// Splits the quota of regions that have never held a particle over the
/// occupied regions, proportionally to their targets (largest remainder).
fn effective_targets(targets: &[usize], dormant: &[bool]) -> Vec<usize> {
    let spare: usize = targets.iter().zip(dormant).filter(|(_, &d)| d).map(|(n, _)| n).sum();
    if spare == 0 {
        return targets.to_vec();
    }
    let live: usize = targets.iter().zip(dormant).filter(|(_, &d)| !d).map(|(n, _)| n).sum();
    let mut out: Vec<usize> = targets
        .iter()
        .zip(dormant)
        .map(|(&n, &d)| if d { 0 } else { n + spare * n / live })
        .collect();
    let mut short = targets.iter().sum::<usize>() - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..targets.len()).filter(|&l| !dormant[l]).collect();
    order.sort_by_key(|&l| std::cmp::Reverse((spare * targets[l]) % live));
    for l in order.into_iter().cycle() {
        if short == 0 {
            break;
        }
        out[l] += 1;
        short -= 1;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct EventKey {
    time: f64,
    index: usize,
}

impl PartialEq for EventKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for EventKey {}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EventKey {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// A configured SMC sampler.
#[derive(Debug, Clone)]
pub struct Sampler {
    model: ModelSpec,
    schedule: Schedule,
    resampler: ResamplerSpec,
    particles: usize,
    initial: InitialDistribution,
    trace_partition: Option<Partition>,
}

struct RunState<'a> {
    sampler: &'a Sampler,
    ensemble: Ensemble,
    log: RunLog,
    last_sample: Option<f64>,
    /// Regions of the regional resampler that have held a particle.
    seen: Vec<bool>,
}

impl Sampler {
    pub fn new(
        model: ModelSpec,
        schedule: Schedule,
        resampler: ResamplerSpec,
        particles: usize,
        initial: InitialDistribution,
    ) -> Result<Self> {
        model.validate()?;
        schedule.validate(&model)?;
        if particles == 0 {
            return Err(QsdError::ContractViolation("need at least one particle".into()));
        }
        resampler.validate(particles)?;
        initial.validate(&model)?;
        if let ScheduleMode::Dynamic { trigger_fraction, .. } = schedule.mode {
            let ResamplerSpec::Regional { targets, .. } = &resampler else {
                return Err(QsdError::InvalidSchedule(
                    "dynamic schedules need a regional resampler".into(),
                ));
            };
            if targets.iter().any(|&n| n < 2) {
                return Err(QsdError::InvalidSchedule(
                    "dynamic schedules need at least two particles per region".into(),
                ));
            }
            if trigger_fraction > 0.0 && targets.iter().any(|&n| trigger_fraction * (n as f64) < 1.0) {
                log::warn!(
                    "trigger fraction {trigger_fraction} times some region target is below one; \
                     such a region can empty before its trigger fires"
                );
            }
        }
        let trace_partition = resampler.partition().cloned();
        Ok(Sampler {
            model,
            schedule,
            resampler,
            particles,
            initial,
            trace_partition,
        })
    }

    /// Records region traces against `partition` (defaults to the regional
    /// resampler's own partition).
    pub fn with_trace_partition(mut self, partition: Partition) -> Self {
        self.trace_partition = Some(partition);
        self
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> RunLog {
        match self.schedule.mode {
            ScheduleMode::Deterministic { .. } => self.run_deterministic(rng),
            ScheduleMode::Dynamic { .. } => self.run_dynamic(rng),
        }
    }

    fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> RunState<'_> {
        let ensemble = Ensemble::from_initial(&self.initial, self.particles, rng);
        let regions = self.resampler.partition().map_or(0, Partition::len);
        let mut state = RunState {
            sampler: self,
            ensemble,
            log: RunLog::default(),
            last_sample: None,
            seen: vec![false; regions],
        };
        state.mark_seen();
        state
    }

    /// Alternates propagation over `t_step` with resampling; samples are
    /// taken right after resampling events.
    pub fn run_deterministic<R: Rng + ?Sized>(&self, rng: &mut R) -> RunLog {
        let ScheduleMode::Deterministic { t_step } = self.schedule.mode else {
            return self.run_dynamic(rng);
        };
        let mut run = self.start(rng);
        let steps = self.schedule.deterministic_steps().unwrap_or(0);
        for k in 1..=steps {
            let t = (k as f64 * t_step).min(self.schedule.t_end);
            if let Err(error) = advance_to(&mut run.ensemble, &self.model, t, rng) {
                return run.fail(t, error);
            }
            run.mark_seen();
            if let Err(error) = run.resample(rng) {
                return run.fail(t, error);
            }
            run.maybe_sample();
        }
        run.log
    }

    /// Event-driven run with stopping-time resampling of all regions.
    pub fn run_dynamic<R: Rng + ?Sized>(&self, rng: &mut R) -> RunLog {
        let ScheduleMode::Dynamic { trigger_fraction, t_max } = self.schedule.mode else {
            return self.run_deterministic(rng);
        };
        let mut run = self.start(rng);
        let t_end = self.schedule.t_end;
        let t_max = t_max.unwrap_or(f64::INFINITY);
        let mut last_trigger = 0.0;
        let mut sample_index = 0usize;
        let sample_time = |j: usize| self.schedule.burn_in + j as f64 * self.schedule.sample_delay;

        let mut queue = match run.schedule_events(rng) {
            Ok(q) => q,
            Err(error) => return run.fail(0.0, error),
        };
        loop {
            let forced = last_trigger + t_max;
            let next_sample = sample_time(sample_index);
            let horizon = forced.min(next_sample).min(t_end);
            let triggered = if self.model.is_discrete() {
                run.step_generations(horizon, trigger_fraction, rng)
            } else {
                run.process_events(&mut queue, horizon, trigger_fraction, rng)
            };
            match triggered {
                Err(error) => { let time = run.ensemble.clock; return run.fail(time, error); },
                Ok(Some(time)) => {
                    run.ensemble.clock = time;
                    if let Err(error) = run.resample(rng) {
                        return run.fail(time, error);
                    }
                    last_trigger = time;
                    queue = match run.schedule_events(rng) {
                        Ok(q) => q,
                        Err(error) => return run.fail(time, error),
                    };
                    continue;
                }
                Ok(None) => {}
            }
            run.ensemble.clock = horizon;
            if (horizon - forced).abs() <= TIME_EPS {
                if let Err(error) = run.resample(rng) {
                    return run.fail(horizon, error);
                }
                last_trigger = horizon;
                queue = match run.schedule_events(rng) {
                    Ok(q) => q,
                    Err(error) => return run.fail(horizon, error),
                };
            }
            if (horizon - next_sample).abs() <= TIME_EPS {
                run.record_sample();
                sample_index += 1;
            }
            if horizon >= t_end - TIME_EPS {
                break;
            }
        }
        run.log
    }
}

impl RunState<'_> {
    fn fail(mut self, time: f64, error: QsdError) -> RunLog {
        self.log.failure = Some(RunFailure { time, error });
        self.log
    }

    fn mark_seen(&mut self) {
        if let Some(partition) = self.sampler.resampler.partition() {
            for p in &self.ensemble.particles {
                if let Some(l) = partition.region_of(p.state) {
                    self.seen[l] = true;
                }
            }
        }
    }

    fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let time = self.ensemble.clock;
        if let Some(partition) = &self.sampler.trace_partition {
            let mut summary = self.ensemble.region_summary(partition);
            let total = self.ensemble.total_weight();
            if total > 0.0 {
                summary.weights.iter_mut().for_each(|w| *w /= total);
            }
            self.log.region_traces.push(RegionTrace {
                time,
                counts: summary.counts,
                weights: summary.weights,
            });
        }
        let before = self.ensemble.survivors();
        match &self.sampler.resampler {
            ResamplerSpec::Regional {
                partition,
                targets,
                inner,
            } if self.seen.iter().any(|s| !s) => {
                let dormant: Vec<bool> = self.seen.iter().map(|s| !s).collect();
                let spec = ResamplerSpec::Regional {
                    partition: partition.clone(),
                    targets: effective_targets(targets, &dormant),
                    inner: inner.clone(),
                };
                spec.apply(&mut self.ensemble, rng)?;
            }
            spec => spec.apply(&mut self.ensemble, rng)?,
        }
        self.log.resample_times.push(time);
        self.log.survivor_trace.push(SurvivorRecord {
            time,
            before,
            after: self.ensemble.survivors(),
        });
        Ok(())
    }

    fn maybe_sample(&mut self) {
        let schedule = &self.sampler.schedule;
        let t = self.ensemble.clock;
        let due = t >= schedule.burn_in - TIME_EPS
            && self
                .last_sample
                .is_none_or(|last| t - last >= schedule.sample_delay - TIME_EPS);
        if due {
            self.record_sample();
        }
    }

    fn record_sample(&mut self) {
        if let Some(sample) = Sample::from_ensemble(&self.ensemble) {
            self.last_sample = Some(sample.time);
            self.log.samples.push(sample);
        }
    }

    fn region_counts(&self) -> Vec<usize> {
        match self.sampler.resampler.partition() {
            Some(partition) => self.ensemble.region_summary(partition).counts,
            None => Vec::new(),
        }
    }

    fn targets(&self) -> &[usize] {
        match &self.sampler.resampler {
            ResamplerSpec::Regional { targets, .. } => targets,
            _ => &[],
        }
    }

    fn below_trigger(&self, region: usize, count: usize, fraction: f64) -> bool {
        fraction > 0.0 && self.seen[region] && (count as f64) <= fraction * self.targets()[region] as f64
    }

    /// Draws fresh holding times for every survivor from the current clock.
    fn schedule_events<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<BinaryHeap<EventKey>> {
        let model = &self.sampler.model;
        let clock = self.ensemble.clock;
        let mut queue = BinaryHeap::with_capacity(self.ensemble.len());
        if model.is_discrete() {
            return Ok(queue);
        }
        for (index, p) in self.ensemble.particles.iter_mut().enumerate() {
            if p.is_alive() {
                let time = clock + model.sample_holding(p.state, rng)?;
                p.next_event_time = Some(time);
                queue.push(EventKey { time, index });
            }
        }
        Ok(queue)
    }

    /// Fires queued events up to `horizon`. Returns the time of the first
    /// count trigger, if one occurs.
    fn process_events<R: Rng + ?Sized>(
        &mut self,
        queue: &mut BinaryHeap<EventKey>,
        horizon: f64,
        fraction: f64,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let model = &self.sampler.model;
        let Some(partition) = self.sampler.resampler.partition() else {
            return Ok(None);
        };
        let mut counts = self.region_counts();
        while let Some(&EventKey { time, index }) = queue.peek() {
            if time > horizon {
                break;
            }
            queue.pop();
            let particle = &mut self.ensemble.particles[index];
            let from = partition.region_of(particle.state);
            let mut to_state = model.sample_jump(particle.state, rng)?;
            if model.is_absorbed(to_state) {
                to_state = StateCode::ABSORBED;
                particle.weight = 0.0;
                particle.next_event_time = None;
            } else {
                let next = time + model.sample_holding(to_state, rng)?;
                particle.next_event_time = Some(next);
                queue.push(EventKey { time: next, index });
            }
            particle.state = to_state;
            let to = partition.region_of(to_state);
            self.ensemble.clock = time;
            if from == to {
                continue;
            }
            if let Some(l) = to {
                counts[l] += 1;
                if !self.seen[l] {
                    self.seen[l] = true;
                    if self.below_trigger(l, counts[l], fraction) {
                        return Ok(Some(time));
                    }
                }
            }
            if let Some(l) = from {
                counts[l] -= 1;
                if self.below_trigger(l, counts[l], fraction) {
                    return Ok(Some(time));
                }
            }
        }
        Ok(None)
    }

    /// Discrete-time counterpart of [`Self::process_events`]: all particles
    /// step together once per generation.
    fn step_generations<R: Rng + ?Sized>(&mut self, horizon: f64, fraction: f64, rng: &mut R) -> Result<Option<f64>> {
        while self.ensemble.clock + 1.0 <= horizon + TIME_EPS {
            let t = self.ensemble.clock.round() + 1.0;
            advance_to(&mut self.ensemble, &self.sampler.model, t, rng)?;
            self.mark_seen();
            let counts = self.region_counts();
            if (0..counts.len()).any(|l| self.below_trigger(l, counts[l], fraction)) {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{Particle, RegionRule};
    use crate::resampling::Reallocation;
    use rand::SeedableRng;
    use rand::rngs::StdRng;

    fn five_state() -> ModelSpec {
        ModelSpec::PureDeath {
            rates: vec![3.0, 2.0, 3.0, 1.0, 3.0],
        }
    }

    fn deterministic(t_end: f64, t_step: f64, burn_in: f64, sample_delay: f64) -> Schedule {
        Schedule {
            t_end,
            mode: ScheduleMode::Deterministic { t_step },
            burn_in,
            sample_delay,
        }
    }

    fn two_regions() -> Partition {
        Partition::new(vec![
            RegionRule::Range { lo: 1, hi: Some(2) },
            RegionRule::Range { lo: 3, hi: Some(5) },
        ])
    }

    #[test]
    fn advance_to_same_time_is_identity() {
        let model = five_state();
        let mut rng = StdRng::seed_from_u64(1);
        let mut ens = Ensemble::new(vec![Particle::new(StateCode(3), 0.5), Particle::new(StateCode(5), 0.5)]);
        let before = ens.clone();
        advance_to(&mut ens, &model, 0.0, &mut rng).unwrap();
        assert_eq!(ens.states(), before.states());
        assert_eq!(ens.weights(), before.weights());
    }

    #[test]
    fn advance_to_absorption_frequency() {
        // unit death rate from state 1: P[absorbed by t] = 1 - e^{-t}
        let model = ModelSpec::PureDeath { rates: vec![1.0] };
        let t = 0.7;
        let reps = 100_000;
        let mut rng = StdRng::seed_from_u64(2);
        let mut ens = Ensemble::new(vec![Particle::new(StateCode(1), 1.0); reps]);
        advance_to(&mut ens, &model, t, &mut rng).unwrap();
        let absorbed = (reps - ens.survivors()) as f64 / reps as f64;
        let p = 1.0 - (-t as f64).exp();
        let se = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((absorbed - p).abs() <= 4.0 * se, "{absorbed} vs {p}");
        assert!(ens.particles.iter().all(|q| q.is_alive() == (q.weight > 0.0)));
    }

    #[test]
    fn advance_backwards_is_rejected() {
        let mut ens = Ensemble::new(vec![Particle::new(StateCode(1), 1.0)]);
        ens.clock = 2.0;
        let mut rng = StdRng::seed_from_u64(3);
        assert!(advance_to(&mut ens, &five_state(), 1.0, &mut rng).is_err());
    }

    #[test]
    fn deterministic_event_count() {
        let sampler = Sampler::new(
            five_state(),
            deterministic(4.0, 1.0, 0.0, 1.0),
            ResamplerSpec::refill(ResamplerSpec::Multinomial),
            200,
            InitialDistribution::Point(StateCode(5)),
        )
        .unwrap();
        let log = sampler.run(&mut StdRng::seed_from_u64(4));
        assert!(log.succeeded());
        assert_eq!(log.resample_times, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn samples_respect_burn_in_and_delay() {
        let sampler = Sampler::new(
            five_state(),
            deterministic(40.0, 1.0, 20.0, 2.0),
            ResamplerSpec::regional(
                two_regions(),
                vec![50, 50],
                ResamplerSpec::combine_split(Reallocation::UniformOverLocations),
            ),
            100,
            InitialDistribution::Point(StateCode(5)),
        )
        .unwrap();
        let log = sampler.run(&mut StdRng::seed_from_u64(5));
        assert!(log.succeeded(), "{:?}", log.failure);
        let times: Vec<f64> = log.samples.iter().map(|s| s.time).collect();
        assert_eq!(times, (0..=10).map(|j| 20.0 + 2.0 * j as f64).collect::<Vec<_>>());
    }

    #[test]
    fn without_resampling_survivors_share_weight() {
        let sampler = Sampler::new(
            five_state(),
            deterministic(3.0, 0.5, 0.0, 0.5),
            ResamplerSpec::None,
            200,
            InitialDistribution::Point(StateCode(5)),
        )
        .unwrap();
        let log = sampler.run(&mut StdRng::seed_from_u64(6));
        for sample in &log.samples {
            let w0 = sample.particles[0].1;
            assert!(sample.particles.iter().all(|(_, w)| (w - w0).abs() < 1e-15));
        }
    }

    #[test]
    fn dynamic_without_count_trigger_uses_t_max_grid() {
        let model = ModelSpec::TransientImmunity {
            infection_rate: 0.5,
            recovery_rate: 1.0,
            immunity_loss_rate: 0.6,
        };
        let schedule = Schedule {
            t_end: 10.0,
            mode: ScheduleMode::Dynamic {
                trigger_fraction: 0.0,
                t_max: Some(1.0),
            },
            burn_in: 0.0,
            sample_delay: 1.0,
        };
        let partition = Partition::new(vec![RegionRule::NoInfectives, RegionRule::Infectives]);
        let sampler = Sampler::new(
            model,
            schedule,
            ResamplerSpec::regional(partition, vec![60, 40], ResamplerSpec::Multinomial),
            100,
            InitialDistribution::Point(StateCode::pair(1, 0).unwrap()),
        )
        .unwrap();
        let log = sampler.run(&mut StdRng::seed_from_u64(7));
        assert!(log.succeeded(), "{:?}", log.failure);
        let expect: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        assert_eq!(log.resample_times.len(), expect.len());
        for (got, want) in log.resample_times.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn dynamic_requires_regional_resampler() {
        let schedule = Schedule {
            t_end: 10.0,
            mode: ScheduleMode::Dynamic {
                trigger_fraction: 0.2,
                t_max: None,
            },
            burn_in: 0.0,
            sample_delay: 1.0,
        };
        assert!(Sampler::new(
            five_state(),
            schedule,
            ResamplerSpec::Multinomial,
            10,
            InitialDistribution::Point(StateCode(5))
        )
        .is_err());
    }

    #[test]
    fn schedule_validation() {
        let model = five_state();
        assert!(deterministic(10.0, 1.0, 10.0, 1.0).validate(&model).is_err());
        assert!(deterministic(10.0, 1.0, 0.0, 0.0).validate(&model).is_err());
        assert!(deterministic(10.0, 0.0, 0.0, 1.0).validate(&model).is_err());
        let wf = ModelSpec::WrightFisher {
            population: 10,
            selection: [0.0, 0.0],
        };
        assert!(deterministic(10.0, 2.5, 0.0, 1.0).validate(&wf).is_err());
        assert!(deterministic(10.0, 2.0, 0.0, 1.0).validate(&wf).is_ok());
    }

    #[test]
    fn dormant_quota_is_shared() {
        assert_eq!(effective_targets(&[50, 50], &[true, false]), vec![0, 100]);
        assert_eq!(effective_targets(&[30, 20, 50], &[false, false, false]), vec![30, 20, 50]);
        let t = effective_targets(&[3, 3, 4], &[false, true, false]);
        assert_eq!(t.iter().sum::<usize>(), 10);
        assert_eq!(t[1], 0);
    }

    #[test]
    fn collect_samples_empty_log() {
        assert_eq!(collect_samples(&RunLog::default()), Err(QsdError::EmptyLog));
    }
}

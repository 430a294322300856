//! Resampling schemes: multinomial, residual, particle refilling,
//! combine-split and regional resampling.
//!
//! The slice-level functions return fresh particle vectors and leave the
//! weights unnormalized; [`ResamplerSpec::apply`] wraps them for use on an
//! [`Ensemble`] and renormalizes afterwards.

use std::collections::HashMap;
use std::ops::{Add, Div};

use num_traits::{FromPrimitive, Zero};
use rand::Rng;
use rand::distr::Distribution;
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, Particle, Partition};
use crate::error::{QsdError, Result};
use crate::models::StateCode;

/// Distribution used by combine-split to place the particles freed by the
/// combine step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reallocation {
    /// Uniform over the occupied locations.
    #[default]
    UniformOverLocations,
    /// Proportional to the combined weight of each location.
    ProportionalToWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplerSpec {
    /// No resampling: the rejection-sampling baseline.
    None,
    Multinomial,
    Residual,
    /// Replace absorbed particles only, drawing donors with `inner`.
    Refill { inner: Box<ResamplerSpec> },
    CombineSplit {
        #[serde(default)]
        realloc: Reallocation,
    },
    /// Restore `targets[l]` particles in every region, preserving region weights.
    /// Regions whose target cannot be met by `inner` fall back to multinomial.
    Regional {
        partition: Partition,
        targets: Vec<usize>,
        inner: Box<ResamplerSpec>,
    },
}

impl ResamplerSpec {
    pub fn refill(inner: ResamplerSpec) -> Self {
        ResamplerSpec::Refill {
            inner: Box::new(inner),
        }
    }

    pub fn combine_split(realloc: Reallocation) -> Self {
        ResamplerSpec::CombineSplit { realloc }
    }

    pub fn regional(partition: Partition, targets: Vec<usize>, inner: ResamplerSpec) -> Self {
        ResamplerSpec::Regional {
            partition,
            targets,
            inner: Box::new(inner),
        }
    }

    pub fn partition(&self) -> Option<&Partition> {
        match self {
            ResamplerSpec::Regional { partition, .. } => Some(partition),
            _ => None,
        }
    }

    /// Checks this resampler against an ensemble of `m` particles.
    pub fn validate(&self, m: usize) -> Result<()> {
        match self {
            ResamplerSpec::Refill { inner } => match inner.as_ref() {
                ResamplerSpec::Multinomial | ResamplerSpec::Residual => Ok(()),
                other => Err(QsdError::InvalidResampler(format!(
                    "refill donors must be drawn by multinomial or residual, not {other:?}"
                ))),
            },
            ResamplerSpec::Regional {
                partition,
                targets,
                inner,
            } => {
                if partition.is_empty() {
                    return Err(QsdError::InvalidResampler("partition has no regions".into()));
                }
                if targets.len() != partition.len() {
                    return Err(QsdError::InvalidResampler(format!(
                        "{} targets for {} regions",
                        targets.len(),
                        partition.len()
                    )));
                }
                if targets.contains(&0) {
                    return Err(QsdError::InvalidResampler("region targets must be >= 1".into()));
                }
                let sum: usize = targets.iter().sum();
                if sum != m {
                    return Err(QsdError::InvalidResampler(format!(
                        "region targets sum to {sum}, expected {m} particles"
                    )));
                }
                match inner.as_ref() {
                    ResamplerSpec::None | ResamplerSpec::Regional { .. } => Err(
                        QsdError::InvalidResampler(format!("{inner:?} cannot run inside a region")),
                    ),
                    other => other.validate(m),
                }
            }
            _ => Ok(()),
        }
    }

    /// Resamples the ensemble in place and renormalizes. Pending event times
    /// are cleared since particles may have been copied.
    pub fn apply<R: Rng + ?Sized>(&self, ensemble: &mut Ensemble, rng: &mut R) -> Result<()> {
        let m = ensemble.len();
        let particles = &ensemble.particles;
        let mut out = match self {
            ResamplerSpec::None => {
                ensemble.normalize()?;
                return Ok(());
            }
            ResamplerSpec::Multinomial => multinomial(particles, m, rng)?,
            ResamplerSpec::Residual => residual(particles, m, rng)?,
            ResamplerSpec::Refill { inner } => refill(particles, inner, rng)?,
            ResamplerSpec::CombineSplit { realloc } => combine_split(particles, *realloc, rng)?,
            ResamplerSpec::Regional {
                partition,
                targets,
                inner,
            } => regional(particles, partition, targets, inner, rng)?,
        };
        for p in &mut out {
            p.next_event_time = None;
        }
        ensemble.particles = out;
        ensemble.normalize()
    }
}

fn positive_total(particles: &[Particle]) -> Result<f64> {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(QsdError::AllAbsorbed)
    }
}

fn copies_to_particles(particles: &[Particle], copies: &[usize], weight: f64) -> Vec<Particle> {
    copies
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(Particle::new(particles[i].state, weight), n))
        .collect()
}

fn multinomial_counts<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Result<Vec<usize>> {
    let index = WeightedIndex::new(weights).map_err(|_| QsdError::AllAbsorbed)?;
    let mut copies = vec![0; weights.len()];
    for _ in 0..count {
        copies[index.sample(rng)] += 1;
    }
    Ok(copies)
}

/// `count` draws with replacement, probability proportional to weight. Each
/// output particle carries `total / count`.
pub fn multinomial<R: Rng + ?Sized>(particles: &[Particle], count: usize, rng: &mut R) -> Result<Vec<Particle>> {
    let total = positive_total(particles)?;
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let copies = multinomial_counts(&weights, count, rng)?;
    Ok(copies_to_particles(particles, &copies, total / count as f64))
}

/// Residual resampling: `floor(count·W_i)` deterministic copies, the
/// remainder drawn multinomially on the residual weights.
pub fn residual<R: Rng + ?Sized>(particles: &[Particle], count: usize, rng: &mut R) -> Result<Vec<Particle>> {
    let total = positive_total(particles)?;
    let expected: Vec<f64> = particles
        .iter()
        .map(|p| count as f64 * p.weight / total)
        .collect();
    let mut copies: Vec<usize> = expected.iter().map(|e| e.floor() as usize).collect();
    let placed: usize = copies.iter().sum();
    let remainder = count.saturating_sub(placed);
    if remainder > 0 {
        let residuals: Vec<f64> = expected
            .iter()
            .zip(&copies)
            .map(|(e, &c)| (e - c as f64).max(0.0))
            .collect();
        let extra = if residuals.iter().any(|&r| r > 0.0) {
            multinomial_counts(&residuals, remainder, rng)?
        } else {
            multinomial_counts(&expected, remainder, rng)?
        };
        for (c, e) in copies.iter_mut().zip(extra) {
            *c += e;
        }
    }
    Ok(copies_to_particles(particles, &copies, total / count as f64))
}

/// Draws `count` donor states from `survivors` with the refill inner method.
fn draw_donors<R: Rng + ?Sized>(
    survivors: &[Particle],
    count: usize,
    inner: &ResamplerSpec,
    rng: &mut R,
) -> Result<Vec<StateCode>> {
    let drawn = match inner {
        ResamplerSpec::Residual => residual(survivors, count, rng)?,
        _ => multinomial(survivors, count, rng)?,
    };
    Ok(drawn.into_iter().map(|p| p.state).collect())
}

/// Particle refilling: every absorbed particle is replaced by a donor drawn
/// from the survivors with `inner`; survivors are untouched.
///
/// Refilled particles carry the mean survivor weight, so the total weight
/// after refilling is deterministic. When survivors are equally weighted this
/// is exactly the donor's own weight.
pub fn refill<R: Rng + ?Sized>(particles: &[Particle], inner: &ResamplerSpec, rng: &mut R) -> Result<Vec<Particle>> {
    let survivors: Vec<Particle> = particles.iter().filter(|p| p.is_alive()).copied().collect();
    if survivors.is_empty() {
        return Err(QsdError::AllAbsorbed);
    }
    let absorbed = particles.len() - survivors.len();
    if absorbed == 0 {
        return Ok(particles.to_vec());
    }
    let mean_weight = positive_total(&survivors)? / survivors.len() as f64;
    let mut donors = draw_donors(&survivors, absorbed, inner, rng)?.into_iter();
    Ok(particles
        .iter()
        .map(|p| {
            if p.is_alive() {
                *p
            } else {
                Particle::new(donors.next().expect("one donor per absorbed particle"), mean_weight)
            }
        })
        .collect())
}

/// Weight arithmetic needed by combine-split; implemented by `f64` and by
/// exact rationals.
pub trait SplitWeight: Clone + PartialOrd + Zero + Add<Output = Self> + Div<Output = Self> + FromPrimitive {}

impl<T> SplitWeight for T where T: Clone + PartialOrd + Zero + Add<Output = T> + Div<Output = T> + FromPrimitive {}

/// Combine-split over explicit states and weights.
///
/// Weights are pooled per occupied location (first-appearance order); the
/// lowest-index particle at each location anchors it. The output has `slots`
/// entries: particles keep their index order, every non-anchor slot takes the
/// location chosen by `draw` (an index into the occupied locations, called
/// in slot order), and each location's pooled weight is split equally over
/// the slots that end up there. When `slots` is smaller than the input,
/// trailing non-anchor slots are dropped; `slots` must cover every anchor.
pub fn combine_split_with<W, F>(
    states: &[StateCode],
    weights: &[W],
    slots: usize,
    mut draw: F,
) -> Result<Vec<(StateCode, W)>>
where
    W: SplitWeight,
    F: FnMut(&[(StateCode, W)]) -> usize,
{
    assert_eq!(states.len(), weights.len());
    let zero = W::zero();
    let mut locations: Vec<(StateCode, W)> = Vec::new();
    let mut slot_of: HashMap<StateCode, usize> = HashMap::new();
    let mut anchor = vec![false; states.len()];
    for (i, (&s, w)) in states.iter().zip(weights).enumerate() {
        if s.is_zero() || !(*w > zero) {
            continue;
        }
        match slot_of.get(&s) {
            Some(&k) => {
                let pooled = locations[k].1.clone() + w.clone();
                locations[k].1 = pooled;
            }
            None => {
                slot_of.insert(s, locations.len());
                locations.push((s, w.clone()));
                anchor[i] = true;
            }
        }
    }
    if locations.is_empty() {
        return Err(QsdError::AllAbsorbed);
    }
    if slots < locations.len() {
        return Err(QsdError::ContractViolation(format!(
            "{slots} slots cannot anchor {} occupied locations",
            locations.len()
        )));
    }

    let mut free = slots - locations.len();
    let mut placed: Vec<usize> = Vec::with_capacity(slots);
    for (i, &s) in states.iter().enumerate() {
        if anchor[i] {
            placed.push(slot_of[&s]);
        } else if free > 0 {
            free -= 1;
            placed.push(draw_location(&mut draw, &locations));
        }
    }
    for _ in 0..free {
        placed.push(draw_location(&mut draw, &locations));
    }

    let mut occupancy = vec![0usize; locations.len()];
    for &k in &placed {
        occupancy[k] += 1;
    }
    let shares: Vec<W> = locations
        .iter()
        .zip(&occupancy)
        .map(|((_, a), &n)| a.clone() / W::from_usize(n).expect("count fits the weight type"))
        .collect();
    Ok(placed
        .into_iter()
        .map(|k| (locations[k].0, shares[k].clone()))
        .collect())
}

fn draw_location<W, F>(draw: &mut F, locations: &[(StateCode, W)]) -> usize
where
    F: FnMut(&[(StateCode, W)]) -> usize,
{
    let k = draw(locations);
    assert!(k < locations.len(), "reallocation drew location {k} of {}", locations.len());
    k
}

fn reallocator<R: Rng + ?Sized>(
    realloc: Reallocation,
    rng: &mut R,
) -> impl FnMut(&[(StateCode, f64)]) -> usize + '_ {
    let mut proportional: Option<WeightedIndex<f64>> = None;
    move |locations: &[(StateCode, f64)]| match realloc {
        Reallocation::UniformOverLocations => rng.random_range(0..locations.len()),
        Reallocation::ProportionalToWeight => proportional
            .get_or_insert_with(|| {
                WeightedIndex::new(locations.iter().map(|l| l.1)).expect("occupied locations carry weight")
            })
            .sample(rng),
    }
}

fn combine_split_slots<R: Rng + ?Sized>(
    particles: &[Particle],
    slots: usize,
    realloc: Reallocation,
    rng: &mut R,
) -> Result<Vec<Particle>> {
    let states: Vec<StateCode> = particles.iter().map(|p| p.state).collect();
    let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
    let out = combine_split_with(&states, &weights, slots, reallocator(realloc, rng))?;
    Ok(out.into_iter().map(|(s, w)| Particle::new(s, w)).collect())
}

/// Combine-split resampling of the whole ensemble. Weight at every occupied
/// location is conserved.
pub fn combine_split<R: Rng + ?Sized>(particles: &[Particle], realloc: Reallocation, rng: &mut R) -> Result<Vec<Particle>> {
    combine_split_slots(particles, particles.len(), realloc, rng)
}

fn occupied_locations(particles: &[Particle]) -> usize {
    let mut seen: Vec<StateCode> = particles
        .iter()
        .filter(|p| p.is_alive() && p.weight > 0.0)
        .map(|p| p.state)
        .collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Resamples one region's particles up (or down) to `target`.
fn resample_region<R: Rng + ?Sized>(
    group: &[Particle],
    target: usize,
    inner: &ResamplerSpec,
    rng: &mut R,
) -> Result<Vec<Particle>> {
    match inner {
        ResamplerSpec::Residual => residual(group, target, rng),
        ResamplerSpec::Refill { inner } if target >= group.len() => {
            let mean_weight = positive_total(group)? / group.len() as f64;
            let donors = draw_donors(group, target - group.len(), inner, rng)?;
            let mut out = group.to_vec();
            out.extend(donors.into_iter().map(|s| Particle::new(s, mean_weight)));
            Ok(out)
        }
        ResamplerSpec::CombineSplit { realloc } if target >= occupied_locations(group) => {
            combine_split_slots(group, target, *realloc, rng)
        }
        _ => multinomial(group, target, rng),
    }
}

/// Regional resampling: every region ends with exactly `targets[l]`
/// particles and its total weight `W(l)` unchanged. Absorbed particles
/// belong to no region and are reassigned to whichever regions need them.
pub fn regional<R: Rng + ?Sized>(
    particles: &[Particle],
    partition: &Partition,
    targets: &[usize],
    inner: &ResamplerSpec,
    rng: &mut R,
) -> Result<Vec<Particle>> {
    if targets.len() != partition.len() {
        return Err(QsdError::InvalidResampler(format!(
            "{} targets for {} regions",
            targets.len(),
            partition.len()
        )));
    }
    let mut groups: Vec<Vec<Particle>> = vec![Vec::new(); partition.len()];
    for p in particles.iter().filter(|p| p.is_alive()) {
        let l = partition
            .region_of(p.state)
            .ok_or(QsdError::Unpartitioned(p.state))?;
        groups[l].push(*p);
    }
    if groups.iter().all(|g| g.is_empty()) {
        return Err(QsdError::AllAbsorbed);
    }
    let mut out = Vec::with_capacity(targets.iter().sum());
    for (region, (group, &target)) in groups.iter().zip(targets).enumerate() {
        if target == 0 {
            continue;
        }
        if group.is_empty() {
            return Err(QsdError::RegionExtinct { region });
        }
        let region_weight: f64 = group.iter().map(|p| p.weight).sum();
        let mut drawn = resample_region(group, target, inner, rng)?;
        let drawn_weight: f64 = drawn.iter().map(|p| p.weight).sum();
        let scale = region_weight / drawn_weight;
        for p in &mut drawn {
            p.weight *= scale;
            p.next_event_time = None;
        }
        out.extend(drawn);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::RegionRule;
    use num_rational::Ratio;
    use rand::SeedableRng;
    use rand::rngs::StdRng;

    fn s(n: u64) -> StateCode {
        StateCode(n)
    }

    fn parts(states: &[u64], weights: &[f64]) -> Vec<Particle> {
        states
            .iter()
            .zip(weights)
            .map(|(&st, &w)| Particle::new(s(st), w))
            .collect()
    }

    fn count_at(particles: &[Particle], state: u64) -> usize {
        particles.iter().filter(|p| p.state == s(state)).count()
    }

    #[test]
    fn multinomial_single_donor() {
        let mut rng = StdRng::seed_from_u64(1);
        let out = multinomial(&parts(&[7, 0], &[2.0, 0.0]), 5, &mut rng).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|p| p.state == s(7) && (p.weight - 0.4).abs() < 1e-15));
    }

    #[test]
    fn multinomial_binomial_concentration() {
        let mut rng = StdRng::seed_from_u64(2);
        let out = multinomial(&parts(&[1, 2], &[0.5, 0.5]), 10_000, &mut rng).unwrap();
        let first = count_at(&out, 1) as f64;
        assert!((first - 5000.0).abs() <= 200.0, "{first}");
    }

    #[test]
    fn multinomial_never_picks_zero_weight() {
        let mut rng = StdRng::seed_from_u64(3);
        let input = parts(&[1, 2, 3], &[0.3, 0.0, 0.7]);
        for _ in 0..100_000 / 10 {
            let out = multinomial(&input, 10, &mut rng).unwrap();
            assert_eq!(count_at(&out, 2), 0);
        }
    }

    #[test]
    fn multinomial_all_absorbed() {
        let mut rng = StdRng::seed_from_u64(4);
        assert_eq!(
            multinomial(&parts(&[0, 0], &[0.0, 0.0]), 2, &mut rng),
            Err(QsdError::AllAbsorbed)
        );
    }

    #[test]
    fn residual_deterministic_cases() {
        let mut rng = StdRng::seed_from_u64(5);
        let out = residual(&parts(&[1, 2], &[0.5, 0.5]), 2, &mut rng).unwrap();
        assert_eq!((count_at(&out, 1), count_at(&out, 2)), (1, 1));
        let out = residual(&parts(&[1, 2], &[0.75, 0.25]), 4, &mut rng).unwrap();
        assert_eq!((count_at(&out, 1), count_at(&out, 2)), (3, 1));
    }

    #[test]
    fn residual_matches_enumerated_outcomes() {
        // W = (0.6, 0.4), M' = 2: one deterministic copy of the first, then a
        // single residual draw on (0.2, 0.8). Enumerating the residual draw:
        // P[(2,0)] = 0.2, P[(1,1)] = 0.8, P[anything else] = 0.
        let enumerated = [(2usize, 0usize, 0.2), (1, 1, 0.8)];
        let input = parts(&[1, 2], &[0.6, 0.4]);
        let mut rng = StdRng::seed_from_u64(6);
        let reps = 100_000;
        let mut tally: HashMap<(usize, usize), usize> = HashMap::new();
        for _ in 0..reps {
            let out = residual(&input, 2, &mut rng).unwrap();
            *tally.entry((count_at(&out, 1), count_at(&out, 2))).or_default() += 1;
        }
        let seen: usize = enumerated.iter().map(|(a, b, _)| tally.get(&(*a, *b)).copied().unwrap_or(0)).sum();
        assert_eq!(seen, reps, "impossible outcome observed: {tally:?}");
        for (a, b, p) in enumerated {
            let freq = tally.get(&(a, b)).copied().unwrap_or(0) as f64 / reps as f64;
            let se = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((freq - p).abs() <= 4.0 * se, "({a},{b}): {freq} vs {p}");
        }
    }

    #[test]
    fn refill_without_absorbed_is_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        let input = parts(&[1, 2, 3], &[0.2, 0.3, 0.5]);
        assert_eq!(refill(&input, &ResamplerSpec::Multinomial, &mut rng).unwrap(), input);
    }

    #[test]
    fn refill_single_donor() {
        let mut rng = StdRng::seed_from_u64(8);
        let mut ens = Ensemble::new(parts(&[4, 0], &[1.0, 0.0]));
        ResamplerSpec::refill(ResamplerSpec::Multinomial)
            .apply(&mut ens, &mut rng)
            .unwrap();
        assert_eq!(ens.states(), vec![s(4), s(4)]);
        assert_eq!(ens.weights(), vec![0.5, 0.5]);
    }

    #[test]
    fn refill_donor_frequencies() {
        let mut rng = StdRng::seed_from_u64(9);
        let input = parts(&[1, 2, 0], &[1.0 / 3.0, 2.0 / 3.0, 0.0]);
        let reps = 100_000;
        let mut picked_first = 0;
        for _ in 0..reps {
            let out = refill(&input, &ResamplerSpec::Multinomial, &mut rng).unwrap();
            assert_eq!(&out[..2], &input[..2]);
            if out[2].state == s(1) {
                picked_first += 1;
            }
        }
        let p = 1.0 / 3.0;
        let freq = picked_first as f64 / reps as f64;
        assert!((freq - p).abs() <= 4.0 * (p * (1.0 - p) / reps as f64).sqrt());
    }

    #[test]
    fn refill_all_absorbed() {
        let mut rng = StdRng::seed_from_u64(10);
        assert_eq!(
            refill(&parts(&[0], &[0.0]), &ResamplerSpec::Multinomial, &mut rng),
            Err(QsdError::AllAbsorbed)
        );
    }

    #[test]
    fn combine_split_worked_example_exact() {
        let (a, b, c) = (s(10), s(20), s(30));
        let states = [a, a, a, b, b, c, s(0), s(0)];
        let weights: Vec<Ratio<i64>> = [1, 1, 2, 1, 4, 2, 0, 0].iter().map(|&w| Ratio::from_integer(w)).collect();
        let mut draws = [0usize, 1, 1, 2, 2].into_iter();
        let out = combine_split_with(&states, &weights, states.len(), |_| draws.next().unwrap()).unwrap();
        let expect_states = [a, a, b, b, b, c, c, c];
        let expect_weights = [
            Ratio::from_integer(2),
            Ratio::from_integer(2),
            Ratio::new(5, 3),
            Ratio::new(5, 3),
            Ratio::new(5, 3),
            Ratio::new(2, 3),
            Ratio::new(2, 3),
            Ratio::new(2, 3),
        ];
        assert_eq!(out.iter().map(|x| x.0).collect::<Vec<_>>(), expect_states);
        assert_eq!(out.iter().map(|x| x.1).collect::<Vec<_>>(), expect_weights);
    }

    #[test]
    fn combine_split_identity_cases() {
        let mut rng = StdRng::seed_from_u64(11);
        let distinct = parts(&[1, 2, 3], &[0.2, 0.3, 0.5]);
        assert_eq!(combine_split(&distinct, Reallocation::UniformOverLocations, &mut rng).unwrap(), distinct);
        let same = parts(&[4, 4, 4, 4], &[0.25; 4]);
        assert_eq!(combine_split(&same, Reallocation::ProportionalToWeight, &mut rng).unwrap(), same);
    }

    #[test]
    fn combine_split_conserves_location_weight() {
        let mut rng = StdRng::seed_from_u64(12);
        let input = parts(&[3, 1, 3, 0, 2, 3, 0, 1], &[0.1, 0.2, 0.05, 0.0, 0.3, 0.15, 0.0, 0.2]);
        for realloc in [Reallocation::UniformOverLocations, Reallocation::ProportionalToWeight] {
            for _ in 0..200 {
                let out = combine_split(&input, realloc, &mut rng).unwrap();
                assert_eq!(out.len(), input.len());
                for loc in 1..=3 {
                    let before: f64 = input.iter().filter(|p| p.state == s(loc)).map(|p| p.weight).sum();
                    let after: f64 = out.iter().filter(|p| p.state == s(loc)).map(|p| p.weight).sum();
                    assert!((before - after).abs() <= 1e-12 * before);
                }
            }
        }
    }

    fn two_regions() -> Partition {
        Partition::new(vec![
            RegionRule::States(vec![s(1), s(2)]),
            RegionRule::Range { lo: 3, hi: Some(5) },
        ])
    }

    #[test]
    fn regional_identity_when_on_target() {
        let mut rng = StdRng::seed_from_u64(13);
        let input = parts(&[1, 2, 4, 5], &[0.1, 0.2, 0.3, 0.4]);
        let out = regional(
            &input,
            &two_regions(),
            &[2, 2],
            &ResamplerSpec::refill(ResamplerSpec::Multinomial),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.len(), 4);
        for (o, i) in out.iter().zip(&input) {
            assert_eq!(o.state, i.state);
            assert!((o.weight - i.weight).abs() < 1e-15);
        }
    }

    #[test]
    fn regional_restores_targets() {
        let mut rng = StdRng::seed_from_u64(14);
        let mut states = vec![1u64; 40];
        states.extend([2; 30]);
        states.extend([4; 7]);
        states.extend([0; 23]);
        let weights: Vec<f64> = states.iter().map(|&x| if x == 0 { 0.0 } else { 1.0 / 77.0 }).collect();
        let input = parts(&states, &weights);
        let before = Ensemble::new(input.clone()).region_summary(&two_regions());
        for inner in [
            ResamplerSpec::Multinomial,
            ResamplerSpec::combine_split(Reallocation::UniformOverLocations),
            ResamplerSpec::refill(ResamplerSpec::Multinomial),
        ] {
            let out = regional(&input, &two_regions(), &[50, 50], &inner, &mut rng).unwrap();
            let after = Ensemble::new(out).region_summary(&two_regions());
            assert_eq!(after.counts, vec![50, 50]);
            for l in 0..2 {
                assert!((after.weights[l] - before.weights[l]).abs() <= 1e-12 * before.weights[l]);
            }
        }
    }

    #[test]
    fn regional_weight_split_rule() {
        let mut rng = StdRng::seed_from_u64(15);
        let input = parts(&[1, 4], &[0.9, 0.1]);
        let out = regional(&input, &two_regions(), &[1, 9], &ResamplerSpec::Multinomial, &mut rng).unwrap();
        assert_eq!(out.len(), 10);
        assert!((out[0].weight - 0.9).abs() < 1e-15);
        for p in &out[1..] {
            assert_eq!(p.state, s(4));
            assert!((p.weight - 0.1 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn regional_extinct_region() {
        let mut rng = StdRng::seed_from_u64(16);
        let input = parts(&[1, 2, 0, 0], &[0.5, 0.5, 0.0, 0.0]);
        assert_eq!(
            regional(&input, &two_regions(), &[2, 2], &ResamplerSpec::Multinomial, &mut rng),
            Err(QsdError::RegionExtinct { region: 1 })
        );
    }

    #[test]
    fn regional_combine_split_falls_back_when_too_many_locations() {
        let mut rng = StdRng::seed_from_u64(17);
        // three occupied locations in region 0 but a target of 2
        let input = parts(&[1, 2, 2, 5], &[0.2, 0.2, 0.2, 0.4]);
        let partition = Partition::new(vec![
            RegionRule::Range { lo: 1, hi: Some(3) },
            RegionRule::Range { lo: 4, hi: Some(5) },
        ]);
        let input2 = parts(&[1, 2, 3, 5], &[0.2, 0.2, 0.2, 0.4]);
        for inp in [&input, &input2] {
            let out = regional(
                inp,
                &partition,
                &[2, 2],
                &ResamplerSpec::combine_split(Reallocation::UniformOverLocations),
                &mut rng,
            )
            .unwrap();
            let summary = Ensemble::new(out).region_summary(&partition);
            assert_eq!(summary.counts, vec![2, 2]);
            assert!((summary.weights[0] - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation() {
        let bad_inner = ResamplerSpec::refill(ResamplerSpec::combine_split(Reallocation::UniformOverLocations));
        assert!(bad_inner.validate(10).is_err());
        let bad_sum = ResamplerSpec::regional(two_regions(), vec![3, 3], ResamplerSpec::Multinomial);
        assert!(bad_sum.validate(10).is_err());
        let ok = ResamplerSpec::regional(two_regions(), vec![5, 5], ResamplerSpec::Multinomial);
        assert!(ok.validate(10).is_ok());
    }
}

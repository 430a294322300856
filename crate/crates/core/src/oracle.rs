//! Reference computations used to validate the sampler: exact eigen
//! recursions, uniformization of the sub-generator, power iteration, and
//! the drift inequality of the two-region weight chain.

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{tv_distance, Distribution};
use crate::ensemble::InitialDistribution;
use crate::error::{QsdError, Result};
use crate::models::{binomial_pmf, ModelSpec, StateCode};

/// Chains with at most this many transient states use dense matrix
/// squaring; larger ones are stepped with sparse vector products.
const DENSE_LIMIT: usize = 256;
/// Poisson terms below this are dropped from the uniformization series.
const SERIES_TAIL: f64 = 1e-20;
const MAX_SPARSE_STEPS: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Uniformization,
    EigenRecursion,
    PowerIteration,
}

impl OracleMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleMethod::Uniformization => "uniformization",
            OracleMethod::EigenRecursion => "eigen_recursion",
            OracleMethod::PowerIteration => "power_iteration",
        }
    }
}

/// A reference limiting conditional distribution and its decay parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Transient states in increasing code order.
    pub states: Vec<StateCode>,
    /// Probability of each entry of `states`.
    pub u: Vec<f64>,
    pub alpha: f64,
    pub method: OracleMethod,
}

impl OracleResult {
    pub fn distribution(&self) -> Distribution {
        Distribution::from_weighted(self.states.iter().copied().zip(self.u.iter().copied()))
    }

    pub fn probability(&self, state: StateCode) -> f64 {
        self.states
            .iter()
            .position(|s| *s == state)
            .map(|k| self.u[k])
            .unwrap_or(0.0)
    }
}

/// Transient part of a chain: off-diagonal rates (continuous time) or
/// one-step probabilities (discrete time) between enumerated states.
struct Chain {
    states: Vec<StateCode>,
    rows: Vec<Vec<(usize, f64)>>,
    /// Total exit rate of each state; unused in discrete time.
    exit: Vec<f64>,
    discrete: bool,
}

fn within_truncation(model: &ModelSpec, state: StateCode, cap: u64) -> bool {
    match model {
        ModelSpec::LinearBirthDeath { .. } => state.0 <= cap,
        ModelSpec::TransientImmunity { .. } => {
            let (i, r) = state.pair_parts();
            i + r <= cap
        }
        _ => true,
    }
}

fn neighbours(model: &ModelSpec, state: StateCode) -> Result<Vec<(StateCode, f64)>> {
    match model {
        ModelSpec::WrightFisher { population, .. } => {
            let p = model.offspring_probability(state.0).unwrap_or(0.0);
            Ok((1..*population)
                .map(|y| (StateCode(y), binomial_pmf(*population, y, p)))
                .filter(|(_, w)| *w > 0.0)
                .collect())
        }
        _ => Ok(model.jumps(state)?.into_iter().collect()),
    }
}

fn enumerate(model: &ModelSpec, seeds: &[StateCode], cap: u64, limit: usize) -> Result<Vec<StateCode>> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        if seen.insert(s) {
            queue.push_back(s);
        }
    }
    while let Some(s) = queue.pop_front() {
        if seen.len() > limit {
            return Err(QsdError::EnumerationOverflow { limit });
        }
        for (to, w) in neighbours(model, s)? {
            if w > 0.0 && !model.is_absorbed(to) && within_truncation(model, to, cap) && seen.insert(to) {
                queue.push_back(to);
            }
        }
    }
    if seen.len() > limit {
        return Err(QsdError::EnumerationOverflow { limit });
    }
    Ok(seen.into_iter().collect())
}

fn build_chain(model: &ModelSpec, states: Vec<StateCode>) -> Result<Chain> {
    let index: HashMap<StateCode, usize> = states.iter().enumerate().map(|(k, s)| (*s, k)).collect();
    let discrete = model.is_discrete();
    let mut rows = Vec::with_capacity(states.len());
    let mut exit = Vec::with_capacity(states.len());
    for &s in &states {
        let mut row = Vec::new();
        let mut total = 0.0;
        for (to, w) in neighbours(model, s)? {
            total += w;
            if let Some(&j) = index.get(&to) {
                row.push((j, w));
            }
        }
        rows.push(row);
        exit.push(total);
    }
    Ok(Chain {
        states,
        rows,
        exit,
        discrete,
    })
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(QsdError::ContractViolation(
            "conditioned distribution lost all mass".into(),
        ));
    }
    v.iter_mut().for_each(|x| *x /= total);
    Ok(())
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Settings for [`lcd_uniformization`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformizationOptions {
    /// Stop once the conditioned marginals at `t` and `2t` are this close in TV.
    pub tol: f64,
    /// Largest population (or `I + R`) kept for models with infinitely many states.
    pub truncation: u64,
    pub max_doublings: usize,
    pub state_limit: usize,
}

impl Default for UniformizationOptions {
    fn default() -> Self {
        UniformizationOptions {
            tol: 1e-8,
            truncation: 200,
            max_doublings: 80,
            state_limit: 10_000,
        }
    }
}

type Dense = Vec<Vec<f64>>;

fn dense_mul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut out = vec![vec![0.0; n]; n];
    for (i, row) in a.iter().enumerate() {
        let target = &mut out[i];
        for (k, &aik) in row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (t, bkj) in target.iter_mut().zip(&b[k]) {
                *t += aik * bkj;
            }
        }
    }
    out
}

fn rescale(a: &mut Dense) {
    let max = a.iter().flatten().fold(0.0f64, |m, x| m.max(*x));
    if max > 0.0 {
        a.iter_mut().flatten().for_each(|x| *x /= max);
    }
}

fn row_times(v: &[f64], a: &Dense) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for (vi, row) in v.iter().zip(a) {
        if *vi == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(row) {
            *o += vi * x;
        }
    }
    out
}

/// Poisson weights `P[Poisson(mean) = k]` up to the first negligible term
/// past the mode.
fn poisson_weights(mean: f64) -> Vec<f64> {
    let mut weights = Vec::new();
    let mut term = (-mean).exp();
    let mut k = 0usize;
    while (k as f64) <= mean || term > SERIES_TAIL {
        weights.push(term);
        k += 1;
        term *= mean / k as f64;
    }
    weights
}

/// One-step operator: `P_S` in discrete time, `e^{Q_S h}` with `Λh = 1`
/// in continuous time.
fn dense_step(chain: &Chain) -> Dense {
    let n = chain.states.len();
    let mut p = vec![vec![0.0; n]; n];
    if chain.discrete {
        for (i, row) in chain.rows.iter().enumerate() {
            for &(j, w) in row {
                p[i][j] += w;
            }
        }
        return p;
    }
    let lambda = chain.exit.iter().fold(0.0f64, |m, x| m.max(*x));
    for (i, row) in chain.rows.iter().enumerate() {
        p[i][i] += 1.0 - chain.exit[i] / lambda;
        for &(j, w) in row {
            p[i][j] += w / lambda;
        }
    }
    let weights = poisson_weights(1.0);
    let mut power: Dense = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut sum = vec![vec![0.0; n]; n];
    for (k, w) in weights.iter().enumerate() {
        if k > 0 {
            power = dense_mul(&power, &p);
        }
        for (srow, prow) in sum.iter_mut().zip(&power) {
            for (s, x) in srow.iter_mut().zip(prow) {
                *s += w * x;
            }
        }
    }
    sum
}

fn sparse_step(chain: &Chain, v: &[f64], lambda: f64, weights: &[f64]) -> Vec<f64> {
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (i, (&xi, row)) in x.iter().zip(&chain.rows).enumerate() {
            if xi == 0.0 {
                continue;
            }
            if chain.discrete {
                for &(j, w) in row {
                    out[j] += xi * w;
                }
            } else {
                out[i] += xi * (1.0 - chain.exit[i] / lambda);
                for &(j, w) in row {
                    out[j] += xi * w / lambda;
                }
            }
        }
        out
    };
    if chain.discrete {
        return apply(v);
    }
    let mut term = v.to_vec();
    let mut out = vec![0.0; v.len()];
    for (k, w) in weights.iter().enumerate() {
        if k > 0 {
            term = apply(&term);
        }
        for (o, t) in out.iter_mut().zip(&term) {
            *o += w * t;
        }
    }
    out
}

/// Law of `X(t)` given survival, started from `ν`, as `t` doubles until
/// successive marginals agree to `opts.tol` in total variation.
pub fn lcd_uniformization(
    model: &ModelSpec,
    nu: &InitialDistribution,
    opts: &UniformizationOptions,
) -> Result<OracleResult> {
    model.validate()?;
    nu.validate(model)?;
    let seeds = nu.support();
    for s in &seeds {
        if !within_truncation(model, *s, opts.truncation) {
            return Err(QsdError::ContractViolation(format!(
                "initial state {s} lies beyond the truncation {}",
                opts.truncation
            )));
        }
    }
    let states = enumerate(model, &seeds, opts.truncation, opts.state_limit)?;
    let chain = build_chain(model, states)?;
    let n = chain.states.len();
    let position: HashMap<StateCode, usize> = chain.states.iter().enumerate().map(|(k, s)| (*s, k)).collect();
    let mut start = vec![0.0; n];
    for (s, p) in nu.probabilities() {
        start[position[&s]] += p;
    }

    let mut last_change = f64::INFINITY;
    let u = if n <= DENSE_LIMIT {
        let mut a = dense_step(&chain);
        let mut u = row_times(&start, &a);
        normalize(&mut u)?;
        let mut converged = None;
        for _ in 0..opts.max_doublings {
            a = dense_mul(&a, &a);
            rescale(&mut a);
            let mut next = row_times(&start, &a);
            normalize(&mut next)?;
            last_change = tv(&u, &next);
            u = next;
            if last_change < opts.tol {
                converged = Some(u.clone());
                break;
            }
        }
        converged
    } else {
        let lambda = chain.exit.iter().fold(0.0f64, |m, x| m.max(*x));
        let weights = poisson_weights(1.0);
        let mut u = sparse_step(&chain, &start, lambda, &weights);
        normalize(&mut u)?;
        let mut steps = 1usize;
        let mut converged = None;
        for _ in 0..opts.max_doublings {
            let mut next = u.clone();
            for _ in 0..steps {
                next = sparse_step(&chain, &next, lambda, &weights);
                normalize(&mut next)?;
            }
            steps *= 2;
            last_change = tv(&u, &next);
            u = next;
            if last_change < opts.tol {
                converged = Some(u.clone());
                break;
            }
            if steps > MAX_SPARSE_STEPS {
                break;
            }
        }
        converged
    };
    let u = u.ok_or(QsdError::NoConvergence {
        iterations: opts.max_doublings,
        last_change,
    })?;
    let alpha = chain
        .states
        .iter()
        .zip(&u)
        .map(|(s, p)| model.absorption_rate(*s) * p)
        .sum();
    Ok(OracleResult {
        states: chain.states,
        u,
        alpha,
        method: OracleMethod::Uniformization,
    })
}

/// `L(i)`: the largest `j ≤ i` whose rate is a (non-strict) prefix minimum.
pub fn pure_death_support(rates: &[f64], i: usize) -> usize {
    let mut best = 1;
    let mut running = f64::INFINITY;
    for (j, &r) in rates.iter().enumerate().take(i) {
        if r <= running {
            running = r;
            best = j + 1;
        }
    }
    best
}

/// LCD of the pure-death chain started at `i`, via the eigen recursion
/// `u_{j+1} = u_j (δ_j − α) / δ_{j+1}` on `{1, …, L(i)}`.
pub fn pure_death_lcd(rates: &[f64], i: usize) -> Result<OracleResult> {
    ModelSpec::PureDeath {
        rates: rates.to_vec(),
    }
    .validate()?;
    if i == 0 || i > rates.len() {
        return Err(QsdError::ContractViolation(format!(
            "start state {i} outside 1..={}",
            rates.len()
        )));
    }
    let l = pure_death_support(rates, i);
    let alpha = rates[l - 1];
    let mut u = vec![0.0; i];
    u[0] = 1.0;
    for j in 1..l {
        u[j] = u[j - 1] * (rates[j - 1] - alpha) / rates[j];
    }
    normalize(&mut u)?;
    debug_assert!(u[l..].iter().all(|x| *x == 0.0));
    Ok(OracleResult {
        states: (1..=i as u64).map(StateCode).collect(),
        u,
        alpha,
        method: OracleMethod::EigenRecursion,
    })
}

/// Dominant left eigenvector of the Wright-Fisher transition matrix
/// restricted to the counts `1..D−1`.
pub fn wf_lcd_power_iteration(population: u64, selection: [f64; 2], tol: f64) -> Result<OracleResult> {
    if population > 200 {
        return Err(QsdError::ContractViolation(format!(
            "population {population} exceeds 200"
        )));
    }
    let model = ModelSpec::WrightFisher {
        population,
        selection,
    };
    model.validate()?;
    let chain = build_chain(&model, (1..population).map(StateCode).collect())?;
    let n = chain.states.len();
    if n == 0 {
        return Err(QsdError::InvalidModel("no transient states".into()));
    }
    let mut p = vec![vec![0.0; n]; n];
    for (i, row) in chain.rows.iter().enumerate() {
        for &(j, w) in row {
            p[i][j] += w;
        }
    }
    let mut v = vec![1.0 / n as f64; n];
    let max_iterations = 1_000_000;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iterations {
        let next = row_times(&v, &p);
        let rho: f64 = next.iter().sum();
        residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - rho * b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return Ok(OracleResult {
                states: chain.states,
                u: v,
                alpha: 1.0 - rho,
                method: OracleMethod::PowerIteration,
            });
        }
        v = next;
        normalize(&mut v)?;
    }
    Err(QsdError::NoConvergence {
        iterations: max_iterations,
        last_change: residual,
    })
}

/// `‖uᵀQ_S + α uᵀ‖_∞` in continuous time, `‖uᵀP_S − (1−α) uᵀ‖_∞` in
/// discrete time, over the states of `result`.
pub fn eigen_residual(model: &ModelSpec, result: &OracleResult) -> Result<f64> {
    let chain = build_chain(model, result.states.clone())?;
    let mut r = vec![0.0; result.u.len()];
    for (i, (&ui, row)) in result.u.iter().zip(&chain.rows).enumerate() {
        if chain.discrete {
            r[i] -= (1.0 - result.alpha) * ui;
        } else {
            r[i] += (result.alpha - chain.exit[i]) * ui;
        }
        for &(j, w) in row {
            r[j] += ui * w;
        }
    }
    Ok(r.iter().fold(0.0, |m, x| m.max(x.abs())))
}

/// TV distance between two oracle results over the union of their states.
pub fn oracle_tv(a: &OracleResult, b: &OracleResult) -> Result<f64> {
    tv_distance(&a.distribution(), &b.distribution())
}

/// One step of the weight chain of a two-region sampler on the two-state
/// death model: `x` is the weight in state 1.
pub fn two_state_chain_step<R: Rng + ?Sized>(x: f64, n1: u64, n2: u64, delta: f64, rng: &mut R) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    if rng.random::<f64>() < a / (a + delta * b) {
        x * (a - 1.0) / (a - x)
    } else {
        x + (1.0 - x) / b
    }
}

/// Constants of the drift bound `PV(x) < λ V(x) + K` for `V(x) = x/(1−x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovParams {
    pub drift_rate: BigRational,
    pub drift_offset: BigRational,
    pub n1: u64,
    pub n2: u64,
    pub delta: BigRational,
}

fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

impl LyapunovParams {
    /// `δ` is taken as the exact binary value of the float.
    pub fn new(n1: u64, n2: u64, delta: f64) -> Result<Self> {
        let exact = BigRational::from_float(delta)
            .ok_or_else(|| QsdError::Regime(format!("delta {delta} is not finite")))?;
        Self::exact(n1, n2, exact)
    }

    pub fn exact(n1: u64, n2: u64, delta: BigRational) -> Result<Self> {
        let one = BigRational::one();
        if !(delta.is_positive() && delta < one) {
            return Err(QsdError::Regime(format!("delta {delta} outside (0, 1)")));
        }
        if n1 < 2 {
            return Err(QsdError::Regime(format!("N1 = {n1} is below 2")));
        }
        if n2 < 5 || int(n2) * (&one - &delta) < one {
            return Err(QsdError::Regime(format!(
                "N2 = {n2} is below max(5, 1/(1 - delta))"
            )));
        }
        let (a, b) = (int(n1), int(n2));
        let denom = (&b - &one) * (&a + &delta * &b);
        let drift_rate = &one - (&b * (&one - &delta) - &one) / &denom;
        let drift_offset = &delta * &b / &denom;
        Ok(LyapunovParams {
            drift_rate,
            drift_offset,
            n1,
            n2,
            delta,
        })
    }

    pub fn v(x: &BigRational) -> BigRational {
        x / (BigRational::one() - x)
    }

    /// Closed-form `E[V(X(n+1)) | X(n) = x]`.
    pub fn pv(&self, x: &BigRational) -> BigRational {
        let one = BigRational::one();
        let (a, b) = (int(self.n1), int(self.n2));
        let p_down = &a / (&a + &self.delta * &b);
        let down = x * (&a - &one) / (&a - x);
        let up = x + (&one - x) / &b;
        &p_down * Self::v(&down) + (&one - &p_down) * Self::v(&up)
    }

    pub fn bound(&self, x: &BigRational) -> BigRational {
        &self.drift_rate * Self::v(x) + &self.drift_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftPoint {
    pub x: BigRational,
    pub pv: BigRational,
    pub bound: BigRational,
    /// `bound − PV(x)`; the strict inequality needs this to be positive.
    pub margin: BigRational,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftVerdict {
    pub points: Vec<DriftPoint>,
    pub holds_strictly: bool,
    pub holds_non_strictly: bool,
}

impl DriftVerdict {
    pub fn min_margin(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.margin.to_f64())
            .reduce(f64::min)
    }
}

/// The points `k / (n + 1)` for `k = 1..=n`.
pub fn rational_grid(n: u64) -> Vec<BigRational> {
    (1..=n)
        .map(|k| BigRational::new(BigInt::from(k), BigInt::from(n + 1)))
        .collect()
}

/// Evaluates the drift inequality exactly at every grid point.
pub fn lyapunov_drift_check(params: &LyapunovParams, grid: &[BigRational]) -> Result<DriftVerdict> {
    let one = BigRational::one();
    let mut points = Vec::with_capacity(grid.len());
    for x in grid {
        if !(x.is_positive() && *x < one) {
            return Err(QsdError::ContractViolation(format!("grid point {x} outside (0, 1)")));
        }
        let pv = params.pv(x);
        let bound = params.bound(x);
        let margin = &bound - &pv;
        points.push(DriftPoint {
            x: x.clone(),
            pv,
            bound,
            margin,
        });
    }
    let holds_strictly = points.iter().all(|p| p.margin.is_positive());
    let holds_non_strictly = points.iter().all(|p| !p.margin.is_negative());
    Ok(DriftVerdict {
        points,
        holds_strictly,
        holds_non_strictly,
    })
}

/// Decay parameter `min(δ, γ − β)` of the transient immunity model.
pub fn ti_alpha(infection_rate: f64, recovery_rate: f64, immunity_loss_rate: f64) -> Result<f64> {
    if !(infection_rate > 0.0 && immunity_loss_rate > 0.0) {
        return Err(QsdError::Regime("rates must be positive".into()));
    }
    if recovery_rate <= infection_rate {
        return Err(QsdError::Regime(format!(
            "recovery rate {recovery_rate} must exceed infection rate {infection_rate}"
        )));
    }
    Ok(immunity_loss_rate.min(recovery_rate - infection_rate))
}

/// True when the pure-death chain started at `i` has a unique prefix minimum,
/// so the oracles are free of tie subtleties.
pub fn prefix_minimum_unique(rates: &[f64], i: usize) -> bool {
    let l = pure_death_support(rates, i);
    let alpha = rates[l - 1];
    rates[..l - 1].iter().all(|r| *r > alpha)
}


#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn pure_death_five_state() {
        let rates = [3.0, 2.0, 3.0, 1.0, 3.0];
        assert_eq!(pure_death_support(&rates, 5), 4);
        let r = pure_death_lcd(&rates, 5).unwrap();
        assert!(close(&r.u, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 9.0, 2.0 / 9.0, 0.0], 1e-15));
        assert_eq!(r.alpha, 1.0);
        let model = ModelSpec::PureDeath { rates: rates.to_vec() };
        assert!(eigen_residual(&model, &r).unwrap() <= 1e-12);

        let uni = lcd_uniformization(
            &model,
            &InitialDistribution::Point(StateCode(5)),
            &UniformizationOptions::default(),
        )
        .unwrap();
        assert!(close(&uni.u, &r.u, 1e-7));
        assert!((uni.alpha - 1.0).abs() < 1e-7);
    }

    #[test]
    fn pure_death_single_and_constant() {
        let r = pure_death_lcd(&[2.5], 1).unwrap();
        assert_eq!(r.u, vec![1.0]);
        assert_eq!(r.alpha, 2.5);

        let c = pure_death_lcd(&[1.5, 1.5, 1.5], 3).unwrap();
        assert_eq!(c.u, vec![1.0, 0.0, 0.0]);
        assert_eq!(c.alpha, 1.5);
        // ties converge only polynomially in t, hence the looser tolerance
        let opts = UniformizationOptions {
            tol: 1e-6,
            ..UniformizationOptions::default()
        };
        let uni = lcd_uniformization(
            &ModelSpec::PureDeath { rates: vec![1.5; 3] },
            &InitialDistribution::Point(StateCode(3)),
            &opts,
        )
        .unwrap();
        assert!(oracle_tv(&uni, &c).unwrap() < 1e-4);
    }

    #[test]
    fn two_state_death_uniformization() {
        for k in 1..=9 {
            let delta = k as f64 / 10.0;
            let r = lcd_uniformization(
                &ModelSpec::TwoStateDeath { delta },
                &InitialDistribution::Point(StateCode(2)),
                &UniformizationOptions::default(),
            )
            .unwrap();
            assert!(close(&r.u, &[delta, 1.0 - delta], 1e-8), "{delta}: {:?}", r.u);
        }
    }

    #[test]
    fn birth_death_is_geometric() {
        let model = ModelSpec::LinearBirthDeath {
            birth_rate: 0.4,
            death_rate: 1.0,
        };
        let r = lcd_uniformization(
            &model,
            &InitialDistribution::Point(StateCode(1)),
            &UniformizationOptions::default(),
        )
        .unwrap();
        assert_eq!(r.states.len(), 200);
        let geometric: Distribution = (1..=200u64)
            .map(|k| (StateCode(k), 0.6 * 0.4f64.powi(k as i32 - 1)))
            .collect();
        let d = tv_distance(&r.distribution().normalized().unwrap(), &geometric.normalized().unwrap()).unwrap();
        assert!(d <= 1e-6, "tv {d}");
        assert!((r.alpha - 0.6).abs() < 1e-6);
    }

    #[test]
    fn uniformization_stable_under_doubling() {
        let model = ModelSpec::PureDeath {
            rates: vec![0.7, 2.0, 0.9, 4.0],
        };
        let nu = InitialDistribution::Point(StateCode(4));
        let a = lcd_uniformization(&model, &nu, &UniformizationOptions::default()).unwrap();
        let b = lcd_uniformization(
            &model,
            &nu,
            &UniformizationOptions {
                tol: 1e-12,
                ..UniformizationOptions::default()
            },
        )
        .unwrap();
        assert!(oracle_tv(&a, &b).unwrap() <= 1e-8);
    }

    #[test]
    fn enumeration_limit() {
        let model = ModelSpec::TransientImmunity {
            infection_rate: 0.3,
            recovery_rate: 1.0,
            immunity_loss_rate: 0.5,
        };
        let opts = UniformizationOptions {
            state_limit: 50,
            ..UniformizationOptions::default()
        };
        let err = lcd_uniformization(
            &model,
            &InitialDistribution::Point(StateCode::pair(1, 0).unwrap()),
            &opts,
        )
        .unwrap_err();
        assert_eq!(err, QsdError::EnumerationOverflow { limit: 50 });
    }

    #[test]
    fn wright_fisher_oracles() {
        let r = wf_lcd_power_iteration(2, [0.0, 0.0], 1e-12).unwrap();
        assert_eq!(r.u, vec![1.0]);

        let r = wf_lcd_power_iteration(4, [0.0, 0.0], 1e-13).unwrap();
        assert!((r.u[0] - r.u[2]).abs() < 1e-10);
        // neutral: dominant eigenvalue 1 - 1/D
        assert!((r.alpha - 0.25).abs() < 1e-10);

        let model = ModelSpec::WrightFisher {
            population: 20,
            selection: [0.0, 0.1],
        };
        let r = wf_lcd_power_iteration(20, [0.0, 0.1], 1e-10).unwrap();
        assert!(eigen_residual(&model, &r).unwrap() <= 1e-10);
        assert!((r.u.iter().sum::<f64>() - 1.0).abs() < 1e-10);

        let uni = lcd_uniformization(
            &model,
            &InitialDistribution::Point(StateCode(10)),
            &UniformizationOptions::default(),
        )
        .unwrap();
        assert!(oracle_tv(&uni, &r).unwrap() < 1e-6);
        assert!(wf_lcd_power_iteration(201, [0.0, 0.0], 1e-10).is_err());
    }

    #[test]
    fn two_state_chain_boundaries() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(two_state_chain_step(1.0, 20, 20, 0.4, &mut rng), 1.0);
            let x = two_state_chain_step(0.0, 4, 5, 0.5, &mut rng);
            assert!(x == 0.0 || x == 0.2);
        }
    }

    #[test]
    fn drift_holds_with_equality() {
        // PV(x) equals λV(x) + K identically, so the margin is exactly zero.
        for (n1, n2, d) in [(6, 6, 0.4), (20, 20, 0.4), (10, 40, 0.7)] {
            let params = LyapunovParams::new(n1, n2, d).unwrap();
            let verdict = lyapunov_drift_check(&params, &rational_grid(99)).unwrap();
            assert_eq!(verdict.points.len(), 99);
            assert!(verdict.points.iter().all(|p| p.margin.is_zero()));
            assert!(verdict.holds_non_strictly);
            assert!(!verdict.holds_strictly);
        }
    }

    #[test]
    fn drift_regime() {
        assert!(matches!(LyapunovParams::new(6, 3, 0.5), Err(QsdError::Regime(_))));
        assert!(matches!(LyapunovParams::new(1, 6, 0.5), Err(QsdError::Regime(_))));
        assert!(matches!(LyapunovParams::new(6, 6, 0.9), Err(QsdError::Regime(_))));
        assert!(matches!(LyapunovParams::new(6, 6, 1.0), Err(QsdError::Regime(_))));
        let p = LyapunovParams::new(6, 6, 0.4).unwrap();
        let half = BigRational::new(BigInt::from(1), BigInt::from(2));
        assert!(lyapunov_drift_check(&p, &[BigRational::one()]).is_err());
        assert_eq!(LyapunovParams::v(&half), BigRational::one());
    }

    #[test]
    fn ti_alpha_examples() {
        assert_eq!(ti_alpha(0.3, 1.0, 0.5).unwrap(), 0.5);
        assert!((ti_alpha(0.7, 1.0, 0.5).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(ti_alpha(0.5, 1.0, 0.5).unwrap(), 0.5);
        assert!(matches!(ti_alpha(1.0, 1.0, 0.5), Err(QsdError::Regime(_))));
    }
}

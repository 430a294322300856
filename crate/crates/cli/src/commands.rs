use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qsd_core::analysis::{alpha_trace, cumulative_mean_trace, tv_distance, Distribution};
use qsd_core::engine::{collect_samples, RunLog, Sampler};
use qsd_core::ensemble::InitialDistribution;
use qsd_core::error::QsdError;
use qsd_core::models::{ModelSpec, StateCode};
use qsd_core::oracle::{lcd_uniformization, pure_death_lcd, ti_alpha, wf_lcd_power_iteration, OracleResult};
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, SweepTarget};
use crate::error::CliError;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-replication seeds: successive outputs of SplitMix64 seeded with the
/// master seed. Each replication runs its own Xoshiro256++ stream.
pub fn replication_seeds(master: u64, replications: usize) -> Vec<u64> {
    let mut mixer = SplitMix64::seed_from_u64(master);
    (0..replications).map(|_| mixer.next_u64()).collect()
}

fn replicate(sampler: &Sampler, seeds: &[u64], pool: &rayon::ThreadPool) -> Vec<RunLog> {
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| sampler.run(&mut Xoshiro256PlusPlus::seed_from_u64(seed)))
            .collect()
    })
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>, CliError> {
    Ok(csv::Writer::from_path(dir.join(name))?)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn error_kind(error: &QsdError) -> &'static str {
    match error {
        QsdError::AllAbsorbed => "all_absorbed",
        QsdError::RegionExtinct { .. } => "region_extinct",
        QsdError::Unpartitioned(_) => "unpartitioned",
        QsdError::StateOverflow(_) => "state_overflow",
        _ => "other",
    }
}

/// Writes `error.json` when any replication failed.
fn record_failures(dir: &Path, logs: &[RunLog]) -> Result<usize, CliError> {
    let failures: Vec<serde_json::Value> = logs
        .iter()
        .enumerate()
        .filter_map(|(r, log)| {
            log.failure.as_ref().map(|f| {
                let mut record = json!({
                    "replication": r,
                    "time": f.time,
                    "kind": error_kind(&f.error),
                    "message": f.error.to_string(),
                });
                if let QsdError::RegionExtinct { region } = f.error {
                    record["region"] = json!(region);
                }
                record
            })
        })
        .collect();
    if !failures.is_empty() {
        write_json(dir, "error.json", &json!({ "failures": failures }))?;
    }
    Ok(failures.len())
}

fn write_distribution(dir: &Path, name: &str, model: &ModelSpec, dist: &Distribution) -> Result<(), CliError> {
    let mut w = csv_writer(dir, name)?;
    w.write_record(["state_code", "decoded_state", "probability"])?;
    for (s, p) in dist.iter() {
        w.write_record([s.0.to_string(), model.decode(s).to_string(), fmt_f64(p)])?;
    }
    w.flush()?;
    Ok(())
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let variance = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, variance)
}

pub fn run(config: &ExperimentConfig, out: &Path, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    let sampler = config.sampler()?;
    let model = &config.model;
    fs::create_dir_all(out)?;
    let seeds = replication_seeds(config.seed, config.replications);
    let logs = replicate(&sampler, &seeds, pool);

    let per_replication: Vec<Distribution> = logs.iter().filter_map(|log| collect_samples(log).ok()).collect();
    write_distribution(out, "histogram.csv", model, &Distribution::pool(per_replication))?;

    let mut alpha = csv_writer(out, "alpha.csv")?;
    alpha.write_record(["replication", "time", "alpha_hat"])?;
    let mut means = csv_writer(out, "mean_trace.csv")?;
    means.write_record(["replication", "time", "cumulative_mean"])?;
    let mut regions = csv_writer(out, "regions.csv")?;
    regions.write_record(["replication", "time", "region", "count", "weight"])?;
    let mut survivors = csv_writer(out, "survivors.csv")?;
    survivors.write_record(["replication", "time", "before", "after"])?;
    let mut pooled_alpha = Vec::new();
    for (r, log) in logs.iter().enumerate() {
        let rep = r.to_string();
        if let Ok(trace) = alpha_trace(log, model) {
            for (t, a) in trace.times.iter().zip(&trace.estimates) {
                alpha.write_record([rep.clone(), fmt_f64(*t), fmt_f64(*a)])?;
            }
            if log.succeeded() {
                pooled_alpha.push(trace.pooled);
            }
        }
        if let Ok(trace) = cumulative_mean_trace(log, |s| model.statistic(s)) {
            for (t, m) in trace {
                means.write_record([rep.clone(), fmt_f64(t), fmt_f64(m)])?;
            }
        }
        for trace in &log.region_traces {
            for (l, (count, weight)) in trace.counts.iter().zip(&trace.weights).enumerate() {
                regions.write_record([rep.clone(), fmt_f64(trace.time), l.to_string(), count.to_string(), fmt_f64(*weight)])?;
            }
        }
        for record in &log.survivor_trace {
            survivors.write_record([
                rep.clone(),
                fmt_f64(record.time),
                record.before.to_string(),
                record.after.to_string(),
            ])?;
        }
    }
    for w in [&mut alpha, &mut means, &mut regions, &mut survivors] {
        w.flush()?;
    }

    let failed = record_failures(out, &logs)?;
    let (alpha_mean, alpha_var) = mean_and_variance(&pooled_alpha);
    let resamples: Vec<f64> = logs.iter().map(|l| l.resample_count() as f64).collect();
    write_json(
        out,
        "summary.json",
        &json!({
            "replications": config.replications,
            "failed": failed,
            "seed": config.seed,
            "alpha_hat": finite_or_null(alpha_mean),
            "alpha_hat_variance": finite_or_null(alpha_var),
            "mean_resample_count": finite_or_null(mean_and_variance(&resamples).0),
        }),
    )?;
    if failed > 0 {
        return Err(CliError::Sampler {
            failed,
            total: config.replications,
        });
    }
    Ok(())
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

pub fn oracle(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let settings = config.oracle.clone().unwrap_or_default();
    let model = &config.model;
    let nu = config.initial_distribution()?;
    fs::create_dir_all(out)?;
    let core = |e: QsdError| CliError::Config(e.to_string());
    let result: OracleResult = match (model, &nu) {
        (ModelSpec::TransientImmunity { infection_rate, recovery_rate, immunity_loss_rate }, _) => {
            if !settings.alpha_only {
                return Err(CliError::UnsupportedOracle(
                    "the limiting conditional distribution of the transient immunity model has no exact oracle; \
                     set oracle.alpha_only to write the decay parameter"
                        .into(),
                ));
            }
            let a = ti_alpha(*infection_rate, *recovery_rate, *immunity_loss_rate).map_err(core)?;
            write_alpha(out, a, "closed_form")?;
            return Ok(());
        }
        (ModelSpec::PureDeath { rates }, InitialDistribution::Point(s)) => {
            pure_death_lcd(rates, s.0 as usize).map_err(core)?
        }
        (ModelSpec::WrightFisher { population, selection }, _) => {
            wf_lcd_power_iteration(*population, *selection, settings.tol.min(1e-10)).map_err(core)?
        }
        _ => lcd_uniformization(model, &nu, &settings.options()).map_err(core)?,
    };
    // zero-probability states stay in the file so it lists the whole support
    let mut w = csv_writer(out, "oracle.csv")?;
    w.write_record(["state_code", "decoded_state", "probability"])?;
    for (s, p) in result.states.iter().zip(&result.u) {
        w.write_record([s.0.to_string(), model.decode(*s).to_string(), fmt_f64(*p)])?;
    }
    w.flush()?;
    write_alpha(out, result.alpha, result.method.as_str())
}

fn write_alpha(out: &Path, alpha: f64, method: &str) -> Result<(), CliError> {
    let mut w = csv_writer(out, "oracle_alpha.csv")?;
    w.write_record(["alpha", "method"])?;
    w.write_record([fmt_f64(alpha), method.to_string()])?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct DistributionRow {
    state_code: u64,
    decoded_state: String,
    probability: f64,
}

fn read_distribution(path: &Path) -> Result<BTreeMap<u64, (String, f64)>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<DistributionRow>() {
        let row = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let entry = out.entry(row.state_code).or_insert((row.decoded_state.clone(), 0.0));
        if entry.0 != row.decoded_state {
            return Err(CliError::Config(format!(
                "{}: state {} decoded both as {} and {}",
                path.display(),
                row.state_code,
                entry.0,
                row.decoded_state
            )));
        }
        entry.1 += row.probability;
    }
    Ok(out)
}

pub struct CompareInputs {
    pub run: PathBuf,
    pub oracle: PathBuf,
    pub threshold: Option<f64>,
}

pub fn compare(inputs: &CompareInputs, out: &Path) -> Result<f64, CliError> {
    let run = read_distribution(&inputs.run)?;
    let oracle = read_distribution(&inputs.oracle)?;
    let mut states: Vec<u64> = run.keys().chain(oracle.keys()).copied().collect();
    states.sort_unstable();
    states.dedup();
    for s in &states {
        if let (Some(a), Some(b)) = (run.get(s), oracle.get(s)) {
            if a.0 != b.0 {
                return Err(CliError::Config(format!(
                    "state encodings differ: code {s} is {} in the run and {} in the oracle",
                    a.0, b.0
                )));
            }
        }
    }
    let to_dist = |m: &BTreeMap<u64, (String, f64)>| Distribution::from_weighted(m.iter().map(|(s, (_, p))| (StateCode(*s), *p)));
    let tv = tv_distance(&to_dist(&run), &to_dist(&oracle)).map_err(|e| CliError::Config(e.to_string()))?;

    fs::create_dir_all(out)?;
    let mut w = csv_writer(out, "compare.csv")?;
    w.write_record(["state_code", "decoded_state", "run", "oracle", "abs_error"])?;
    for s in &states {
        let a = run.get(s);
        let b = oracle.get(s);
        let name = a.or(b).map(|x| x.0.clone()).unwrap_or_default();
        let (pa, pb) = (a.map_or(0.0, |x| x.1), b.map_or(0.0, |x| x.1));
        w.write_record([s.to_string(), name, fmt_f64(pa), fmt_f64(pb), fmt_f64((pa - pb).abs())])?;
    }
    w.flush()?;
    let pass = inputs.threshold.is_none_or(|t| tv <= t);
    write_json(
        out,
        "compare.json",
        &json!({ "tv_distance": tv, "threshold": inputs.threshold, "pass": pass }),
    )?;
    println!("tv_distance {}", fmt_f64(tv));
    match inputs.threshold {
        Some(threshold) if !pass => Err(CliError::Threshold { tv, threshold }),
        _ => Ok(tv),
    }
}

pub fn sweep(config: &ExperimentConfig, out: &Path, pool: &rayon::ThreadPool) -> Result<(), CliError> {
    let Some(sweep) = &config.sweep else {
        return Err(CliError::Config("sweep section missing".into()));
    };
    fs::create_dir_all(out)?;
    let seeds = replication_seeds(config.seed, config.replications);
    let mut w = csv_writer(out, "sweep.csv")?;
    w.write_record([
        "parameter",
        "value",
        "replications",
        "failures",
        "mean",
        "variance",
        "mean_resample_count",
    ])?;
    let parameter = serde_json::to_value(sweep.parameter)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default();
    let mut all_failures = 0;
    let mut failure_logs = Vec::new();
    for &value in &sweep.values {
        let swept = config.with_parameter(sweep.parameter, value)?;
        let sampler = swept.sampler()?;
        let logs = replicate(&sampler, &seeds, pool);
        let estimates: Vec<f64> = logs
            .iter()
            .filter(|log| log.succeeded())
            .filter_map(|log| match sweep.target {
                SweepTarget::Alpha => alpha_trace(log, &swept.model).ok().map(|t| t.pooled),
                SweepTarget::Mean => collect_samples(log)
                    .ok()
                    .map(|d| d.expectation(|s| swept.model.statistic(s))),
            })
            .collect();
        let failures = logs.iter().filter(|l| !l.succeeded()).count();
        all_failures += failures;
        let (mean, variance) = mean_and_variance(&estimates);
        let resamples: Vec<f64> = logs.iter().map(|l| l.resample_count() as f64).collect();
        w.write_record([
            parameter.clone(),
            fmt_f64(value),
            config.replications.to_string(),
            failures.to_string(),
            fmt_f64(mean),
            fmt_f64(variance),
            fmt_f64(mean_and_variance(&resamples).0),
        ])?;
        if failures > 0 {
            failure_logs.push((value, logs));
        }
    }
    w.flush()?;
    if all_failures > 0 {
        let mut records = Vec::new();
        for (value, logs) in &failure_logs {
            for (r, log) in logs.iter().enumerate() {
                if let Some(f) = &log.failure {
                    records.push(json!({
                        "value": value,
                        "replication": r,
                        "time": f.time,
                        "kind": error_kind(&f.error),
                        "message": f.error.to_string(),
                    }));
                }
            }
        }
        write_json(out, "error.json", &json!({ "failures": records }))?;
        return Err(CliError::Sampler {
            failed: all_failures,
            total: config.replications * sweep.values.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(1.0 / 3.0), "3.3333333333333331e-1");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = replication_seeds(42, 5);
        assert_eq!(a, replication_seeds(42, 5));
        assert_eq!(a[..3], replication_seeds(42, 3)[..]);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 5);
    }

    #[test]
    fn no_error_record_on_success() {
        let dir = tempfile::tempdir().unwrap();
        let n = record_failures(dir.path(), &[RunLog::default()]).unwrap();
        assert_eq!(n, 0);
        assert!(!dir.path().join("error.json").exists());
    }
}

//! Experiment configuration: a versioned JSON document.

use std::path::{Path, PathBuf};

use qsd_core::engine::{Sampler, Schedule, ScheduleMode};
use qsd_core::ensemble::{InitialDistribution, Partition, RegionRule};
use qsd_core::models::{ModelSpec, State, StateCode};
use qsd_core::oracle::UniformizationOptions;
use qsd_core::resampling::{Reallocation, ResamplerSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A state written as a count (`5`) or an `(infectives, recovered)` pair (`[1, 0]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Count(u64),
    Pair([u64; 2]),
}

impl StateSpec {
    pub fn encode(self, model: &ModelSpec) -> Result<StateCode, CliError> {
        let state = match self {
            StateSpec::Count(n) => State::Count(n),
            StateSpec::Pair([infectives, recovered]) => State::Pair { infectives, recovered },
        };
        model.encode(state).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedState {
    pub state: StateSpec,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Point(StateSpec),
    Weighted(Vec<WeightedState>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSpec {
    States(Vec<StateSpec>),
    Range { lo: u64, hi: Option<u64> },
    NoInfectives,
    Infectives,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplerConfig {
    None,
    Multinomial,
    Residual,
    Refill {
        inner: Box<ResamplerConfig>,
    },
    CombineSplit {
        #[serde(default)]
        realloc: Reallocation,
    },
    Regional {
        regions: Vec<RegionSpec>,
        targets: Vec<usize>,
        inner: Box<ResamplerConfig>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Trigger fraction of a dynamic schedule.
    Lambda,
    /// Longest gap between resamplings of a dynamic schedule.
    TMax,
    /// Infection or birth rate.
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    Alpha,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "default_target")]
    pub target: SweepTarget,
}

fn default_target() -> SweepTarget {
    SweepTarget::Alpha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_truncation")]
    pub truncation: u64,
    /// Write only the decay parameter (transient immunity).
    #[serde(default)]
    pub alpha_only: bool,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_truncation() -> u64 {
    200
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            tol: default_tol(),
            truncation: default_truncation(),
            alpha_only: false,
        }
    }
}

impl OracleConfig {
    pub fn options(&self) -> UniformizationOptions {
        UniformizationOptions {
            tol: self.tol,
            truncation: self.truncation,
            ..UniformizationOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Largest acceptable TV distance.
    pub threshold: f64,
    pub run: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub initial: InitialSpec,
    pub schedule: Schedule,
    pub resampler: ResamplerConfig,
    pub particles: usize,
    pub seed: u64,
    pub replications: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub compare: Option<CompareConfig>,
    /// Regions to trace when the resampler has none of its own.
    #[serde(default)]
    pub trace_regions: Option<Vec<RegionSpec>>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner();
            CliError::Config(format!(
                "line {} column {}, field `{}`: {}",
                inner.line(),
                inner.column(),
                e.path(),
                inner
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[cfg(test)]
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replications == 0 {
            return Err(CliError::Config("replications must be at least 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(CliError::Config("sweep values must not be empty".into()));
            }
        }
        if let Some(compare) = &self.compare {
            if !(compare.threshold >= 0.0) {
                return Err(CliError::Config("compare threshold must be non-negative".into()));
            }
        }
        self.sampler()?;
        Ok(())
    }

    pub fn initial_distribution(&self) -> Result<InitialDistribution, CliError> {
        Ok(match &self.initial {
            InitialSpec::Point(s) => InitialDistribution::Point(s.encode(&self.model)?),
            InitialSpec::Weighted(list) => InitialDistribution::Weighted(
                list.iter()
                    .map(|w| Ok((w.state.encode(&self.model)?, w.weight)))
                    .collect::<Result<_, CliError>>()?,
            ),
        })
    }

    pub fn partition(&self, regions: &[RegionSpec]) -> Result<Partition, CliError> {
        regions
            .iter()
            .map(|r| {
                Ok(match r {
                    RegionSpec::States(list) => RegionRule::States(
                        list.iter().map(|s| s.encode(&self.model)).collect::<Result<_, _>>()?,
                    ),
                    RegionSpec::Range { lo, hi } => RegionRule::Range { lo: *lo, hi: *hi },
                    RegionSpec::NoInfectives => RegionRule::NoInfectives,
                    RegionSpec::Infectives => RegionRule::Infectives,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
            .map(Partition::new)
    }

    fn resampler_spec(&self, config: &ResamplerConfig) -> Result<ResamplerSpec, CliError> {
        Ok(match config {
            ResamplerConfig::None => ResamplerSpec::None,
            ResamplerConfig::Multinomial => ResamplerSpec::Multinomial,
            ResamplerConfig::Residual => ResamplerSpec::Residual,
            ResamplerConfig::Refill { inner } => ResamplerSpec::refill(self.resampler_spec(inner)?),
            ResamplerConfig::CombineSplit { realloc } => ResamplerSpec::combine_split(*realloc),
            ResamplerConfig::Regional { regions, targets, inner } => {
                ResamplerSpec::regional(self.partition(regions)?, targets.clone(), self.resampler_spec(inner)?)
            }
        })
    }

    pub fn sampler(&self) -> Result<Sampler, CliError> {
        let resampler = self.resampler_spec(&self.resampler)?;
        let sampler = Sampler::new(
            self.model.clone(),
            self.schedule,
            resampler,
            self.particles,
            self.initial_distribution()?,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(match &self.trace_regions {
            Some(regions) => sampler.with_trace_partition(self.partition(regions)?),
            None => sampler,
        })
    }

    /// Copy of the config with the swept parameter set to `value`.
    pub fn with_parameter(&self, parameter: SweepParameter, value: f64) -> Result<Self, CliError> {
        let mut out = self.clone();
        match parameter {
            SweepParameter::Lambda | SweepParameter::TMax => {
                let ScheduleMode::Dynamic { trigger_fraction, t_max } = &mut out.schedule.mode else {
                    return Err(CliError::Config(
                        "lambda and t_max sweeps need a dynamic schedule".into(),
                    ));
                };
                if parameter == SweepParameter::Lambda {
                    *trigger_fraction = value;
                } else {
                    *t_max = Some(value);
                }
            }
            SweepParameter::Beta => match &mut out.model {
                ModelSpec::TransientImmunity { infection_rate, .. } => *infection_rate = value,
                ModelSpec::LinearBirthDeath { birth_rate, .. } => *birth_rate = value,
                _ => {
                    return Err(CliError::Config(
                        "beta sweeps need a transient immunity or birth-death model".into(),
                    ))
                }
            },
        }
        out.sweep = None;
        out.validate()?;
        Ok(out)
    }
}

//! Sequential Monte Carlo sampling of limiting conditional distributions
//! (quasi-stationary laws) of absorbing Markov processes.
//!
//! A [`engine::Sampler`] evolves a weighted particle [`ensemble::Ensemble`]
//! under a [`models::ModelSpec`], resampling on a deterministic or
//! event-driven schedule with one of the schemes in [`resampling`].
//! The [`oracle`] module computes exact references for validation.

pub mod analysis;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod models;
pub mod oracle;
pub mod resampling;

pub use analysis::{alpha_trace, cumulative_mean_trace, decay_estimate, tv_distance, AlphaTrace, Distribution};
pub use engine::{collect_samples, RunLog, Sampler, Schedule, ScheduleMode};
pub use ensemble::{check_proper, Ensemble, InitialDistribution, Partition, Particle, RegionRule};
pub use error::{QsdError, Result};
pub use models::{ModelSpec, State, StateCode, TimeKind};
pub use oracle::{lcd_uniformization, pure_death_lcd, wf_lcd_power_iteration, OracleResult, UniformizationOptions};
pub use resampling::{Reallocation, ResamplerSpec};

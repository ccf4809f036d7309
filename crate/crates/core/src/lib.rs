//! Mixed-population bounded-confidence opinion dynamics with highly
//! self-involved (HSI) agents, plus an experiment harness for trajectories,
//! phase maps and final-state pattern maps.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the command-line tool uses.

pub mod cli;
pub mod config;
pub mod engine;
pub mod experiment;
pub mod indicators;
pub mod io;
pub mod model;
pub mod scalar;

pub use scalar::Scalar;

pub type Attitude = model::Attitude<f64>;
pub type Agent = model::Agent<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type PopulationState = engine::PopulationState<f64>;
pub type RunConfig = engine::RunConfig<f64>;
pub type TrajectoryRecord = engine::TrajectoryRecord<f64>;
pub type Snapshot = engine::Snapshot<f64>;
pub type IndicatorConfig = indicators::IndicatorConfig<f64>;
pub type IndicatorReport = indicators::IndicatorReport<f64>;
pub type Cluster = indicators::Cluster<f64>;
pub type ExperimentPlan = experiment::ExperimentPlan<f64>;
pub type PatternCell = experiment::PatternCell<f64>;

//! Grid experiments over `(u_m, u_s, h, boundedness)` with replicates,
//! aggregated into pattern cells and phase maps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run_with, EngineError, RunConfig};
use crate::indicators::{classify_pattern, IndicatorReport, PatternCode};
use crate::model::{Dimension, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("cannot build a pool of {0} worker threads: {1}")]
    Pool(usize, String),
    #[error("ragged grid: {0}")]
    Ragged(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Boundedness {
    Bounded,
    Unbounded,
}

impl Boundedness {
    pub fn is_bounded(self) -> bool {
        matches!(self, Boundedness::Bounded)
    }

    pub fn name(self) -> &'static str {
        match self {
            Boundedness::Bounded => "bounded",
            Boundedness::Unbounded => "unbounded",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "bounded" => Some(Boundedness::Bounded),
            "unbounded" => Some(Boundedness::Unbounded),
            _ => None,
        }
    }
}

/// Size presets for grid experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// 10 000 agents, 10 replicates.
    Paper,
    /// 1 000 agents, 5 replicates.
    Desk,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan<S> {
    pub u_m_values: Vec<S>,
    pub u_s_values: Vec<S>,
    pub h_values: Vec<S>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Thresholds, h, boundedness and seed are overwritten per run.
    pub run_config_template: RunConfig<S>,
    pub boundedness_cases: Vec<Boundedness>,
}

/// `{start, start + step, ...}` up to `stop` inclusive, each value rounded to
/// nine decimals so that e.g. the 0.05 grid holds exact decimal literals.
pub fn grid_values<S: Scalar>(start: f64, stop: f64, step: f64) -> Vec<S> {
    if step.is_nan() || step <= 0.0 || stop < start {
        return Vec::new();
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| S::lit(((start + k as f64 * step) * 1e9).round() / 1e9))
        .collect()
}

/// The full design: thresholds 0.05..=1.00 by 0.05 on both dimensions,
/// h = 0.1, 10 replicates of 10 000 agents, mu = 0.5, both boundedness cases,
/// 100 000 sweeps per run.
pub fn build_default_plan<S: Scalar>() -> ExperimentPlan<S> {
    let grid = grid_values::<S>(0.05, 1.0, 0.05);
    let params = ModelParams::with_thresholds(S::lit(0.5), S::lit(0.5));
    ExperimentPlan {
        u_m_values: grid.clone(),
        u_s_values: grid,
        h_values: vec![S::lit(0.1)],
        replicates: 10,
        base_seed: 0,
        run_config_template: RunConfig::new(params, 100_000, 100_000),
        boundedness_cases: vec![Boundedness::Bounded, Boundedness::Unbounded],
    }
}

impl<S: Scalar> ExperimentPlan<S> {
    pub fn scaled(mut self, scale: Scale) -> Self {
        let (n, replicates) = match scale {
            Scale::Paper => (10_000, 10),
            Scale::Desk => (1_000, 5),
        };
        self.run_config_template.params.n_agents = n;
        self.replicates = replicates;
        self
    }

    pub fn n_cells(&self) -> usize {
        self.u_m_values.len()
            * self.u_s_values.len()
            * self.h_values.len()
            * self.boundedness_cases.len()
    }

    pub fn run_count(&self) -> usize {
        self.n_cells() * self.replicates
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let positive = |name: &str, values: &[S]| {
            if values.is_empty() {
                return Err(ExperimentError::Plan(format!("{name} is empty")));
            }
            match values.iter().find(|v| !(v.is_finite() && **v > S::zero())) {
                Some(v) => Err(ExperimentError::Plan(format!("{name} holds {v}, values must be > 0"))),
                None => Ok(()),
            }
        };
        positive("u_m_values", &self.u_m_values)?;
        positive("u_s_values", &self.u_s_values)?;
        if self.h_values.is_empty() {
            return Err(ExperimentError::Plan("h_values is empty".into()));
        }
        if self.replicates == 0 {
            return Err(ExperimentError::Plan("replicates must be >= 1".into()));
        }
        if self.boundedness_cases.is_empty() {
            return Err(ExperimentError::Plan("boundedness_cases is empty".into()));
        }
        Ok(())
    }

    /// Cell coordinates in aggregation order.
    pub fn cells(&self) -> Vec<CellKey<S>> {
        let mut out = Vec::with_capacity(self.n_cells());
        for &boundedness in &self.boundedness_cases {
            for (h_index, &h) in self.h_values.iter().enumerate() {
                for (u_s_index, &u_s) in self.u_s_values.iter().enumerate() {
                    for (u_m_index, &u_m) in self.u_m_values.iter().enumerate() {
                        out.push(CellKey {
                            u_m,
                            u_s,
                            h,
                            boundedness,
                            u_m_index,
                            u_s_index,
                            h_index,
                        });
                    }
                }
            }
        }
        out
    }

    /// Run configuration for one replicate of one cell.
    pub fn replicate_config(&self, cell: &CellKey<S>, replicate: usize) -> RunConfig<S> {
        let mut config = self.run_config_template.clone();
        config.params.u_m = cell.u_m;
        config.params.u_s = cell.u_s;
        config.params.h = cell.h;
        config.params.bounded = cell.boundedness.is_bounded();
        config.params.seed = derive_seed(
            self.base_seed,
            &[
                cell.u_m.as_f64().to_bits(),
                cell.u_s.as_f64().to_bits(),
                cell.h.as_f64().to_bits(),
                replicate as u64,
                u64::from(cell.boundedness.is_bounded()),
            ],
        );
        config
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed from a base seed and a list of coordinates, folded through
/// SplitMix64. Cells are keyed by the bit patterns of their parameter values,
/// so extending a plan leaves existing cells' seeds untouched.
pub fn derive_seed(base_seed: u64, coordinates: &[u64]) -> u64 {
    coordinates
        .iter()
        .fold(splitmix64(base_seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellKey<S> {
    pub u_m: S,
    pub u_s: S,
    pub h: S,
    pub boundedness: Boundedness,
    pub u_m_index: usize,
    pub u_s_index: usize,
    pub h_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateResult<S> {
    pub replicate: usize,
    pub seed: u64,
    pub final_sweep: u64,
    pub report: IndicatorReport<S>,
    pub pattern_main: PatternCode,
    pub pattern_secondary: PatternCode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternCell<S> {
    pub key: CellKey<S>,
    pub per_replicate: Vec<ReplicateResult<S>>,
    pub mean_avg_abs: (S, S),
    /// Sample standard deviation across replicates (zero for one replicate).
    pub std_avg_abs: (S, S),
    pub mean_n_major: S,
    pub majority_pattern: (PatternCode, PatternCode),
}

/// A run that failed; its whole cell is voided.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure<S> {
    pub key: CellKey<S>,
    pub replicate: usize,
    pub error: EngineError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome<S> {
    pub cells: Vec<PatternCell<S>>,
    pub failures: Vec<CellFailure<S>>,
}

/// Code reached by at least `ceil(replicates / 2)` replicates, otherwise
/// [`PatternCode::Unclassified`]. A 50/50 split goes to the smaller code.
pub fn majority(codes: &[PatternCode], replicates: usize) -> PatternCode {
    let needed = replicates.div_ceil(2).max(1);
    let mut counts: BTreeMap<PatternCode, usize> = BTreeMap::new();
    for &c in codes {
        *counts.entry(c).or_default() += 1;
    }
    counts
        .into_iter()
        .filter(|&(_, n)| n >= needed)
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(PatternCode::Unclassified, |(c, _)| c)
}

fn mean_std<S: Scalar>(values: impl Iterator<Item = S> + Clone) -> (S, S) {
    let n = values.clone().count();
    if n == 0 {
        return (S::nan(), S::nan());
    }
    let count = S::from_usize(n).expect("replicate count representable");
    let mean = values.clone().fold(S::zero(), |a, v| a + v) / count;
    if n == 1 {
        return (mean, S::zero());
    }
    let ss = values.fold(S::zero(), |a, v| a + (v - mean) * (v - mean));
    let denom = S::from_usize(n - 1).expect("replicate count representable");
    (mean, (ss / denom).sqrt())
}

fn aggregate<S: Scalar>(
    key: CellKey<S>,
    per_replicate: Vec<ReplicateResult<S>>,
    replicates: usize,
) -> PatternCell<S> {
    let main = mean_std(per_replicate.iter().map(|r| r.report.avg_abs_main));
    let secondary = mean_std(per_replicate.iter().map(|r| r.report.avg_abs_secondary));
    let n_major = mean_std(
        per_replicate
            .iter()
            .map(|r| S::from_usize(r.report.n_major).expect("cluster count representable")),
    );
    let codes_main: Vec<PatternCode> = per_replicate.iter().map(|r| r.pattern_main).collect();
    let codes_secondary: Vec<PatternCode> =
        per_replicate.iter().map(|r| r.pattern_secondary).collect();
    PatternCell {
        key,
        mean_avg_abs: (main.0, secondary.0),
        std_avg_abs: (main.1, secondary.1),
        mean_n_major: n_major.0,
        majority_pattern: (
            majority(&codes_main, replicates),
            majority(&codes_secondary, replicates),
        ),
        per_replicate,
    }
}

/// Runs one replicate to its final state and classifies it.
pub fn run_replicate<S: Scalar>(
    config: &RunConfig<S>,
    replicate: usize,
) -> Result<ReplicateResult<S>, EngineError> {
    let mut last: Option<IndicatorReport<S>> = None;
    let summary = run_with(config, |_, report, _| last = Some(report.clone()))?;
    let report = last.expect("run records its final state");
    let t = &config.indicators.thresholds;
    Ok(ReplicateResult {
        replicate,
        seed: config.params.seed,
        final_sweep: summary.final_state.sweep,
        pattern_main: classify_pattern(&report, Dimension::Main, t),
        pattern_secondary: classify_pattern(&report, Dimension::Secondary, t),
        report,
    })
}

/// Executes every `(cell, replicate)` run on `parallelism` worker threads.
///
/// Results are gathered in plan order, so the outcome does not depend on the
/// thread count or on completion order. A failing replicate voids its cell,
/// which is then reported in `failures` instead of `cells`.
pub fn execute_plan<S: Scalar>(
    plan: &ExperimentPlan<S>,
    parallelism: usize,
) -> Result<SweepOutcome<S>, ExperimentError> {
    plan.validate()?;
    let threads = parallelism.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Pool(threads, e.to_string()))?;
    let cells = plan.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<Result<ReplicateResult<S>, EngineError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, r)| run_replicate(&plan.replicate_config(&cells[c], r), r))
            .collect()
    });

    let mut outcome = SweepOutcome {
        cells: Vec::new(),
        failures: Vec::new(),
    };
    let mut results = results.into_iter();
    for key in cells {
        let mut per_replicate = Vec::with_capacity(plan.replicates);
        let mut failed = false;
        for replicate in 0..plan.replicates {
            match results.next().expect("one result per job") {
                Ok(r) => per_replicate.push(r),
                Err(error) => {
                    failed = true;
                    outcome.failures.push(CellFailure {
                        key,
                        replicate,
                        error,
                    });
                }
            }
        }
        if !failed {
            outcome.cells.push(aggregate(key, per_replicate, plan.replicates));
        }
    }
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapQuantity {
    MeanAvgAbsMain,
    MeanAvgAbsSecondary,
    MajorityPatternMain,
    MajorityPatternSecondary,
    NMajorClusters,
}

impl MapQuantity {
    pub const ALL: [MapQuantity; 5] = [
        MapQuantity::MeanAvgAbsMain,
        MapQuantity::MeanAvgAbsSecondary,
        MapQuantity::MajorityPatternMain,
        MapQuantity::MajorityPatternSecondary,
        MapQuantity::NMajorClusters,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MapQuantity::MeanAvgAbsMain => "mean_avg_abs_main",
            MapQuantity::MeanAvgAbsSecondary => "mean_avg_abs_secondary",
            MapQuantity::MajorityPatternMain => "majority_pattern_main",
            MapQuantity::MajorityPatternSecondary => "majority_pattern_secondary",
            MapQuantity::NMajorClusters => "n_major_clusters",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|q| q.name() == name)
    }

    pub fn value<S: Scalar>(self, cell: &PatternCell<S>) -> f64 {
        match self {
            MapQuantity::MeanAvgAbsMain => cell.mean_avg_abs.0.as_f64(),
            MapQuantity::MeanAvgAbsSecondary => cell.mean_avg_abs.1.as_f64(),
            MapQuantity::MajorityPatternMain => f64::from(cell.majority_pattern.0.code()),
            MapQuantity::MajorityPatternSecondary => f64::from(cell.majority_pattern.1.code()),
            MapQuantity::NMajorClusters => cell.mean_n_major.as_f64(),
        }
    }
}

/// Dense `(u_m, u_s)` table for one `h` and one boundedness case.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMap {
    pub quantity: MapQuantity,
    pub h: f64,
    pub boundedness: Boundedness,
    pub u_m_axis: Vec<f64>,
    pub u_s_axis: Vec<f64>,
    /// Row-major over `u_s` rows and `u_m` columns; `None` marks a missing
    /// cell.
    pub values: Vec<Option<f64>>,
}

impl PhaseMap {
    pub fn get(&self, u_m_index: usize, u_s_index: usize) -> Option<f64> {
        self.values[u_s_index * self.u_m_axis.len() + u_m_index]
    }

    pub fn missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

fn axis_position(axis: &[f64], value: f64) -> Option<usize> {
    axis.iter().position(|&a| a.to_bits() == value.to_bits())
}

/// Map over explicit axes. Cells off the axes, duplicated cells, or cells
/// from a different `h` or boundedness case are rejected; grid points
/// without a cell are kept as missing.
pub fn emit_phase_map_on_axes<S: Scalar>(
    cells: &[&PatternCell<S>],
    quantity: MapQuantity,
    u_m_axis: &[f64],
    u_s_axis: &[f64],
) -> Result<PhaseMap, ExperimentError> {
    let first = cells
        .first()
        .ok_or_else(|| ExperimentError::Ragged("no cells".into()))?;
    let (h, boundedness) = (first.key.h.as_f64(), first.key.boundedness);
    let mut values = vec![None; u_m_axis.len() * u_s_axis.len()];
    for cell in cells {
        if cell.key.h.as_f64().to_bits() != h.to_bits() || cell.key.boundedness != boundedness {
            return Err(ExperimentError::Ragged(
                "cells mix several h values or boundedness cases".into(),
            ));
        }
        let (u_m, u_s) = (cell.key.u_m.as_f64(), cell.key.u_s.as_f64());
        let (Some(i), Some(j)) = (axis_position(u_m_axis, u_m), axis_position(u_s_axis, u_s)) else {
            return Err(ExperimentError::Ragged(format!(
                "cell (u_m={u_m}, u_s={u_s}) is off the grid axes"
            )));
        };
        let slot = &mut values[j * u_m_axis.len() + i];
        if slot.is_some() {
            return Err(ExperimentError::Ragged(format!(
                "duplicate cell (u_m={u_m}, u_s={u_s})"
            )));
        }
        *slot = Some(quantity.value(cell));
    }
    Ok(PhaseMap {
        quantity,
        h,
        boundedness,
        u_m_axis: u_m_axis.to_vec(),
        u_s_axis: u_s_axis.to_vec(),
        values,
    })
}

/// Map whose axes are the distinct `u_m` and `u_s` values of the cells.
pub fn emit_phase_map<S: Scalar>(
    cells: &[&PatternCell<S>],
    quantity: MapQuantity,
) -> Result<PhaseMap, ExperimentError> {
    let axis = |f: fn(&CellKey<S>) -> S| {
        let mut v: Vec<f64> = cells.iter().map(|c| f(&c.key).as_f64()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup_by(|a, b| a.to_bits() == b.to_bits());
        v
    };
    let u_m_axis = axis(|k| k.u_m);
    let u_s_axis = axis(|k| k.u_s);
    emit_phase_map_on_axes(cells, quantity, &u_m_axis, &u_s_axis)
}

/// All maps of a sweep, one per `(h, boundedness, quantity)`, on the plan's
/// axes. Voided cells appear as missing entries.
pub fn emit_all_phase_maps<S: Scalar>(
    plan: &ExperimentPlan<S>,
    outcome: &SweepOutcome<S>,
) -> Result<Vec<PhaseMap>, ExperimentError> {
    let u_m_axis: Vec<f64> = plan.u_m_values.iter().map(|v| v.as_f64()).collect();
    let u_s_axis: Vec<f64> = plan.u_s_values.iter().map(|v| v.as_f64()).collect();
    let mut maps = Vec::new();
    for &boundedness in &plan.boundedness_cases {
        for h_index in 0..plan.h_values.len() {
            let slice: Vec<&PatternCell<S>> = outcome
                .cells
                .iter()
                .filter(|c| c.key.boundedness == boundedness && c.key.h_index == h_index)
                .collect();
            for quantity in MapQuantity::ALL {
                let map = if slice.is_empty() {
                    PhaseMap {
                        quantity,
                        h: plan.h_values[h_index].as_f64(),
                        boundedness,
                        u_m_axis: u_m_axis.clone(),
                        u_s_axis: u_s_axis.clone(),
                        values: vec![None; u_m_axis.len() * u_s_axis.len()],
                    }
                } else {
                    emit_phase_map_on_axes(&slice, quantity, &u_m_axis, &u_s_axis)?
                };
                maps.push(map);
            }
        }
    }
    Ok(maps)
}

//! Single-run simulation: initialization, pair scheduling, time bookkeeping
//! and trajectory capture.
//!
//! Time is counted in sweeps, one sweep being `N` pair draws.
//!
//! Random stream consumption is fixed so that any implementation driving the
//! same generator reproduces a run bit for bit:
//!
//! 1. initialization draws, for each agent in index order, `main` then
//!    `secondary`, each as `2u - 1` with `u = (next_u64 >> 11) * 2^-53`;
//! 2. every interaction draws index `i`, then index `j` (redrawn while
//!    `j == i`), each by Lemire's widening multiply with rejection on a
//!    fresh `next_u64`;
//! 3. then X's tie-break sign if and only if X's tie branch fires, then Y's;
//!    a sign is the top bit of `next_u64` (1 = plus).

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::indicators::{IndicatorConfig, IndicatorReport};
use crate::model::{clamp, influence, Agent, Attitude, Involvement, ModelParams, ParamError, Sign};
use crate::scalar::Scalar;

/// Declared generator family, written into every output file header.
pub const GENERATOR_FAMILY: &str = "chacha8/rand_chacha-0.3/seed_from_u64;stream-v1";

/// Seeded random stream owned by exactly one run.
#[derive(Clone, Debug)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`, `n > 0`.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        let n = n as u64;
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
            }
        }
        (m >> 64) as usize
    }

    #[inline]
    pub fn sign(&mut self) -> Sign {
        if self.next_u64() >> 63 == 1 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState<S> {
    pub agents: Vec<Agent<S>>,
    pub sweep: u64,
    pub pair_draws: u64,
}

impl<S: Scalar> PopulationState<S> {
    pub fn attitudes(&self) -> impl Iterator<Item = Attitude<S>> + '_ {
        self.agents.iter().map(|a| a.attitude)
    }

    pub fn hsi_count(&self) -> usize {
        self.agents.iter().filter(|a| a.involvement.is_hsi()).count()
    }
}

/// Draws `N` uniform attitudes in [-1, +1]^2 and flags the first
/// `round(h * N)` agents as HSI.
pub fn init_population<S: Scalar>(
    params: &ModelParams<S>,
    rng: &mut StreamRng,
) -> Result<PopulationState<S>, EngineError> {
    params.validate()?;
    let n_hsi = params.hsi_count();
    let agents = (0..params.n_agents)
        .map(|idx| {
            let main = S::lit(2.0 * rng.unit() - 1.0);
            let secondary = S::lit(2.0 * rng.unit() - 1.0);
            Agent {
                attitude: Attitude { main, secondary },
                involvement: if idx < n_hsi {
                    Involvement::Hsi
                } else {
                    Involvement::NonHsi
                },
            }
        })
        .collect();
    Ok(PopulationState {
        agents,
        sweep: 0,
        pair_draws: 0,
    })
}

/// Updates one agent pair `(i, j)` simultaneously from their pre-update
/// attitudes. Returns the largest coordinate displacement.
#[inline]
pub fn update_pair<S: Scalar>(
    agents: &mut [Agent<S>],
    i: usize,
    j: usize,
    params: &ModelParams<S>,
    rng: &mut StreamRng,
) -> S {
    let (x, y) = (agents[i], agents[j]);
    let x_new = clamp(
        influence(x.involvement, x.attitude, y.attitude, params, || rng.sign()),
        params,
    );
    let y_new = clamp(
        influence(y.involvement, y.attitude, x.attitude, params, || rng.sign()),
        params,
    );
    agents[i].attitude = x_new;
    agents[j].attitude = y_new;
    let d = |a: Attitude<S>, b: Attitude<S>| {
        (a.main - b.main).abs().max((a.secondary - b.secondary).abs())
    };
    d(x.attitude, x_new).max(d(y.attitude, y_new))
}

/// One random meeting. Returns the largest coordinate displacement.
#[inline]
pub fn interaction_step<S: Scalar>(
    state: &mut PopulationState<S>,
    params: &ModelParams<S>,
    rng: &mut StreamRng,
) -> S {
    let n = state.agents.len();
    let i = rng.index(n);
    let mut j = rng.index(n);
    while j == i {
        j = rng.index(n);
    }
    state.pair_draws += 1;
    update_pair(&mut state.agents, i, j, params, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig<S> {
    pub params: ModelParams<S>,
    pub max_sweeps: u64,
    pub snapshot_every: u64,
    /// Early stop when no coordinate moved more than this within a single
    /// update over the trailing window. Zero disables early stopping.
    pub convergence_eps: S,
    pub convergence_window: u64,
    pub indicators: IndicatorConfig<S>,
}

impl<S: Scalar> RunConfig<S> {
    pub fn new(params: ModelParams<S>, max_sweeps: u64, snapshot_every: u64) -> Self {
        Self {
            params,
            max_sweeps,
            snapshot_every,
            convergence_eps: S::zero(),
            convergence_window: 100,
            indicators: IndicatorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.params.validate()?;
        if self.max_sweeps == 0 {
            return Err(EngineError::Config("max_sweeps must be positive".into()));
        }
        if self.snapshot_every == 0 || self.snapshot_every > self.max_sweeps {
            return Err(EngineError::Config(format!(
                "snapshot_every must lie in [1, max_sweeps = {}] (got {})",
                self.max_sweeps, self.snapshot_every
            )));
        }
        if !(self.convergence_eps.is_finite() && self.convergence_eps >= S::zero()) {
            return Err(EngineError::Config("convergence_eps must be >= 0".into()));
        }
        if self.convergence_window == 0 {
            return Err(EngineError::Config("convergence_window must be positive".into()));
        }
        self.indicators
            .validate()
            .map_err(|e| EngineError::Config(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord<S> {
    pub sweep: u64,
    pub avg_abs_main: S,
    pub avg_abs_secondary: S,
    /// Number of major clusters.
    pub n_clusters: usize,
    pub max_cluster_share: S,
}

impl<S: Scalar> TrajectoryRecord<S> {
    pub fn from_report(sweep: u64, report: &IndicatorReport<S>) -> Self {
        Self {
            sweep,
            avg_abs_main: report.avg_abs_main,
            avg_abs_secondary: report.avg_abs_secondary,
            n_clusters: report.n_major,
            max_cluster_share: report.max_cluster_share,
        }
    }
}

/// A seeded simulation that can be advanced sweep by sweep.
#[derive(Clone, Debug)]
pub struct Simulation<S> {
    params: ModelParams<S>,
    state: PopulationState<S>,
    rng: StreamRng,
}

impl<S: Scalar> Simulation<S> {
    pub fn new(params: ModelParams<S>) -> Result<Self, EngineError> {
        let mut rng = StreamRng::new(params.seed);
        let state = init_population(&params, &mut rng)?;
        Ok(Self { params, state, rng })
    }

    pub fn params(&self) -> &ModelParams<S> {
        &self.params
    }

    pub fn state(&self) -> &PopulationState<S> {
        &self.state
    }

    pub fn into_state(self) -> PopulationState<S> {
        self.state
    }

    pub fn step(&mut self) -> S {
        interaction_step(&mut self.state, &self.params, &mut self.rng)
    }

    /// Runs `N` pair draws and returns the largest single-update displacement.
    pub fn sweep(&mut self) -> S {
        let mut moved = S::zero();
        for _ in 0..self.state.agents.len() {
            moved = moved.max(self.step());
        }
        self.state.sweep += 1;
        moved
    }
}

/// Result of a run whose snapshots were handed to an observer.
#[derive(Clone, Debug)]
pub struct RunSummary<S> {
    pub final_state: PopulationState<S>,
    pub trajectory: Vec<TrajectoryRecord<S>>,
    pub stopped_early: bool,
}

/// Full per-agent state at one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<S> {
    pub sweep: u64,
    pub agents: Vec<Agent<S>>,
}

#[derive(Clone, Debug)]
pub struct RunOutput<S> {
    pub final_state: PopulationState<S>,
    pub trajectory: Vec<TrajectoryRecord<S>>,
    pub snapshots: Vec<Snapshot<S>>,
    pub stopped_early: bool,
}

/// Runs a simulation, calling `observe` at sweep 0, every `snapshot_every`
/// sweeps, and on the final state when it falls off the cadence.
pub fn run_with<S, F>(config: &RunConfig<S>, mut observe: F) -> Result<RunSummary<S>, EngineError>
where
    S: Scalar,
    F: FnMut(&PopulationState<S>, &IndicatorReport<S>, &TrajectoryRecord<S>),
{
    config.validate()?;
    let mut sim = Simulation::new(config.params.clone())?;
    let mut trajectory = Vec::new();
    let mut record = |state: &PopulationState<S>, trajectory: &mut Vec<TrajectoryRecord<S>>| {
        let report = IndicatorReport::compute(&state.agents, &config.params, &config.indicators)
            .expect("indicator config validated");
        let rec = TrajectoryRecord::from_report(state.sweep, &report);
        observe(state, &report, &rec);
        trajectory.push(rec);
    };
    record(sim.state(), &mut trajectory);

    let window = config.convergence_window as usize;
    let mut quiet_sweeps = 0usize;
    let mut stopped_early = false;
    while sim.state().sweep < config.max_sweeps {
        let moved = sim.sweep();
        if config.convergence_eps > S::zero() {
            if moved <= config.convergence_eps {
                quiet_sweeps += 1;
            } else {
                quiet_sweeps = 0;
            }
            if quiet_sweeps >= window {
                stopped_early = true;
            }
        }
        if stopped_early || sim.state().sweep % config.snapshot_every == 0 {
            record(sim.state(), &mut trajectory);
        }
        if stopped_early {
            break;
        }
    }
    if trajectory.last().map(|r| r.sweep) != Some(sim.state().sweep) {
        record(sim.state(), &mut trajectory);
    }
    Ok(RunSummary {
        final_state: sim.into_state(),
        trajectory,
        stopped_early,
    })
}

/// Runs a simulation and keeps every captured snapshot in memory.
pub fn run<S: Scalar>(config: &RunConfig<S>) -> Result<RunOutput<S>, EngineError> {
    let mut snapshots = Vec::new();
    let summary = run_with(config, |state, _, _| {
        snapshots.push(Snapshot {
            sweep: state.sweep,
            agents: state.agents.clone(),
        })
    })?;
    Ok(RunOutput {
        final_state: summary.final_state,
        trajectory: summary.trajectory,
        snapshots,
        stopped_early: summary.stopped_early,
    })
}

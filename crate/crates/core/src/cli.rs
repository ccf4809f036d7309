//! Command-line surface: `run`, `sweep`, `classify` and `export-density`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{parse_config, ConfigDocument, ConfigError};
use crate::engine::{run_with, EngineError, RunConfig};
use crate::experiment::{
    build_default_plan, emit_all_phase_maps, execute_plan, Boundedness, ExperimentError,
    ExperimentPlan, Scale,
};
use crate::indicators::{
    classify_pattern, density_histogram, Bounds, IndicatorConfig, IndicatorError, IndicatorReport,
};
use crate::io::{
    classification_provenance, indicator_provenance, parse_snapshot, read_file, snapshot_bytes,
    write_cells, write_classification, write_density_grid, write_file, write_histogram,
    write_phase_map_long, write_phase_map_matrix, write_replicates, write_timeseries,
    ClassificationRow, IoError, Provenance, SnapshotFile,
};
use crate::model::Dimension;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Config { path: PathBuf, source: ConfigError },
    #[error(transparent)]
    ConfigValue(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },
    #[error("{0} sweep cell(s) failed")]
    FailedCells(usize),
}

#[derive(Debug, Parser)]
#[command(name = "hsibc", version, about = "Bounded-confidence dynamics with highly self-involved agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and write its time series, snapshots and
    /// classifications.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Leave both coordinates unconfined.
        #[arg(long)]
        unbounded: bool,
        #[arg(long)]
        max_sweeps: Option<u64>,
        #[arg(long)]
        snapshot_every: Option<u64>,
        #[arg(long)]
        cluster_epsilon: Option<f64>,
    },
    /// Execute a grid experiment and write cells and phase maps.
    Sweep {
        /// `default` or a configuration file with grid keys.
        #[arg(long, default_value = "default")]
        plan: String,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        #[arg(long)]
        out: PathBuf,
        /// Base seed of the plan.
        #[arg(long)]
        seed: Option<u64>,
        /// Only run the unconfined case.
        #[arg(long)]
        unbounded: bool,
        #[arg(long)]
        max_sweeps: Option<u64>,
        #[arg(long)]
        cluster_epsilon: Option<f64>,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Recompute indicators and pattern codes from stored snapshots.
    Classify {
        /// A snapshot file, a directory of snapshots, or a run directory.
        #[arg(long)]
        snapshots: PathBuf,
        /// Configuration supplying indicator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cluster_epsilon: Option<f64>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histograms and the joint density grid of one snapshot.
    ExportDensity {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Range `lo:hi` for both dimensions.
        #[arg(long, default_value = "-1:1")]
        range: String,
    },
}

/// Entry point; returns the process exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            unbounded,
            max_sweeps,
            snapshot_every,
            cluster_epsilon,
        } => {
            let mut doc = load_config(&config)?;
            let mut overrides = vec![];
            if let Some(s) = seed {
                overrides.push(("seed", s.to_string()));
            }
            if unbounded {
                overrides.push(("bounded", "false".to_string()));
            }
            if let Some(m) = max_sweeps {
                overrides.push(("max_sweeps", m.to_string()));
            }
            if let Some(s) = snapshot_every {
                overrides.push(("snapshot_every", s.to_string()));
            }
            if let Some(e) = cluster_epsilon {
                overrides.push(("cluster_epsilon", e.to_string()));
            }
            apply(&mut doc, &overrides)?;
            run_command(&doc, &out)
        }
        Command::Sweep {
            plan,
            scale,
            out,
            seed,
            unbounded,
            max_sweeps,
            cluster_epsilon,
            parallelism,
        } => {
            let (mut doc, mut experiment) = if plan == "default" {
                (ConfigDocument::default(), build_default_plan::<f64>())
            } else {
                let doc = load_config(Path::new(&plan))?;
                let experiment = doc.plan();
                (doc, experiment)
            };
            let scale = match (scale, plan == "default") {
                (Some(ScaleArg::Desk), _) => Some(Scale::Desk),
                (Some(ScaleArg::Paper), _) | (None, true) => Some(Scale::Paper),
                (None, false) => None,
            };
            if let Some(scale) = scale {
                experiment = experiment.scaled(scale);
            }
            if let Some(s) = seed {
                experiment.base_seed = s;
            }
            if unbounded {
                experiment.boundedness_cases = vec![Boundedness::Unbounded];
            }
            if let Some(m) = max_sweeps {
                experiment.run_config_template.max_sweeps = m;
                experiment.run_config_template.snapshot_every = m;
            }
            if let Some(e) = cluster_epsilon {
                experiment.run_config_template.indicators.cluster_epsilon = e;
            }
            sync_plan(&mut doc, &experiment)?;
            let threads = parallelism.unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
            sweep_command(&doc, &experiment, threads, &out)
        }
        Command::Classify {
            snapshots,
            config,
            cluster_epsilon,
            out,
        } => {
            let mut indicators = match &config {
                Some(path) => load_config(path)?.indicator_config(),
                None => IndicatorConfig::default(),
            };
            if let Some(e) = cluster_epsilon {
                indicators.cluster_epsilon = e;
            }
            indicators.validate()?;
            let text = classify_command(&snapshots, &indicators)?;
            match out {
                Some(path) => write_file(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::ExportDensity {
            snapshot,
            out,
            bins,
            range,
        } => export_density(&snapshot, &out, bins, &range),
    }
}

fn load_config(path: &Path) -> Result<ConfigDocument, CliError> {
    parse_config(&read_file(path)?).map_err(|source| CliError::Config {
        path: path.to_path_buf(),
        source,
    })
}

fn apply(doc: &mut ConfigDocument, overrides: &[(&str, String)]) -> Result<(), CliError> {
    for (k, v) in overrides {
        doc.set(k, v)?;
    }
    doc.validate()?;
    Ok(())
}

/// Mirrors the effective plan into the document so that its text form
/// regenerates the sweep.
fn sync_plan(doc: &mut ConfigDocument, plan: &ExperimentPlan<f64>) -> Result<(), CliError> {
    let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
    let t = &plan.run_config_template;
    let cases = plan
        .boundedness_cases
        .iter()
        .map(|b| b.name())
        .collect::<Vec<_>>()
        .join(" ");
    let pairs = [
        ("n_agents", t.params.n_agents.to_string()),
        ("replicates", plan.replicates.to_string()),
        ("base_seed", plan.base_seed.to_string()),
        ("max_sweeps", t.max_sweeps.to_string()),
        ("snapshot_every", t.snapshot_every.to_string()),
        ("cluster_epsilon", t.indicators.cluster_epsilon.to_string()),
        ("u_m_values", list(&plan.u_m_values)),
        ("u_s_values", list(&plan.u_s_values)),
        ("h_values", list(&plan.h_values)),
        ("boundedness_cases", cases),
    ];
    for (k, v) in pairs {
        if doc.value_of(k).as_deref() != Some(v.as_str()) {
            doc.set(k, &v)?;
        }
    }
    doc.validate()?;
    Ok(())
}

fn classification_row(sweep: u64, report: &IndicatorReport<f64>, indicators: &IndicatorConfig<f64>) -> ClassificationRow {
    ClassificationRow {
        sweep,
        pattern_main: classify_pattern(report, Dimension::Main, &indicators.thresholds),
        pattern_secondary: classify_pattern(report, Dimension::Secondary, &indicators.thresholds),
        report: report.clone(),
    }
}

fn run_provenance(doc: &ConfigDocument, config: &RunConfig<f64>) -> Provenance {
    let mut p = classification_provenance(&config.params, &config.indicators);
    for key in ["max_sweeps", "snapshot_every", "convergence_eps", "convergence_window"] {
        p.push((key.to_string(), doc.value_of(key).unwrap_or_default()));
    }
    p.push(("defaulted".to_string(), doc.defaulted_keys().join(" ")));
    p
}

fn run_command(doc: &ConfigDocument, out: &Path) -> Result<(), CliError> {
    let config = doc.run_config()?;
    config.validate()?;
    let snapshot_dir = out.join("snapshots");
    let mut rows = Vec::new();
    let mut write_error = None;
    let summary = run_with(&config, |state, report, _| {
        rows.push(classification_row(state.sweep, report, &config.indicators));
        if write_error.is_some() {
            return;
        }
        let snap = SnapshotFile::from_state(state, &config.params, Vec::new());
        let path = snapshot_dir.join(format!("sweep_{:09}.csv", state.sweep));
        if let Err(e) = write_file(&path, &snapshot_bytes(&snap)) {
            write_error = Some(e);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    let provenance = run_provenance(doc, &config);
    write_file(&out.join("config.cfg"), doc.to_text().as_bytes())?;
    let mut buf = Vec::new();
    write_timeseries(&summary.trajectory, &provenance, &mut buf)?;
    write_file(&out.join("timeseries.csv"), &buf)?;
    let mut buf = Vec::new();
    let class_prov = classification_provenance(&config.params, &config.indicators);
    write_classification(&rows, &class_prov, &mut buf)?;
    write_file(&out.join("classification.csv"), &buf)?;
    eprintln!(
        "run finished at sweep {}{}; {} records written to {}",
        summary.final_state.sweep,
        if summary.stopped_early { " (converged)" } else { "" },
        summary.trajectory.len(),
        out.display()
    );
    Ok(())
}

fn sweep_command(
    doc: &ConfigDocument,
    plan: &ExperimentPlan<f64>,
    threads: usize,
    out: &Path,
) -> Result<(), CliError> {
    eprintln!(
        "sweep: {} cells, {} runs on {threads} thread(s)",
        plan.n_cells(),
        plan.run_count()
    );
    let outcome = execute_plan(plan, threads)?;
    let t = &plan.run_config_template;
    let mut provenance: Provenance = vec![
        ("generator".into(), crate::engine::GENERATOR_FAMILY.into()),
        ("n_agents".into(), t.params.n_agents.to_string()),
        ("mu".into(), t.params.mu.to_string()),
        ("max_sweeps".into(), t.max_sweeps.to_string()),
        ("replicates".into(), plan.replicates.to_string()),
        ("base_seed".into(), plan.base_seed.to_string()),
    ];
    provenance.extend(indicator_provenance(&t.indicators));

    write_file(&out.join("plan.cfg"), doc.to_text().as_bytes())?;
    let mut buf = Vec::new();
    write_cells(&outcome.cells, &provenance, &mut buf)?;
    write_file(&out.join("cells.csv"), &buf)?;
    let mut buf = Vec::new();
    write_replicates(&outcome.cells, &provenance, &mut buf)?;
    write_file(&out.join("replicates.csv"), &buf)?;
    for map in emit_all_phase_maps(plan, &outcome)? {
        let stem = format!("{}_{}_h{}", map.quantity.name(), map.boundedness.name(), map.h);
        let mut buf = Vec::new();
        write_phase_map_long(&map, &provenance, &mut buf)?;
        write_file(&out.join("maps").join(format!("{stem}_long.csv")), &buf)?;
        let mut buf = Vec::new();
        write_phase_map_matrix(&map, &provenance, &mut buf)?;
        write_file(&out.join("maps").join(format!("{stem}_matrix.csv")), &buf)?;
    }
    if outcome.failures.is_empty() {
        return Ok(());
    }
    for f in &outcome.failures {
        eprintln!(
            "failed cell {} h={} u_m={} u_s={} replicate {}: {}",
            f.key.boundedness.name(),
            f.key.h,
            f.key.u_m,
            f.key.u_s,
            f.replicate,
            f.error
        );
    }
    let mut voided: Vec<_> = outcome
        .failures
        .iter()
        .map(|f| (f.key.boundedness, f.key.h_index, f.key.u_m_index, f.key.u_s_index))
        .collect();
    voided.dedup();
    Err(CliError::FailedCells(voided.len()))
}

/// Snapshot files under `path`, in name order.
fn snapshot_paths(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let nested = path.join("snapshots");
    let dir = if nested.is_dir() { nested } else { path.to_path_buf() };
    let entries = fs::read_dir(&dir).map_err(|source| IoError::Read {
        path: dir.clone(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input {
            path: dir,
            message: "no snapshot files found".into(),
        });
    }
    Ok(files)
}

fn load_snapshot(path: &Path) -> Result<SnapshotFile, CliError> {
    parse_snapshot(&read_file(path)?).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Classification table of stored snapshots, in the same format `run`
/// writes inline.
pub fn classify_command(
    snapshots: &Path,
    indicators: &IndicatorConfig<f64>,
) -> Result<String, CliError> {
    let mut rows = Vec::new();
    let mut params = None;
    for path in snapshot_paths(snapshots)? {
        let snap = load_snapshot(&path)?;
        match &params {
            None => params = Some(snap.params.clone()),
            Some(p) if *p != snap.params => {
                return Err(CliError::Input {
                    path,
                    message: "snapshot parameters differ from the first snapshot".into(),
                })
            }
            Some(_) => {}
        }
        let report = IndicatorReport::compute(&snap.agents, &snap.params, indicators)?;
        rows.push(classification_row(snap.sweep, &report, indicators));
    }
    rows.sort_by_key(|r| r.sweep);
    let params = params.expect("at least one snapshot");
    let mut buf = Vec::new();
    write_classification(&rows, &classification_provenance(&params, indicators), &mut buf)?;
    Ok(String::from_utf8(buf).expect("writers emit UTF-8"))
}

fn export_density(snapshot: &Path, out: &Path, bins: usize, range: &str) -> Result<(), CliError> {
    let bad_range = || CliError::Input {
        path: PathBuf::from("--range"),
        message: format!("expected `lo:hi`, found `{range}`"),
    };
    let (lo, hi) = range.split_once(':').ok_or_else(bad_range)?;
    let bounds = Bounds {
        lo: lo.trim().parse::<f64>().map_err(|_| bad_range())?,
        hi: hi.trim().parse::<f64>().map_err(|_| bad_range())?,
    };
    let snap = load_snapshot(snapshot)?;
    let hist = density_histogram(&snap.agents, bins, bounds, bounds)?;
    let mut provenance = vec![
        ("sweep".to_string(), snap.sweep.to_string()),
        ("bins".to_string(), bins.to_string()),
    ];
    provenance.extend(crate::io::params_provenance(&snap.params));
    for dim in Dimension::ALL {
        let mut buf = Vec::new();
        write_histogram(&hist, dim, &provenance, &mut buf)?;
        write_file(&out.join(format!("density_{}.csv", dim.name())), &buf)?;
    }
    let mut buf = Vec::new();
    write_density_grid(&hist, &provenance, &mut buf)?;
    write_file(&out.join("density_grid.csv"), &buf)?;
    Ok(())
}

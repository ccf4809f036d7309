//! Delimited text formats for time series, snapshots, classifications,
//! experiment cells and phase maps.
//!
//! Every file starts with `# key=value` provenance lines, the first two being
//! `format` and `format_version`, followed by a comma-separated header row.
//! Reals are written in shortest round-trip decimal form.

use std::fmt::Display;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::engine::{PopulationState, TrajectoryRecord, GENERATOR_FAMILY};
use crate::experiment::{PatternCell, PhaseMap};
use crate::indicators::{DensityHistogram, IndicatorConfig, IndicatorReport, PatternCode};
use crate::model::{Agent, Attitude, Dimension, Involvement, ModelParams};

pub const FORMAT_VERSION: &str = "1";

pub type Provenance = Vec<(String, String)>;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Stream(#[from] io::Error),
    #[error("no records to write")]
    EmptyRecords,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let wrap = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    fs::write(path, bytes).map_err(wrap)
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_preamble<W: Write>(
    w: &mut W,
    format: &str,
    provenance: &[(String, String)],
) -> io::Result<()> {
    writeln!(w, "# format={format}")?;
    writeln!(w, "# format_version={FORMAT_VERSION}")?;
    for (k, v) in provenance {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

fn write_row<W: Write>(w: &mut W, cells: &[&dyn Display]) -> io::Result<()> {
    for (i, c) in cells.iter().enumerate() {
        if i > 0 {
            w.write_all(b",")?;
        }
        write!(w, "{c}")?;
    }
    w.write_all(b"\n")
}

/// Splits a file into its provenance entries (format lines checked and
/// dropped) and its remaining numbered lines, header first.
/// Numbered lines after the preamble.
type Body<'a> = Vec<(usize, &'a str)>;

fn split_preamble<'a>(text: &'a str, format: &str) -> Result<(Provenance, Body<'a>), IoError> {
    let mut provenance = Vec::new();
    let mut body = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if body.is_empty() {
            if let Some(comment) = line.strip_prefix("# ") {
                let (k, v) = comment
                    .split_once('=')
                    .ok_or_else(|| parse_err(n + 1, "provenance line without `=`"))?;
                provenance.push((k.to_string(), v.to_string()));
                continue;
            }
        }
        body.push((n + 1, line));
    }
    let found = |key: &str| provenance.iter().position(|(k, _)| k == key);
    match (found("format"), found("format_version")) {
        (Some(0), Some(1)) if provenance[0].1 == format && provenance[1].1 == FORMAT_VERSION => {}
        _ => {
            return Err(parse_err(
                1,
                format!("expected `format={format}` and `format_version={FORMAT_VERSION}`"),
            ))
        }
    }
    provenance.drain(..2);
    Ok((provenance, body))
}

fn expect_header(body: &[(usize, &str)], header: &str) -> Result<(), IoError> {
    match body.first() {
        Some((_, h)) if *h == header => Ok(()),
        Some((n, h)) => Err(parse_err(*n, format!("expected header `{header}`, found `{h}`"))),
        None => Err(parse_err(0, format!("missing header `{header}`"))),
    }
}

fn field<T: std::str::FromStr>(line: usize, name: &str, text: &str) -> Result<T, IoError> {
    text.parse()
        .map_err(|_| parse_err(line, format!("bad {name} `{text}`")))
}

fn fields<const K: usize>(line: usize, text: &str) -> Result<[&str; K], IoError> {
    let parts: Vec<&str> = text.split(',').collect();
    parts
        .try_into()
        .map_err(|p: Vec<&str>| parse_err(line, format!("expected {K} fields, found {}", p.len())))
}

/// Provenance entries describing a parameter set.
pub fn params_provenance(params: &ModelParams<f64>) -> Provenance {
    [
        ("n_agents", params.n_agents.to_string()),
        ("h", params.h.to_string()),
        ("u_m", params.u_m.to_string()),
        ("u_s", params.u_s.to_string()),
        ("mu", params.mu.to_string()),
        ("bounded", params.bounded.to_string()),
        ("seed", params.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn indicator_provenance(config: &IndicatorConfig<f64>) -> Provenance {
    let t = &config.thresholds;
    [
        ("cluster_epsilon", config.cluster_epsilon),
        ("major_share_threshold", config.major_share),
        ("group_radius_fraction", config.group_radius_fraction),
        ("single_moderate_max", t.single_moderate_max),
        ("moderate_margin", t.moderate_margin),
        ("dip_threshold", t.dip_threshold),
        ("rise_threshold", t.rise_threshold),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

// ---------------------------------------------------------------- time series

pub const TIMESERIES_HEADER: &str = "sweep,avg_abs_main,avg_abs_secondary,n_clusters,max_cluster_share";

#[derive(Clone, Debug, PartialEq)]
pub struct TimeseriesFile {
    pub provenance: Provenance,
    pub records: Vec<TrajectoryRecord<f64>>,
}

pub fn write_timeseries<W: Write>(
    records: &[TrajectoryRecord<f64>],
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    if records.is_empty() {
        return Err(IoError::EmptyRecords);
    }
    write_preamble(w, "timeseries", provenance)?;
    writeln!(w, "{TIMESERIES_HEADER}")?;
    for r in records {
        write_row(
            w,
            &[
                &r.sweep,
                &r.avg_abs_main,
                &r.avg_abs_secondary,
                &r.n_clusters,
                &r.max_cluster_share,
            ],
        )?;
    }
    Ok(())
}

pub fn write_timeseries_file(
    records: &[TrajectoryRecord<f64>],
    provenance: &[(String, String)],
    path: &Path,
) -> Result<(), IoError> {
    let mut buf = Vec::new();
    write_timeseries(records, provenance, &mut buf)?;
    write_file(path, &buf)
}

pub fn parse_timeseries(text: &str) -> Result<TimeseriesFile, IoError> {
    let (provenance, body) = split_preamble(text, "timeseries")?;
    expect_header(&body, TIMESERIES_HEADER)?;
    let records = body[1..]
        .iter()
        .map(|&(n, line)| {
            let [sweep, main, secondary, clusters, share] = fields::<5>(n, line)?;
            Ok(TrajectoryRecord {
                sweep: field(n, "sweep", sweep)?,
                avg_abs_main: field(n, "avg_abs_main", main)?,
                avg_abs_secondary: field(n, "avg_abs_secondary", secondary)?,
                n_clusters: field(n, "n_clusters", clusters)?,
                max_cluster_share: field(n, "max_cluster_share", share)?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(TimeseriesFile {
        provenance,
        records,
    })
}

// ------------------------------------------------------------------ snapshots

pub const SNAPSHOT_HEADER: &str = "index,involvement,main,secondary";

/// Full population state with the parameters and generator that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotFile {
    pub params: ModelParams<f64>,
    pub generator: String,
    pub sweep: u64,
    /// Further provenance, kept in order.
    pub extra: Provenance,
    pub agents: Vec<Agent<f64>>,
}

impl SnapshotFile {
    pub fn from_state(
        state: &PopulationState<f64>,
        params: &ModelParams<f64>,
        extra: Provenance,
    ) -> Self {
        Self {
            params: params.clone(),
            generator: GENERATOR_FAMILY.to_string(),
            sweep: state.sweep,
            extra,
            agents: state.agents.clone(),
        }
    }
}

pub fn write_snapshot<W: Write>(snapshot: &SnapshotFile, w: &mut W) -> Result<(), IoError> {
    let mut provenance = vec![
        ("generator".to_string(), snapshot.generator.clone()),
        ("sweep".to_string(), snapshot.sweep.to_string()),
    ];
    provenance.extend(params_provenance(&snapshot.params));
    provenance.extend(snapshot.extra.iter().cloned());
    write_preamble(w, "snapshot", &provenance)?;
    writeln!(w, "{SNAPSHOT_HEADER}")?;
    for (i, a) in snapshot.agents.iter().enumerate() {
        write_row(
            w,
            &[
                &i,
                &a.involvement.tag(),
                &a.attitude.main,
                &a.attitude.secondary,
            ],
        )?;
    }
    Ok(())
}

pub fn snapshot_bytes(snapshot: &SnapshotFile) -> Vec<u8> {
    let mut buf = Vec::new();
    write_snapshot(snapshot, &mut buf).expect("writing to memory cannot fail");
    buf
}

pub fn parse_snapshot(text: &str) -> Result<SnapshotFile, IoError> {
    let (provenance, body) = split_preamble(text, "snapshot")?;
    let get = |key: &str| -> Result<String, IoError> {
        provenance
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| parse_err(1, format!("missing provenance `{key}`")))
    };
    let params = ModelParams {
        n_agents: field(1, "n_agents", &get("n_agents")?)?,
        h: field(1, "h", &get("h")?)?,
        u_m: field(1, "u_m", &get("u_m")?)?,
        u_s: field(1, "u_s", &get("u_s")?)?,
        mu: field(1, "mu", &get("mu")?)?,
        bounded: field(1, "bounded", &get("bounded")?)?,
        seed: field(1, "seed", &get("seed")?)?,
    };
    let generator = get("generator")?;
    let sweep = field(1, "sweep", &get("sweep")?)?;
    const KNOWN: [&str; 9] = ["generator", "sweep", "n_agents", "h", "u_m", "u_s", "mu", "bounded", "seed"];
    let extra: Provenance = provenance
        .iter()
        .filter(|(k, _)| !KNOWN.contains(&k.as_str()))
        .cloned()
        .collect();
    expect_header(&body, SNAPSHOT_HEADER)?;
    let agents = body[1..]
        .iter()
        .enumerate()
        .map(|(i, &(n, line))| {
            let [index, tag, main, secondary] = fields::<4>(n, line)?;
            if field::<usize>(n, "index", index)? != i {
                return Err(parse_err(n, format!("expected agent index {i}")));
            }
            Ok(Agent {
                involvement: Involvement::from_tag(tag)
                    .ok_or_else(|| parse_err(n, format!("bad involvement `{tag}`")))?,
                attitude: Attitude::new(field(n, "main", main)?, field(n, "secondary", secondary)?),
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    if agents.len() != params.n_agents {
        return Err(parse_err(
            body.last().map_or(0, |l| l.0),
            format!("{} agent rows for n_agents = {}", agents.len(), params.n_agents),
        ));
    }
    Ok(SnapshotFile {
        params,
        generator,
        sweep,
        extra,
        agents,
    })
}

// ------------------------------------------------------------ classification

pub const CLASSIFICATION_HEADER: &str = "sweep,n_clusters,n_major,n_groups_main,n_groups_secondary,avg_abs_main,avg_abs_secondary,max_cluster_share,pattern_main,pattern_secondary";

/// Indicators and pattern codes of one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationRow {
    pub sweep: u64,
    pub report: IndicatorReport<f64>,
    pub pattern_main: PatternCode,
    pub pattern_secondary: PatternCode,
}

/// Provenance shared by inline and stored-snapshot classification, so both
/// paths produce identical files.
pub fn classification_provenance(
    params: &ModelParams<f64>,
    indicators: &IndicatorConfig<f64>,
) -> Provenance {
    let mut p = vec![("generator".to_string(), GENERATOR_FAMILY.to_string())];
    p.extend(params_provenance(params));
    p.extend(indicator_provenance(indicators));
    p
}

pub fn write_classification<W: Write>(
    rows: &[ClassificationRow],
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    write_preamble(w, "classification", provenance)?;
    writeln!(w, "{CLASSIFICATION_HEADER}")?;
    for r in rows {
        let rep = &r.report;
        write_row(
            w,
            &[
                &r.sweep,
                &rep.n_clusters,
                &rep.n_major,
                &rep.n_major_on(Dimension::Main),
                &rep.n_major_on(Dimension::Secondary),
                &rep.avg_abs_main,
                &rep.avg_abs_secondary,
                &rep.max_cluster_share,
                &r.pattern_main.code(),
                &r.pattern_secondary.code(),
            ],
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- experiments

pub const CELLS_HEADER: &str = "boundedness,h,u_m,u_s,replicates,mean_avg_abs_main,std_avg_abs_main,mean_avg_abs_secondary,std_avg_abs_secondary,mean_n_major,majority_pattern_main,majority_pattern_secondary";

pub fn write_cells<W: Write>(
    cells: &[PatternCell<f64>],
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    write_preamble(w, "cells", provenance)?;
    writeln!(w, "{CELLS_HEADER}")?;
    for c in cells {
        write_row(
            w,
            &[
                &c.key.boundedness.name(),
                &c.key.h,
                &c.key.u_m,
                &c.key.u_s,
                &c.per_replicate.len(),
                &c.mean_avg_abs.0,
                &c.std_avg_abs.0,
                &c.mean_avg_abs.1,
                &c.std_avg_abs.1,
                &c.mean_n_major,
                &c.majority_pattern.0.code(),
                &c.majority_pattern.1.code(),
            ],
        )?;
    }
    Ok(())
}

pub const REPLICATES_HEADER: &str = "boundedness,h,u_m,u_s,replicate,seed,final_sweep,n_major,n_groups_main,n_groups_secondary,avg_abs_main,avg_abs_secondary,pattern_main,pattern_secondary";

pub fn write_replicates<W: Write>(
    cells: &[PatternCell<f64>],
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    write_preamble(w, "replicates", provenance)?;
    writeln!(w, "{REPLICATES_HEADER}")?;
    for c in cells {
        for r in &c.per_replicate {
            write_row(
                w,
                &[
                    &c.key.boundedness.name(),
                    &c.key.h,
                    &c.key.u_m,
                    &c.key.u_s,
                    &r.replicate,
                    &r.seed,
                    &r.final_sweep,
                    &r.report.n_major,
                    &r.report.n_major_on(Dimension::Main),
                    &r.report.n_major_on(Dimension::Secondary),
                    &r.report.avg_abs_main,
                    &r.report.avg_abs_secondary,
                    &r.pattern_main.code(),
                    &r.pattern_secondary.code(),
                ],
            )?;
        }
    }
    Ok(())
}

fn map_provenance(map: &PhaseMap, provenance: &[(String, String)]) -> Provenance {
    let mut p = vec![
        ("quantity".to_string(), map.quantity.name().to_string()),
        ("h".to_string(), map.h.to_string()),
        ("boundedness".to_string(), map.boundedness.name().to_string()),
    ];
    p.extend(provenance.iter().cloned());
    p
}

fn map_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Long form: one `u_m,u_s,value` row per grid point, `NA` when missing.
pub fn write_phase_map_long<W: Write>(
    map: &PhaseMap,
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    write_preamble(w, "phase_map_long", &map_provenance(map, provenance))?;
    writeln!(w, "u_m,u_s,value")?;
    for (j, u_s) in map.u_s_axis.iter().enumerate() {
        for (i, u_m) in map.u_m_axis.iter().enumerate() {
            write_row(w, &[u_m, u_s, &map_value(map.get(i, j))])?;
        }
    }
    Ok(())
}

/// Matrix form: rows are `u_s` values, columns `u_m` values.
pub fn write_phase_map_matrix<W: Write>(
    map: &PhaseMap,
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    write_preamble(w, "phase_map_matrix", &map_provenance(map, provenance))?;
    let header: Vec<String> = std::iter::once("u_s\\u_m".to_string())
        .chain(map.u_m_axis.iter().map(f64::to_string))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (j, u_s) in map.u_s_axis.iter().enumerate() {
        let row: Vec<String> = std::iter::once(u_s.to_string())
            .chain((0..map.u_m_axis.len()).map(|i| map_value(map.get(i, j))))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

// -------------------------------------------------------------------- density

/// One-dimensional histogram as `bin_lo,bin_hi,count` rows.
pub fn write_histogram<W: Write>(
    hist: &DensityHistogram<f64>,
    dimension: Dimension,
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    let (bounds, counts) = match dimension {
        Dimension::Main => (hist.main_bounds, &hist.main),
        Dimension::Secondary => (hist.secondary_bounds, &hist.secondary),
    };
    let mut p = vec![("dimension".to_string(), dimension.name().to_string())];
    p.extend(provenance.iter().cloned());
    write_preamble(w, "histogram", &p)?;
    writeln!(w, "bin_lo,bin_hi,count")?;
    let edges = bounds.edges(hist.bins);
    for (k, count) in counts.iter().enumerate() {
        write_row(w, &[&edges[k], &edges[k + 1], count])?;
    }
    Ok(())
}

/// Joint counts; rows are main-dimension bins, columns secondary bins, each
/// labelled by its lower edge.
pub fn write_density_grid<W: Write>(
    hist: &DensityHistogram<f64>,
    provenance: &[(String, String)],
    w: &mut W,
) -> Result<(), IoError> {
    write_preamble(w, "density_grid", provenance)?;
    let main_edges = hist.main_bounds.edges(hist.bins);
    let header: Vec<String> = std::iter::once("main\\secondary".to_string())
        .chain(hist.secondary_bounds.edges(hist.bins)[..hist.bins].iter().map(f64::to_string))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (m, lo) in main_edges[..hist.bins].iter().enumerate() {
        let row: Vec<String> = std::iter::once(lo.to_string())
            .chain((0..hist.bins).map(|s| hist.grid_at(m, s).to_string()))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_population, StreamRng};

    fn records(n: u64) -> Vec<TrajectoryRecord<f64>> {
        (0..n)
            .map(|k| TrajectoryRecord {
                sweep: k * 10,
                avg_abs_main: 0.1 + k as f64 / 3.0,
                avg_abs_secondary: 1.0 / 7.0,
                n_clusters: k as usize,
                max_cluster_share: 0.3,
            })
            .collect()
    }

    #[test]
    fn three_records_four_lines() {
        let mut buf = Vec::new();
        write_timeseries(&records(3), &[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 4);
        assert_eq!(data[0], TIMESERIES_HEADER);
    }

    #[test]
    fn timeseries_round_trip_is_byte_identical() {
        let prov = vec![("seed".to_string(), "42".to_string())];
        let mut first = Vec::new();
        write_timeseries(&records(5), &prov, &mut first).unwrap();
        let parsed = parse_timeseries(std::str::from_utf8(&first).unwrap()).unwrap();
        assert_eq!(parsed.records, records(5));
        assert_eq!(parsed.provenance, prov);
        let mut second = Vec::new();
        write_timeseries(&parsed.records, &parsed.provenance, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn empty_timeseries_is_an_error() {
        let mut buf = Vec::new();
        assert!(matches!(write_timeseries(&[], &[], &mut buf), Err(IoError::EmptyRecords)));
    }

    #[test]
    fn write_failure_names_path() {
        let dir = std::env::temp_dir().join("hsibc-io-test-not-a-dir");
        fs::write(&dir, b"x").unwrap();
        let path = dir.join("ts.csv");
        let err = write_timeseries_file(&records(1), &[], &path).unwrap_err();
        assert!(err.to_string().contains("hsibc-io-test-not-a-dir"), "{err}");
        let _ = fs::remove_file(&dir);
    }

    #[test]
    fn snapshot_round_trip_is_lossless() {
        let mut params = ModelParams::with_thresholds(0.7, 0.1);
        params.n_agents = 500;
        params.seed = 9;
        let mut rng = StreamRng::new(9);
        let state = init_population(&params, &mut rng).unwrap();
        let snap = SnapshotFile::from_state(&state, &params, vec![("max_sweeps".into(), "10".into())]);
        let bytes = snapshot_bytes(&snap);
        let parsed = parse_snapshot(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(parsed, snap);
        for (a, b) in parsed.agents.iter().zip(&state.agents) {
            assert_eq!(a.attitude.main.to_bits(), b.attitude.main.to_bits());
            assert_eq!(a.attitude.secondary.to_bits(), b.attitude.secondary.to_bits());
        }
        assert_eq!(snapshot_bytes(&parsed), bytes);
    }

    #[test]
    fn snapshot_rejects_wrong_row_count_and_format() {
        let mut params = ModelParams::with_thresholds(0.7, 0.1);
        params.n_agents = 3;
        let mut rng = StreamRng::new(1);
        let state = init_population(&params, &mut rng).unwrap();
        let text = String::from_utf8(snapshot_bytes(&SnapshotFile::from_state(&state, &params, vec![]))).unwrap();
        let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(parse_snapshot(&truncated).is_err());
        assert!(parse_snapshot(&text.replace("format=snapshot", "format=other")).is_err());
        assert!(parse_timeseries(&text).is_err());
    }
}

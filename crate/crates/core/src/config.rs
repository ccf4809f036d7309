//! Flat `key=value` configuration documents.
//!
//! Entries are separated by newlines or commas; `#` starts a comment. List
//! values are whitespace separated, or a `start:stop:step` range.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::RunConfig;
use crate::experiment::{grid_values, Boundedness, ExperimentPlan};
use crate::indicators::{ClassifierThresholds, IndicatorConfig};
use crate::model::ModelParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: expected `key=value`, found `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { key: String, line: usize },
    #[error("`{key}` = `{value}` is invalid: must be {expected}")]
    Invalid {
        key: String,
        value: String,
        expected: String,
    },
    #[error("required key `{0}` is missing")]
    Missing(&'static str),
}

/// Every recognised key, in output order.
pub const KEYS: [&str; 24] = [
    "n_agents",
    "h",
    "u_m",
    "u_s",
    "mu",
    "bounded",
    "seed",
    "max_sweeps",
    "snapshot_every",
    "convergence_eps",
    "convergence_window",
    "cluster_epsilon",
    "major_share_threshold",
    "group_radius_fraction",
    "single_moderate_max",
    "moderate_margin",
    "dip_threshold",
    "rise_threshold",
    "replicates",
    "base_seed",
    "u_m_values",
    "u_s_values",
    "h_values",
    "boundedness_cases",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigDocument {
    pub n_agents: usize,
    pub h: f64,
    pub u_m: Option<f64>,
    pub u_s: Option<f64>,
    pub mu: f64,
    pub bounded: bool,
    pub seed: u64,
    pub max_sweeps: u64,
    pub snapshot_every: u64,
    pub convergence_eps: f64,
    pub convergence_window: u64,
    pub cluster_epsilon: f64,
    pub major_share_threshold: f64,
    pub group_radius_fraction: f64,
    pub single_moderate_max: f64,
    pub moderate_margin: f64,
    pub dip_threshold: f64,
    pub rise_threshold: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub u_m_values: Vec<f64>,
    pub u_s_values: Vec<f64>,
    pub h_values: Vec<f64>,
    pub boundedness_cases: Vec<Boundedness>,
    explicit: BTreeSet<&'static str>,
}

impl Default for ConfigDocument {
    fn default() -> Self {
        let t = ClassifierThresholds::<f64>::default();
        let ind = IndicatorConfig::<f64>::default();
        let grid = grid_values(0.05, 1.0, 0.05);
        Self {
            n_agents: 10_000,
            h: 0.1,
            u_m: None,
            u_s: None,
            mu: 0.5,
            bounded: true,
            seed: 0,
            max_sweeps: 100_000,
            snapshot_every: 1000,
            convergence_eps: 0.0,
            convergence_window: 100,
            cluster_epsilon: ind.cluster_epsilon,
            major_share_threshold: ind.major_share,
            group_radius_fraction: ind.group_radius_fraction,
            single_moderate_max: t.single_moderate_max,
            moderate_margin: t.moderate_margin,
            dip_threshold: t.dip_threshold,
            rise_threshold: t.rise_threshold,
            replicates: 10,
            base_seed: 0,
            u_m_values: grid.clone(),
            u_s_values: grid,
            h_values: vec![0.1],
            boundedness_cases: vec![Boundedness::Bounded, Boundedness::Unbounded],
            explicit: BTreeSet::new(),
        }
    }
}

fn invalid(key: &str, value: &str, expected: &str) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        expected: expected.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| invalid(key, value, expected))
}

fn parse_real(key: &str, value: &str, expected: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_num(key, value, expected)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, value, expected))
    }
}

fn parse_list(key: &str, value: &str, expected: &str) -> Result<Vec<f64>, ConfigError> {
    let parts: Vec<&str> = value.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (
                parse_real(key, start, expected)?,
                parse_real(key, stop, expected)?,
                parse_real(key, step, expected)?,
            );
            grid_values(start, stop, step)
        }
        [_] => value
            .split_whitespace()
            .map(|v| parse_real(key, v, expected))
            .collect::<Result<_, _>>()?,
        _ => return Err(invalid(key, value, expected)),
    };
    if values.is_empty() {
        return Err(invalid(key, value, expected));
    }
    Ok(values)
}

fn format_list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    let mut doc = ConfigDocument::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or_default();
        for entry in content.split(',') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let Some((key, value)) = entry.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: entry.to_string(),
                });
            };
            let key = key.trim();
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    line,
                });
            };
            if doc.explicit.contains(known) {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    line,
                });
            }
            doc.set(known, value.trim())?;
        }
    }
    doc.validate()?;
    Ok(doc)
}

impl ConfigDocument {
    /// Sets one key from its text form and marks it as explicitly given.
    /// Range checks happen in [`ConfigDocument::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(ConfigError::UnknownKey {
                key: key.to_string(),
                line: 0,
            });
        };
        let real = |expected| parse_real(key, value, expected);
        match known {
            "n_agents" => self.n_agents = parse_num(key, value, "an integer >= 2")?,
            "h" => self.h = real("a real in [0, 1]")?,
            "u_m" => self.u_m = Some(real("a real > 0")?),
            "u_s" => self.u_s = Some(real("a real > 0")?),
            "mu" => self.mu = real("a real in (0, 0.5]")?,
            "bounded" => self.bounded = parse_num(key, value, "`true` or `false`")?,
            "seed" => self.seed = parse_num(key, value, "an unsigned 64-bit integer")?,
            "max_sweeps" => self.max_sweeps = parse_num(key, value, "an integer >= 1")?,
            "snapshot_every" => {
                self.snapshot_every = parse_num(key, value, "an integer in [1, max_sweeps]")?
            }
            "convergence_eps" => self.convergence_eps = real("a real >= 0")?,
            "convergence_window" => {
                self.convergence_window = parse_num(key, value, "an integer >= 1")?
            }
            "cluster_epsilon" => self.cluster_epsilon = real("a real > 0")?,
            "major_share_threshold" => self.major_share_threshold = real("a real in [0, 1)")?,
            "group_radius_fraction" => self.group_radius_fraction = real("a real >= 0")?,
            "single_moderate_max" => self.single_moderate_max = real("a real >= 0")?,
            "moderate_margin" => self.moderate_margin = real("a real >= 0")?,
            "dip_threshold" => self.dip_threshold = real("a real >= 0")?,
            "rise_threshold" => self.rise_threshold = real("a real >= 0")?,
            "replicates" => self.replicates = parse_num(key, value, "an integer >= 1")?,
            "base_seed" => self.base_seed = parse_num(key, value, "an unsigned 64-bit integer")?,
            "u_m_values" => {
                self.u_m_values = parse_list(key, value, "a list or start:stop:step of reals > 0")?
            }
            "u_s_values" => {
                self.u_s_values = parse_list(key, value, "a list or start:stop:step of reals > 0")?
            }
            "h_values" => {
                self.h_values = parse_list(key, value, "a list or start:stop:step of reals in [0, 1]")?
            }
            "boundedness_cases" => {
                let expected = "a non-empty list of `bounded` and `unbounded`";
                let cases: Vec<Boundedness> = value
                    .split_whitespace()
                    .map(|c| Boundedness::from_name(c).ok_or_else(|| invalid(key, value, expected)))
                    .collect::<Result<_, _>>()?;
                if cases.is_empty() {
                    return Err(invalid(key, value, expected));
                }
                self.boundedness_cases = cases;
            }
            _ => unreachable!("every listed key is handled"),
        }
        self.explicit.insert(known);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, expected: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(key, &value, expected))
            }
        };
        check(self.n_agents >= 2, "n_agents", self.n_agents.to_string(), "an integer >= 2")?;
        check((0.0..=1.0).contains(&self.h), "h", self.h.to_string(), "a real in [0, 1]")?;
        for (key, v) in [("u_m", self.u_m), ("u_s", self.u_s)] {
            if let Some(v) = v {
                check(v > 0.0, key, v.to_string(), "a real > 0")?;
            }
        }
        check(
            self.mu > 0.0 && self.mu <= 0.5,
            "mu",
            self.mu.to_string(),
            "a real in (0, 0.5]",
        )?;
        check(self.max_sweeps >= 1, "max_sweeps", self.max_sweeps.to_string(), "an integer >= 1")?;
        check(
            (1..=self.max_sweeps).contains(&self.snapshot_every),
            "snapshot_every",
            self.snapshot_every.to_string(),
            &format!("an integer in [1, max_sweeps = {}]", self.max_sweeps),
        )?;
        check(
            self.convergence_eps >= 0.0,
            "convergence_eps",
            self.convergence_eps.to_string(),
            "a real >= 0",
        )?;
        check(
            self.convergence_window >= 1,
            "convergence_window",
            self.convergence_window.to_string(),
            "an integer >= 1",
        )?;
        check(
            self.cluster_epsilon > 0.0,
            "cluster_epsilon",
            self.cluster_epsilon.to_string(),
            "a real > 0",
        )?;
        check(
            (0.0..1.0).contains(&self.major_share_threshold),
            "major_share_threshold",
            self.major_share_threshold.to_string(),
            "a real in [0, 1)",
        )?;
        for (key, v) in [
            ("group_radius_fraction", self.group_radius_fraction),
            ("single_moderate_max", self.single_moderate_max),
            ("moderate_margin", self.moderate_margin),
            ("dip_threshold", self.dip_threshold),
            ("rise_threshold", self.rise_threshold),
        ] {
            check(v >= 0.0, key, v.to_string(), "a real >= 0")?;
        }
        check(self.replicates >= 1, "replicates", self.replicates.to_string(), "an integer >= 1")?;
        for (key, values) in [("u_m_values", &self.u_m_values), ("u_s_values", &self.u_s_values)] {
            check(
                values.iter().all(|&v| v > 0.0),
                key,
                format_list(values),
                "a list or start:stop:step of reals > 0",
            )?;
        }
        check(
            self.h_values.iter().all(|v| (0.0..=1.0).contains(v)),
            "h_values",
            format_list(&self.h_values),
            "a list or start:stop:step of reals in [0, 1]",
        )
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Keys whose value came from the defaults.
    pub fn defaulted_keys(&self) -> Vec<&'static str> {
        KEYS.iter()
            .copied()
            .filter(|k| !self.explicit.contains(k) && self.value_of(k).is_some())
            .collect()
    }

    /// Text form of one key, `None` for an unset required key.
    pub fn value_of(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_agents" => self.n_agents.to_string(),
            "h" => self.h.to_string(),
            "u_m" => self.u_m?.to_string(),
            "u_s" => self.u_s?.to_string(),
            "mu" => self.mu.to_string(),
            "bounded" => self.bounded.to_string(),
            "seed" => self.seed.to_string(),
            "max_sweeps" => self.max_sweeps.to_string(),
            "snapshot_every" => self.snapshot_every.to_string(),
            "convergence_eps" => self.convergence_eps.to_string(),
            "convergence_window" => self.convergence_window.to_string(),
            "cluster_epsilon" => self.cluster_epsilon.to_string(),
            "major_share_threshold" => self.major_share_threshold.to_string(),
            "group_radius_fraction" => self.group_radius_fraction.to_string(),
            "single_moderate_max" => self.single_moderate_max.to_string(),
            "moderate_margin" => self.moderate_margin.to_string(),
            "dip_threshold" => self.dip_threshold.to_string(),
            "rise_threshold" => self.rise_threshold.to_string(),
            "replicates" => self.replicates.to_string(),
            "base_seed" => self.base_seed.to_string(),
            "u_m_values" => format_list(&self.u_m_values),
            "u_s_values" => format_list(&self.u_s_values),
            "h_values" => format_list(&self.h_values),
            "boundedness_cases" => self
                .boundedness_cases
                .iter()
                .map(|b| b.name())
                .collect::<Vec<_>>()
                .join(" "),
            _ => return None,
        })
    }

    /// All set keys with their values, plus a `defaulted` entry listing the
    /// keys that took their default.
    pub fn metadata(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = KEYS
            .iter()
            .filter_map(|k| self.value_of(k).map(|v| (k.to_string(), v)))
            .collect();
        out.push(("defaulted".into(), self.defaulted_keys().join(" ")));
        out
    }

    /// Re-parsable text of the full document; defaulted keys are annotated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(v) = self.value_of(key) {
                let note = if self.explicit.contains(key) { "" } else { "  # default" };
                let _ = writeln!(out, "{key}={v}{note}");
            }
        }
        out
    }

    pub fn indicator_config(&self) -> IndicatorConfig<f64> {
        IndicatorConfig {
            cluster_epsilon: self.cluster_epsilon,
            major_share: self.major_share_threshold,
            group_radius_fraction: self.group_radius_fraction,
            thresholds: ClassifierThresholds {
                single_moderate_max: self.single_moderate_max,
                moderate_margin: self.moderate_margin,
                dip_threshold: self.dip_threshold,
                rise_threshold: self.rise_threshold,
            },
        }
    }

    fn params_with(&self, u_m: f64, u_s: f64) -> ModelParams<f64> {
        ModelParams {
            n_agents: self.n_agents,
            h: self.h,
            u_m,
            u_s,
            mu: self.mu,
            bounded: self.bounded,
            seed: self.seed,
        }
    }

    /// Configuration of a single run; needs `u_m` and `u_s`.
    pub fn run_config(&self) -> Result<RunConfig<f64>, ConfigError> {
        let u_m = self.u_m.ok_or(ConfigError::Missing("u_m"))?;
        let u_s = self.u_s.ok_or(ConfigError::Missing("u_s"))?;
        Ok(RunConfig {
            params: self.params_with(u_m, u_s),
            max_sweeps: self.max_sweeps,
            snapshot_every: self.snapshot_every,
            convergence_eps: self.convergence_eps,
            convergence_window: self.convergence_window,
            indicators: self.indicator_config(),
        })
    }

    /// Grid experiment described by the document. Runs record only their
    /// initial and final states.
    pub fn plan(&self) -> ExperimentPlan<f64> {
        let mut template = RunConfig {
            params: self.params_with(self.u_m_values[0], self.u_s_values[0]),
            max_sweeps: self.max_sweeps,
            snapshot_every: self.max_sweeps,
            convergence_eps: self.convergence_eps,
            convergence_window: self.convergence_window,
            indicators: self.indicator_config(),
        };
        template.params.seed = 0;
        ExperimentPlan {
            u_m_values: self.u_m_values.clone(),
            u_s_values: self.u_s_values.clone(),
            h_values: self.h_values.clone(),
            replicates: self.replicates,
            base_seed: self.base_seed,
            run_config_template: template,
            boundedness_cases: self.boundedness_cases.clone(),
        }
    }
}

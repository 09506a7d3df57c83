//! Output files of an experiment run.
//!
//! Every run writes `summary.json`, `summary.txt`, the effective
//! `config.toml`, and one CSV per table. Metric names are fixed per
//! experiment in `METRICS`; emitting anything else is a bug.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::{CliError, Experiment};

pub const SCHEMA_VERSION: u32 = 1;

/// Documented metric keys of `summary.json`, per experiment.
pub const METRICS: &[(Experiment, &[&str])] = &[
    (
        Experiment::Simulate,
        &["cycles", "outputs", "rms_error", "max_abs_error", "clipped", "energy_per_cycle_j", "tops_per_watt"],
    ),
    (
        Experiment::Characterize,
        &[
            "sweep_points",
            "trials",
            "lsb_mac",
            "max_abs_dnl",
            "max_abs_inl",
            "missing_codes",
            "step_size_v",
            "sigma_v",
            "margin_v",
            "headroom_utilization",
            "clip_rate",
        ],
    ),
    (
        Experiment::Montecarlo,
        &[
            "points",
            "full_scale_mac",
            "sigma_baseline",
            "sigma_folding",
            "sigma_enhanced",
            "reduction",
            "clipped_baseline",
            "clipped_enhanced",
            "conv_images",
            "conv_min_ratio",
            "conv_max_ratio",
            "conv_degenerate",
        ],
    ),
    (Experiment::Sweep, &["cycles", "eff_min", "eff_max", "monotone"]),
    (
        Experiment::Map,
        &["rows", "cols", "row_tiles", "col_blocks", "invocations", "rms_error", "max_abs_error", "clipped_tiles"],
    ),
    (
        Experiment::Fom,
        &[
            "tops_per_watt",
            "gops_per_kb",
            "fom_4b",
            "fom_8b",
            "cycle_time_s",
            "out_ratio",
            "readout_energy_j",
            "sar_energy_j",
        ],
    ),
];

pub fn documented(exp: Experiment) -> &'static [&'static str] {
    METRICS.iter().find(|(e, _)| *e == exp).map(|(_, m)| *m).unwrap_or(&[])
}

/// Collected results of one run, written by `Report::write`.
#[derive(Debug, Clone)]
pub struct Report {
    pub experiment: Experiment,
    pub seed: u64,
    pub metrics: BTreeMap<String, Value>,
    pub tables: Vec<Table>,
    pub config_toml: String,
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Table {
        Table {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

impl Report {
    pub fn new(experiment: Experiment, seed: u64, config_toml: String) -> Report {
        Report {
            experiment,
            seed,
            metrics: BTreeMap::new(),
            tables: Vec::new(),
            config_toml,
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        debug_assert!(documented(self.experiment).contains(&key), "undocumented metric {key}");
        self.metrics.insert(key.to_string(), json!(value));
    }

    pub fn summary_json(&self) -> Value {
        let files: Vec<String> = self.files().into_iter().collect();
        json!({
            "schema": SCHEMA_VERSION,
            "experiment": self.experiment.name(),
            "seed": self.seed,
            "metrics": self.metrics,
            "files": files,
        })
    }

    fn files(&self) -> Vec<String> {
        let mut f: Vec<String> = self.tables.iter().map(|t| format!("{}.csv", t.name)).collect();
        f.extend(["config.toml", "summary.json", "summary.txt"].map(String::from));
        f
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!("cimsim {} (seed {})\n", self.experiment.name(), self.seed);
        for (k, v) in &self.metrics {
            s.push_str(&format!("  {k:<22} {v}\n"));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut written = Vec::new();
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let res = w
                .write_record(&t.header)
                .and_then(|_| t.rows.iter().try_for_each(|r| w.write_record(r)))
                .and_then(|_| w.flush().map_err(csv::Error::from));
            res.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            written.push(path);
        }
        let mut json = serde_json::to_string_pretty(&self.summary_json()).expect("summary serializes");
        json.push('\n');
        for (name, body) in [
            ("config.toml", self.config_toml.as_str()),
            ("summary.json", json.as_str()),
            ("summary.txt", self.summary_text().as_str()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Shortest round-trip formatting, so CSVs are byte-stable.
pub fn f(v: f64) -> String {
    format!("{v}")
}

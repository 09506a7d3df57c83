//! Configuration file: flat TOML sections `[analog]`, `[noise]`,
//! `[schedule]`, `[energy]` and `[modes]`. Missing keys take their defaults;
//! unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cimsim_core::perf::EnergyParams;
use cimsim_core::{AnalogParams, CimError, MacroConfig, NoiseParams, ReadoutSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),

    #[error("invalid configuration: {field}: {invariant}")]
    Validation { field: String, invariant: String },
}

/// Everything an experiment needs besides its own options.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct Config {
    pub macro_cfg: MacroConfig,
    pub energy: EnergyParams,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ScheduleSection {
    adc_quantum_ratio: u32,
    /// `[n_branches, pulse_quanta]` per readout step; derived from the ratio when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<Vec<[u32; 2]>>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            adc_quantum_ratio: ReadoutSchedule::default().adc_quantum_ratio,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ModesSection {
    folding: bool,
    shared_dtc: bool,
    clock_hz: f64,
    act_scale: f64,
}

impl Default for ModesSection {
    fn default() -> Self {
        let d = MacroConfig::default();
        ModesSection {
            folding: d.folding,
            shared_dtc: d.shared_dtc,
            clock_hz: d.clock_hz,
            act_scale: d.act_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    analog: AnalogParams,
    noise: NoiseParams,
    schedule: ScheduleSection,
    energy: EnergyParams,
    modes: ModesSection,
}

impl FileConfig {
    fn into_config(self) -> Result<Config, ConfigError> {
        let r = self.schedule.adc_quantum_ratio;
        let schedule = match self.schedule.steps {
            Some(steps) => ReadoutSchedule {
                steps: steps.into_iter().map(|[n, q]| (n, q)).collect(),
                adc_quantum_ratio: r,
            },
            None => {
                if r == 0 || !r.is_multiple_of(2) {
                    return Err(ConfigError::Validation {
                        field: "schedule.adc_quantum_ratio".into(),
                        invariant: "r must be a positive even integer".into(),
                    });
                }
                let d = ReadoutSchedule::default();
                let max_branches = d.steps.iter().map(|s| s.0).max().unwrap_or(1);
                ReadoutSchedule::long_pulse(r, max_branches, DEFAULT_PULSE_QUANTA)
            }
        };
        let macro_cfg = MacroConfig {
            analog: self.analog,
            noise: self.noise,
            schedule,
            folding: self.modes.folding,
            shared_dtc: self.modes.shared_dtc,
            clock_hz: self.modes.clock_hz,
            act_scale: self.modes.act_scale,
            ..MacroConfig::default()
        };
        macro_cfg.validate().map_err(validation)?;
        self.energy.validate().map_err(validation)?;
        Ok(Config {
            macro_cfg,
            energy: self.energy,
        })
    }

    fn from_config(c: &Config) -> FileConfig {
        let m = &c.macro_cfg;
        FileConfig {
            analog: m.analog,
            noise: m.noise,
            schedule: ScheduleSection {
                adc_quantum_ratio: m.schedule.adc_quantum_ratio,
                steps: Some(m.schedule.steps.iter().map(|&(n, q)| [n, q]).collect()),
            },
            energy: c.energy,
            modes: ModesSection {
                folding: m.folding,
                shared_dtc: m.shared_dtc,
                clock_hz: m.clock_hz,
                act_scale: m.act_scale,
            },
        }
    }
}

/// Pulse length the default schedule aims for when derived from a ratio.
const DEFAULT_PULSE_QUANTA: u32 = 512;

fn validation(e: CimError) -> ConfigError {
    match e {
        CimError::Validation { field, invariant } => ConfigError::Validation { field, invariant },
        other => ConfigError::Validation {
            field: "config".into(),
            invariant: other.to_string(),
        },
    }
}

fn parse_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let (line, column) = match e.span() {
        Some(span) => line_col(text, span.start),
        None => (0, 0),
    };
    ConfigError::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, column)
}

pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Parse `text`, then apply `section.key=value` overrides. Values are read
/// as TOML values (`2`, `true`, `1e-15`, `[[8, 512]]`).
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Config, ConfigError> {
    if overrides.is_empty() {
        let file: FileConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        return file.into_config();
    }
    let mut table: toml::Table = text.parse().map_err(|e| parse_error(text, &e))?;
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
        let (section, field) = key.trim().split_once('.').ok_or_else(|| ConfigError::Override(o.clone()))?;
        let doc = format!("v = {}", value.trim());
        let value = match doc.parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(value.trim().to_string()),
        };
        let sec = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match sec {
            toml::Value::Table(t) => {
                t.insert(field.to_string(), value);
            }
            _ => return Err(ConfigError::Override(o.clone())),
        }
    }
    let file: FileConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
        line: 0,
        column: 0,
        message: format!("after overrides: {}", e.message()),
    })?;
    file.into_config()
}

/// Serialize a config so that `parse_config(emit_config(c)) == c`.
pub fn emit_config(c: &Config) -> String {
    toml::to_string(&FileConfig::from_config(c)).expect("config serializes")
}

/// Where a default value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// A property of the reference chip design.
    Design,
    /// Fitted to a published metric; not a measurement.
    Fitted,
    /// A modeling choice without a published value.
    Model,
    /// Simulator plumbing with no physical meaning.
    Plumbing,
}

/// `(key, provenance, note)` for every configuration key.
pub const PROVENANCE: &[(&str, Provenance, &str)] = &[
    ("analog.vdd", Provenance::Model, "precharge level"),
    ("analog.vpp_mac", Provenance::Model, "usable MAC headroom below VDD"),
    ("analog.c_bl", Provenance::Model, "bit-line capacitance"),
    ("analog.i0", Provenance::Model, "branch current; u = i0*tau/c_bl = 29 uV"),
    ("analog.tau", Provenance::Model, "DTC quantum"),
    ("analog.lambda_clm", Provenance::Model, "channel-length modulation, 0 = ideal"),
    ("analog.boost", Provenance::Design, "2x DTC pulse resolution (boosted-clipping)"),
    ("noise.sigma_edge", Provenance::Fitted, "width-independent pulse jitter"),
    ("noise.k_narrow", Provenance::Fitted, "narrow-pulse noise; bisected to 1.3% baseline 1-sigma error"),
    ("noise.w_floor", Provenance::Fitted, "narrow-pulse regularizer"),
    ("noise.sigma_branch", Provenance::Fitted, "branch current mismatch"),
    ("noise.sigma_sa", Provenance::Fitted, "sense-amplifier offset"),
    ("noise.seed", Provenance::Plumbing, "chip instance and cycle noise"),
    ("schedule.adc_quantum_ratio", Provenance::Model, "ADC quantum r in MAC quanta"),
    ("schedule.steps", Provenance::Model, "readout branches and pulse length per step"),
    ("energy.e_precharge", Provenance::Model, "C_bl * VDD^2 per full bit-line recharge"),
    ("energy.e_dtc", Provenance::Fitted, "fitted to 95.6-137.5 TOPS/W across sparsity"),
    ("energy.e_sa", Provenance::Model, "per comparison"),
    ("energy.e_digital", Provenance::Fitted, "fitted to 95.6-137.5 TOPS/W across sparsity"),
    ("energy.c_sar_array", Provenance::Model, "reference SAR-ADC array"),
    ("energy.sar_switching", Provenance::Model, "reference SAR-ADC switching factor"),
    ("modes.folding", Provenance::Design, "MAC-folding: subtract 8 from activations"),
    ("modes.shared_dtc", Provenance::Design, "one DTC serves all engines of a core"),
    ("modes.clock_hz", Provenance::Design, "100-200 MHz"),
    ("modes.act_scale", Provenance::Fitted, "half-normal activation scale of experiments"),
];

/// Human-readable table of the effective configuration with provenance.
pub fn explain_config(c: &Config) -> String {
    let table: toml::Table = toml::Value::try_from(FileConfig::from_config(c))
        .ok()
        .and_then(|v| v.as_table().cloned())
        .unwrap_or_default();
    let mut out = String::new();
    for (key, prov, note) in PROVENANCE {
        let (sec, field) = key.split_once('.').expect("dotted key");
        let value = table
            .get(sec)
            .and_then(|s| s.get(field))
            .map(|v| v.to_string())
            .unwrap_or_default();
        let prov = serde_json::to_value(prov).expect("enum serializes");
        out.push_str(&format!("{key:<28} {value:<24} {:<9} {note}\n", prov.as_str().unwrap_or("")));
    }
    out
}

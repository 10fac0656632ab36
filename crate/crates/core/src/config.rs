//! Model documents (`schema: 1`) and the presets shipped with the crate.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compartment::{CompartmentModel, ModelError, ModelSpec};
use crate::history::{History, HistoryError};
use crate::integrator::{default_horizon, IntegratorConfig, Mode, Scheme};
use crate::labsuite::ExperimentSettings;

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESET_NAMES: [&str; 5] = ["krisztin", "linear3", "neutral-ring", "canary", "decay"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("schema: unsupported version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("unknown preset `{0}` (available: {list})", list = PRESET_NAMES.join(", "))]
    UnknownPreset(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("initial: {0}")]
    Initial(String),
    #[error("run: {0}")]
    Run(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("initial: {0}")]
    History(#[from] HistoryError),
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_end() -> f64 {
    10.0
}

fn default_picard_tol() -> f64 {
    1e-12
}

fn default_picard_max() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Stored history length; defaults to the largest lag plus a few steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            t_end: default_t_end(),
            horizon: None,
            scheme: Scheme::Heun,
            mode: Mode::Transformed,
            picard_tol: default_picard_tol(),
            picard_max: default_picard_max(),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Generator for an initial history on `[-T, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: Vec<f64>,
    },
    /// `intercept + slope·s`
    Linear {
        intercept: Vec<f64>,
        slope: Vec<f64>,
    },
    /// `offset + amplitude·sin(frequency·s + phase)`
    Sin {
        amplitude: Vec<f64>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
        #[serde(default = "one")]
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Samples `s,x_1,…` on the integration grid.
    Csv {
        path: PathBuf,
    },
}

impl InitialSpec {
    /// Samples the generator with step `dt` over `[-horizon, 0]`.
    pub fn build(&self, m: usize, dt: f64, horizon: f64) -> Result<History, ConfigError> {
        let check = |name: &str, v: &[f64]| {
            if v.len() == m {
                Ok(())
            } else {
                Err(ConfigError::Initial(format!(
                    "{name} must have length {m}, got {}",
                    v.len()
                )))
            }
        };
        match self {
            InitialSpec::Constant { value } => {
                check("value", value)?;
                Ok(History::constant(value, dt, horizon))
            }
            InitialSpec::Linear { intercept, slope } => {
                check("intercept", intercept)?;
                check("slope", slope)?;
                Ok(History::linear(intercept, slope, dt, horizon))
            }
            InitialSpec::Sin {
                amplitude,
                offset,
                frequency,
                phase,
            } => {
                check("amplitude", amplitude)?;
                let offset = offset.clone().unwrap_or_else(|| vec![0.0; m]);
                check("offset", &offset)?;
                Ok(History::from_fn(m, dt, horizon, |s| {
                    (0..m)
                        .map(|i| offset[i] + amplitude[i] * (frequency * s + phase).sin())
                        .collect()
                }))
            }
            InitialSpec::Csv { path } => {
                let file = File::open(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let h = History::from_csv(BufReader::new(file))?;
                if h.dim() != m {
                    return Err(ConfigError::Initial(format!(
                        "csv has {} columns, model has {m}",
                        h.dim()
                    )));
                }
                if (h.step() - dt).abs() > 1e-9 * dt {
                    return Err(ConfigError::Initial(format!(
                        "csv step {} differs from dt {dt}",
                        h.step()
                    )));
                }
                Ok(h)
            }
        }
    }

    /// Whether the generator can be resampled at another step.
    pub fn is_resamplable(&self) -> bool {
        !matches!(self, InitialSpec::Csv { .. })
    }

    /// The same generator shifted by `c` in every component.
    pub fn shifted(&self, c: f64, m: usize) -> Option<InitialSpec> {
        let add = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        Some(match self {
            InitialSpec::Constant { value } => InitialSpec::Constant { value: add(value) },
            InitialSpec::Linear { intercept, slope } => InitialSpec::Linear {
                intercept: add(intercept),
                slope: slope.clone(),
            },
            InitialSpec::Sin {
                amplitude,
                offset,
                frequency,
                phase,
            } => InitialSpec::Sin {
                amplitude: amplitude.clone(),
                offset: Some(add(offset.as_deref().unwrap_or(&vec![0.0; m]))),
                frequency: *frequency,
                phase: *phase,
            },
            InitialSpec::Csv { .. } => return None,
        })
    }
}

/// A complete run document: model, run parameters, initial data and
/// experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub experiment: ExperimentSettings,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(ConfigError::Schema(cfg.schema));
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let text = match name {
            "krisztin" => include_str!("../presets/krisztin.json"),
            "linear3" => include_str!("../presets/linear3.json"),
            "neutral-ring" => include_str!("../presets/neutral-ring.json"),
            "canary" => include_str!("../presets/canary.json"),
            "decay" => include_str!("../presets/decay.json"),
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        };
        Self::from_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build_model(&self) -> Result<CompartmentModel, ConfigError> {
        Ok(CompartmentModel::new(self.model.clone())?)
    }

    /// SHA-256 of the canonical JSON form of the model section.
    pub fn model_hash(&self) -> String {
        let canonical = serde_json::to_string(&self.model).expect("model serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate_run(&self) -> Result<(), ConfigError> {
        let r = &self.run;
        if !(r.dt.is_finite() && r.dt > 0.0) {
            return Err(ConfigError::Run(format!(
                "dt must be positive, got {}",
                r.dt
            )));
        }
        if !(r.t_end.is_finite() && r.t_end >= 0.0) {
            return Err(ConfigError::Run(format!(
                "t_end must be nonnegative, got {}",
                r.t_end
            )));
        }
        if let Some(h) = r.horizon {
            if !(h.is_finite() && h >= 0.0) {
                return Err(ConfigError::Run(format!(
                    "horizon must be nonnegative, got {h}"
                )));
            }
        }
        Ok(())
    }

    pub fn horizon(&self, model: &CompartmentModel, dt: f64) -> f64 {
        self.run
            .horizon
            .unwrap_or_else(|| default_horizon(model.max_lag(), dt))
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.run.dt,
            t_end: self.run.t_end,
            t0: 0.0,
            scheme: self.run.scheme,
            mode: self.run.mode,
            picard_tol: self.run.picard_tol,
            picard_max: self.run.picard_max,
        }
    }

    /// The configured initial datum, or the all-ones constant.
    pub fn initial_spec(&self) -> InitialSpec {
        self.initial.clone().unwrap_or(InitialSpec::Constant {
            value: vec![1.0; self.model.m],
        })
    }

    pub fn initial_history(
        &self,
        model: &CompartmentModel,
        dt: f64,
    ) -> Result<History, ConfigError> {
        self.initial_spec()
            .build(model.m(), dt, self.horizon(model, dt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_build() {
        for name in PRESET_NAMES {
            let cfg = Config::preset(name).unwrap();
            assert_eq!(cfg.name, name);
            let model = cfg.build_model().unwrap();
            cfg.initial_history(&model, cfg.run.dt).unwrap();
            let again = Config::from_json(&cfg.to_json()).unwrap();
            assert_eq!(again, cfg);
            assert_eq!(again.model_hash(), cfg.model_hash());
        }
    }

    #[test]
    fn periodic_preset_constants() {
        let cfg = Config::preset("krisztin").unwrap();
        let crate::compartment::DelaySpec::Finite { gamma, alpha, rho } = &cfg.model.delays else {
            panic!("finite family expected");
        };
        let pi = std::f64::consts::PI;
        assert_eq!(gamma[0], 2f64.sqrt() - 1.0);
        assert_eq!(alpha[0], pi / 4.0);
        assert_eq!(rho[0][0], Some(7.0 * pi / 4.0));
    }

    #[test]
    fn unknown_key_is_named() {
        let mut v: serde_json::Value =
            serde_json::from_str(&Config::preset("decay").unwrap().to_json()).unwrap();
        v["model"]["bogus_key"] = serde_json::json!(1);
        let err = Config::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
        assert!(matches!(
            Config::from_json("{\"schema\": 2}"),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn wrong_schema_rejected() {
        let mut v: serde_json::Value =
            serde_json::from_str(&Config::preset("decay").unwrap().to_json()).unwrap();
        v["schema"] = serde_json::json!(7);
        assert!(matches!(
            Config::from_json(&v.to_string()),
            Err(ConfigError::Schema(7))
        ));
    }
}

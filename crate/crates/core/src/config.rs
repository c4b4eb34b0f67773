//! Scenario files, built-in presets and `key=value` overrides.
//!
//! Files are TOML. Every section rejects unknown keys; the `sim` and
//! `analysis` sections fall back to defaults for missing keys.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{AnalysisParams, GridSpec};
use crate::controller::{ControllerGains, DelayEstimate};
use crate::error::{Error, Result};
use crate::model::{CascadeParams, DelayLaw, SaturationParams};
use crate::signals::{ReferenceSpec, ReferenceTrajectory};
use crate::sim::{Scenario, SimConfig, DEFAULT_PSI};

pub const PRESETS: [&str; 5] = ["case1_1", "case1_2", "case1_3", "case1_4", "case2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Compartment decay rates, 1/time.
    pub d: Vec<f64>,
    /// Initial concentrations.
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub gamma_hat: f64,
    pub k_d_hat: f64,
    /// Assumed bound on `|tau - tau_hat|`, time units.
    pub tau_tilde_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    /// Bound on `|N_1|`; estimated from the reference when absent.
    pub c1: Option<f64>,
    /// Bound on `|u''|`; estimated from the simulated trace when absent.
    pub m: Option<f64>,
    pub psi: f64,
    pub grid: GridSpec,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            eps1: 1.0,
            eps2: 1.0,
            omega1: 0.1,
            omega2: 0.1,
            omega3: 1.0,
            c1: None,
            m: None,
            psi: DEFAULT_PSI,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantConfig,
    pub saturation: SaturationParams,
    pub delay: DelayLaw,
    pub estimate: EstimateConfig,
    pub gains: ControllerGains,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn at<T>(section: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidParameter {
            name,
            value,
            reason,
        } => Error::config(format!("{section}.{name}"), format!("{value}: {reason}")),
        Error::DimensionMismatch { expected, got } => {
            Error::config(section, format!("expected {expected} entries, got {got}"))
        }
        other => other,
    })
}

impl ScenarioConfig {
    /// Re-checks every invariant the runtime types rely on.
    pub fn validate(&self) -> Result<()> {
        self.to_scenario().map(|_| ())
    }

    /// Builds the runtime scenario, validating along the way.
    pub fn to_scenario(&self) -> Result<Scenario> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        {
            return Err(Error::config("name", "must be non-empty [A-Za-z0-9_.-]"));
        }
        let plant = at("plant.d", CascadeParams::linear(self.plant.d.clone()))?;
        if self.plant.x0.len() != plant.n() {
            return Err(Error::config(
                "plant.x0",
                format!(
                    "expected {} entries, got {}",
                    plant.n(),
                    self.plant.x0.len()
                ),
            ));
        }
        at("saturation", self.saturation.validate())?;
        at("delay", self.delay.validate())?;
        at("delay", self.delay.validate_rate_bound(plant.d_n()))?;
        at("gains", self.gains.validate())?;
        at("sim", self.sim.validate())?;
        let x_n0 = *self.plant.x0.last().expect("n >= 2");
        let estimate = at(
            "estimate",
            DelayEstimate::new(
                self.estimate.gamma_hat,
                self.estimate.k_d_hat,
                x_n0,
                self.estimate.tau_tilde_bar,
            ),
        )?;
        let scenario = Scenario {
            name: self.name.clone(),
            plant,
            saturation: self.saturation,
            delay: self.delay,
            estimate,
            gains: self.gains,
            reference: ReferenceTrajectory::from_spec(&self.reference),
            x0: self.plant.x0.clone(),
        };
        at("plant", scenario.validate(&self.sim))?;
        Ok(scenario)
    }

    /// Analysis constants with `c1`/`m` filled from the given estimates when
    /// the config leaves them open.
    pub fn analysis_params(&self, tau_hat: f64, c1_est: f64, m_est: f64) -> AnalysisParams {
        let a = &self.analysis;
        AnalysisParams {
            eps1: a.eps1,
            eps2: a.eps2,
            omega1: a.omega1,
            omega2: a.omega2,
            omega3: a.omega3,
            phi2: self.delay.phi2,
            tau_hat,
            tau_tilde_bar: self.estimate.tau_tilde_bar,
            c1: a.c1.unwrap_or(c1_est),
            m: a.m.unwrap_or(m_est),
            psi: a.psi,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| schema_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Applies `key.path=value` overrides and re-validates. Values are parsed
    /// as TOML, falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut tree =
            toml::Value::try_from(self).map_err(|e| Error::config("<root>", e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::config(raw, "override must be key=value"))?;
            set_path(&mut tree, key.trim(), parse_value(value.trim()))?;
        }
        let cfg: ScenarioConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| schema_error(&e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn schema_error(e: &toml::de::Error) -> Error {
    let message = e.message().trim().to_string();
    let path = match e.span() {
        Some(span) => format!("bytes {}..{}", span.start, span.end),
        None => "<root>".into(),
    };
    Error::config(path, message)
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    // new keys are allowed; the schema pass rejects unknown ones
                    t.insert(part.to_string(), value);
                    return Ok(());
                }
                t.entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(key, format!("`{part}` is not an array index")))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    Error::config(key, format!("index {idx} out of range (len {len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::config(
                    key,
                    format!("`{part}` is not inside a table"),
                ))
            }
        };
    }
    Err(Error::config(key, "empty key"))
}

/// Parameter set shared by the constant-reference presets.
fn coagulation_base(name: &str) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        plant: PlantConfig {
            d: vec![1.1311, 1.1362, 0.2727],
            x0: vec![500.0, 50.0, 5.0],
        },
        saturation: SaturationParams {
            beta: 50.0,
            k_s: 0.0224,
            eta: 75.0,
        },
        delay: DelayLaw {
            gamma: 4.48,
            k_d: 0.322,
            phi1: 1e-3,
            phi2: 4.0,
        },
        estimate: EstimateConfig {
            gamma_hat: 1.0,
            k_d_hat: 1.0,
            tau_tilde_bar: 3.0,
        },
        gains: ControllerGains {
            k: 0.15,
            lambda: 0.1,
            alpha: 5.0,
        },
        reference: ReferenceSpec::TanhSquared {
            amplitude: 200.0,
            rate: 0.15,
        },
        sim: SimConfig::default(),
        analysis: AnalysisConfig::default(),
    }
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let mut cfg = coagulation_base(name);
    match name {
        "case1_1" => {}
        "case1_2" => {
            cfg.sim.enable_saturation = false;
            cfg.sim.enable_delay = false;
        }
        "case1_3" => cfg.estimate.gamma_hat = 0.1,
        "case1_4" => cfg.delay.gamma = 0.0448,
        "case2" => {
            cfg.reference = ReferenceSpec::Sinusoid {
                amplitude: 100.0,
                rate: 0.15,
                offset: 300.0,
            };
            cfg.sim.t_end = 200.0;
        }
        _ => return Err(Error::UnknownPreset(name.to_string())),
    }
    Ok(cfg)
}

/// Resolves a preset name or a TOML file path, then applies overrides.
pub fn parse_config<S: AsRef<str>>(source: &str, overrides: &[S]) -> Result<ScenarioConfig> {
    let base = if PRESETS.contains(&source) {
        preset(source)?
    } else {
        let path = Path::new(source);
        if !path.exists() {
            return Err(Error::UnknownPreset(source.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        ScenarioConfig::from_toml(&text)?
    };
    base.with_overrides(overrides)
}

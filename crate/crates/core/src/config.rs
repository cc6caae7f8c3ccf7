//! Flat `key = value` scenario configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Unknown and repeated keys are errors. `material_preset` supplies the
//! physical constants, and any explicit `alpha`, `beta`, `k`, `L` or `T_m`
//! overrides the preset value regardless of line order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::controller::ControllerGains;
use crate::diagnostics::{BacksteppingParams, LyapunovConstants};
use crate::model::{self, AssumptionViolation, InitialCondition, MaterialPreset, PlantParams, ProfileShape, Setpoint};
use crate::solver::{SolverSettings, StencilOrder};

pub const KEYS: &[&str] = &[
    "material_preset",
    "alpha",
    "beta",
    "k",
    "L",
    "T_m",
    "s0",
    "s_r",
    "qc0",
    "T0_profile",
    "T0_amplitude",
    "N",
    "dt",
    "t_final",
    "c1",
    "c2",
    "delta1",
    "delta2",
    "epsilon",
    "cfl_safety",
    "flux_stencil_order",
    "record_interval",
    "stop_fraction",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("{key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("configuration violates: {}", list(.0))]
    Assumptions(Vec<AssumptionViolation>),
}

fn list(v: &[AssumptionViolation]) -> String {
    v.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("; ")
}

/// A fully resolved and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub preset: Option<MaterialPreset>,
    pub params: PlantParams,
    pub s0: f64,
    pub setpoint: Setpoint,
    pub qc0: f64,
    pub profile: ProfileShape,
    pub amplitude: f64,
    pub gains: ControllerGains,
    pub epsilon: f64,
    pub settings: SolverSettings,
    pub t_final: f64,
    /// Trace decimation interval [s]; event rows and the final row are
    /// always kept.
    pub record_interval: f64,
    /// Stop once `|s − s_r| < stop_fraction·(s_r − s0)`; `0` disables.
    pub stop_fraction: f64,
}

pub const DEFAULT_T_FINAL: f64 = 1.0e4;
pub const DEFAULT_RECORDS: f64 = 5000.0;
pub const DEFAULT_STOP_FRACTION: f64 = 0.02;
pub const DEFAULT_CFL: f64 = 0.9;

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Builds a config from already-split pairs; used by sweeps to apply
    /// overrides on top of a base file.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        for key in pairs.keys() {
            if !KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { line: 0, key: key.clone() });
            }
        }
        let num = |key: &str| -> Result<Option<f64>, ConfigError> {
            pairs
                .get(key)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| ConfigError::InvalidValue {
                        key: key.to_string(),
                        message: format!("not a number: {v:?}"),
                    })
                })
                .transpose()
        };
        let or = |key: &str, default: f64| -> Result<f64, ConfigError> { Ok(num(key)?.unwrap_or(default)) };

        let preset = match pairs.get("material_preset") {
            Some(name) => Some(MaterialPreset::from_name(name).ok_or_else(|| ConfigError::InvalidValue {
                key: "material_preset".into(),
                message: format!("unknown preset {name:?} (expected zinc or nondimensional)"),
            })?),
            None if ["alpha", "beta", "k", "T_m"].iter().all(|k| pairs.contains_key(*k)) => None,
            None => Some(MaterialPreset::Zinc),
        };
        let base = preset.map(|p| p.params()).unwrap_or(PlantParams {
            alpha: f64::NAN,
            beta: f64::NAN,
            k: f64::NAN,
            length: model::DEFAULT_LENGTH,
            t_melt: f64::NAN,
        });
        let params = PlantParams {
            alpha: or("alpha", base.alpha)?,
            beta: or("beta", base.beta)?,
            k: or("k", base.k)?,
            length: or("L", base.length)?,
            t_melt: or("T_m", base.t_melt)?,
        };

        let profile = match pairs.get("T0_profile") {
            None => ProfileShape::Linear,
            Some(v) => ProfileShape::from_name(v).ok_or_else(|| ConfigError::InvalidValue {
                key: "T0_profile".into(),
                message: format!("expected linear or flat, got {v:?}"),
            })?,
        };
        let amplitude = match (profile, num("T0_amplitude")?) {
            (ProfileShape::Linear, a) => a.unwrap_or(1.0),
            (ProfileShape::Flat, None) => 0.0,
            (ProfileShape::Flat, Some(a)) if a == 0.0 => 0.0,
            (ProfileShape::Flat, Some(a)) => {
                return Err(ConfigError::InvalidValue {
                    key: "T0_amplitude".into(),
                    message: format!("a flat profile is T ≡ T_m; amplitude {a} is meaningless"),
                })
            }
        };

        let n = match num("N")? {
            None => 200,
            Some(v) if v.fract() == 0.0 && (0.0..1e7).contains(&v) => v as usize,
            Some(v) => {
                return Err(ConfigError::InvalidValue {
                    key: "N".into(),
                    message: format!("must be a non-negative integer, got {v}"),
                })
            }
        };
        let stencil = match num("flux_stencil_order")? {
            None => StencilOrder::First,
            Some(v) if v == 1.0 => StencilOrder::First,
            Some(v) if v == 2.0 => StencilOrder::Second,
            Some(v) => {
                return Err(ConfigError::InvalidValue {
                    key: "flux_stencil_order".into(),
                    message: format!("must be 1 or 2, got {v}"),
                })
            }
        };

        let s0 = or("s0", 0.05)?;
        let cfl = or("cfl_safety", DEFAULT_CFL)?;
        let dt = match num("dt")? {
            Some(dt) => dt,
            None => SolverSettings::stability_limit(s0, n, params.alpha, cfl),
        };
        let gains = ControllerGains::new(
            or("c1", 3.2e-3)?,
            or("c2", 5e-3)?,
            or("delta1", 10.0)?,
            or("delta2", 0.3)?,
        );
        let t_final = or("t_final", DEFAULT_T_FINAL)?;

        let epsilon = match num("epsilon")? {
            Some(e) => e,
            None => BacksteppingParams::default_epsilon(&params, gains.c1),
        };

        let cfg = Self {
            preset,
            params,
            s0,
            setpoint: Setpoint { s_r: or("s_r", 0.30)? },
            qc0: or("qc0", 0.0)?,
            profile,
            amplitude,
            gains,
            epsilon,
            settings: SolverSettings {
                n,
                dt,
                cfl_safety: cfl,
                stencil,
            },
            t_final,
            record_interval: or("record_interval", t_final / DEFAULT_RECORDS)?,
            stop_fraction: or("stop_fraction", DEFAULT_STOP_FRACTION)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn initial_condition(&self) -> InitialCondition {
        InitialCondition::from_shape(
            &self.params,
            self.profile,
            self.s0,
            self.amplitude,
            self.settings.n,
            self.qc0,
        )
    }

    pub fn backstepping(&self) -> BacksteppingParams {
        BacksteppingParams::new(&self.params, self.gains.c1, self.epsilon)
            .expect("epsilon validated at load")
    }

    pub fn lyapunov(&self) -> LyapunovConstants {
        LyapunovConstants::new(&self.params, &self.setpoint, &self.gains, self.epsilon)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: String| ConfigError::InvalidValue {
            key: key.to_string(),
            message,
        };
        if let Err(msg) = self.settings.validate() {
            return Err(invalid("solver", msg));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(invalid("t_final", format!("must be finite and >= 0, got {}", self.t_final)));
        }
        if !(self.record_interval >= 0.0) {
            return Err(invalid("record_interval", format!("must be >= 0, got {}", self.record_interval)));
        }
        if !(0.0..1.0).contains(&self.stop_fraction) {
            return Err(invalid("stop_fraction", format!("must be in [0, 1), got {}", self.stop_fraction)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(invalid("T0_amplitude", format!("must be finite and >= 0, got {}", self.amplitude)));
        }
        model::validate_config(&self.params, &self.initial_condition(), &self.setpoint, &self.gains)
            .map_err(ConfigError::Assumptions)?;
        if let Err(e) = BacksteppingParams::new(&self.params, self.gains.c1, self.epsilon) {
            return Err(invalid("epsilon", e.to_string()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a form [`Config::parse`] accepts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(p) = self.preset {
            put("material_preset", p.name().into());
        }
        put("alpha", self.params.alpha.to_string());
        put("beta", self.params.beta.to_string());
        put("k", self.params.k.to_string());
        put("L", self.params.length.to_string());
        put("T_m", self.params.t_melt.to_string());
        put("s0", self.s0.to_string());
        put("s_r", self.setpoint.s_r.to_string());
        put("qc0", self.qc0.to_string());
        put("T0_profile", self.profile.name().into());
        if self.profile == ProfileShape::Linear {
            put("T0_amplitude", self.amplitude.to_string());
        }
        put("N", self.settings.n.to_string());
        put("dt", self.settings.dt.to_string());
        put("t_final", self.t_final.to_string());
        put("c1", self.gains.c1.to_string());
        put("c2", self.gains.c2.to_string());
        put("delta1", self.gains.delta1.to_string());
        put("delta2", self.gains.delta2.to_string());
        put("epsilon", self.epsilon.to_string());
        put("cfl_safety", self.settings.cfl_safety.to_string());
        put("flux_stencil_order", self.settings.stencil.order().to_string());
        put("record_interval", self.record_interval.to_string());
        put("stop_fraction", self.stop_fraction.to_string());
        out
    }
}

/// Splits config text into key/value pairs, rejecting unknown and repeated
/// keys with the offending line number.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut pairs = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: "empty key or value".into(),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.into() });
        }
        if pairs.insert(key.to_string(), value.to_string()).is_some() {
            return Err(ConfigError::DuplicateKey { line, key: key.into() });
        }
    }
    Ok(pairs)
}

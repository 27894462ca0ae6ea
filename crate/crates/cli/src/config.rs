//! Problem configuration files.
//!
//! A configuration is a JSON document tagged `"version": "osl-synth/1"`.
//! Schema errors carry the JSON path of the offending field; semantic errors
//! (expressions, box inclusion, mode numbering) use the same path notation.

use std::fmt;
use std::path::Path;

use osl_synth::constants::EstimatorConfig;
use osl_synth::expr::VectorField;
use osl_synth::synth::SynthesisProblem;
use osl_synth::system::{Affine, Mode, ModeConstants, SwitchedSystem};
use osl_synth::IntervalBox;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: &str = "osl-synth/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub dimension: usize,
    pub tau: f64,
    #[serde(default = "one")]
    pub substeps: usize,
    pub modes: Vec<ModeConfig>,
    #[serde(rename = "R")]
    pub r: IntervalBox,
    #[serde(rename = "S")]
    pub s: IntervalBox,
    #[serde(rename = "R2", default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<IntervalBox>,
    pub grid: Vec<usize>,
    pub max_pattern_length: usize,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constants_override: Option<Vec<OverrideConfig>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub id: usize,
    /// One expression per state component, over `x1..xn`.
    pub field: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineConfig>,
}

/// `f(x) = A x + b` with `A` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineConfig {
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideConfig {
    pub mode: usize,
    pub lambda: f64,
    pub lipschitz: f64,
    pub c: f64,
    /// Defaults to `c / lipschitz` (or 0 when `lipschitz` is 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Schema(Located),
    #[error("{0}")]
    Invalid(Located),
}

/// A message attached to a JSON path such as `modes[1].field[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Located {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(Located { path: path.into(), message: message.into() })
}

/// Deserializes JSON with path-annotated errors.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema(Located { path, message: e.into_inner().to_string() })
    })
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = from_json(text)?;
        if cfg.version != FORMAT_VERSION {
            return Err(invalid("version", format!("expected \"{FORMAT_VERSION}\", found \"{}\"", cfg.version)));
        }
        Ok(cfg)
    }

    /// Reads, parses and validates a configuration file.
    pub fn load(path: &Path) -> Result<(Self, SwitchedSystem), ConfigError> {
        let cfg = Self::parse(&read_file(path)?)?;
        let system = cfg.validate()?;
        Ok((cfg, system))
    }

    /// Semantic validation; returns the switched system on success.
    pub fn validate(&self) -> Result<SwitchedSystem, ConfigError> {
        let n = self.dimension;
        if n == 0 {
            return Err(invalid("dimension", "must be at least 1"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(invalid("tau", "must be finite and positive"));
        }
        if self.substeps == 0 {
            return Err(invalid("substeps", "must be at least 1"));
        }
        if self.modes.is_empty() {
            return Err(invalid("modes", "at least one mode is required"));
        }
        let mut modes = Vec::with_capacity(self.modes.len());
        for (k, m) in self.modes.iter().enumerate() {
            let here = format!("modes[{k}]");
            if m.id != k + 1 {
                return Err(invalid(format!("{here}.id"), format!("expected {}, found {}", k + 1, m.id)));
            }
            if m.field.len() != n {
                return Err(invalid(
                    format!("{here}.field"),
                    format!("expected {n} components, found {}", m.field.len()),
                ));
            }
            let field = VectorField::parse(&m.field).map_err(|(c, e)| {
                invalid(format!("{here}.field[{}]", c - 1), format!("at byte {}: {}", e.offset, e.kind))
            })?;
            let affine = match &m.affine {
                None => None,
                Some(a) => {
                    if a.a.len() != n * n || a.b.len() != n {
                        return Err(invalid(
                            format!("{here}.affine"),
                            format!("expected {} entries in A and {n} in b", n * n),
                        ));
                    }
                    Some(Affine { matrix: a.a.clone(), offset: a.b.clone() })
                }
            };
            modes.push(Mode::new(m.id, field, affine).map_err(|e| invalid(here, e.to_string()))?);
        }
        for (name, b) in [("R", Some(&self.r)), ("S", Some(&self.s)), ("R2", self.r2.as_ref())] {
            if let Some(b) = b {
                if b.dim() != n {
                    return Err(invalid(name, format!("expected {n} intervals, found {}", b.dim())));
                }
            }
        }
        if !self.s.contains_box(&self.r) {
            return Err(invalid("R", "must lie inside S"));
        }
        if let Some(r2) = &self.r2 {
            if !self.s.contains_box(r2) {
                return Err(invalid("R2", "must lie inside S"));
            }
        }
        if self.grid.len() != n {
            return Err(invalid("grid", format!("expected {n} counts, found {}", self.grid.len())));
        }
        if let Some(i) = self.grid.iter().position(|&g| g == 0) {
            return Err(invalid(format!("grid[{i}]"), "must be at least 1"));
        }
        if self.max_pattern_length == 0 {
            return Err(invalid("max_pattern_length", "must be at least 1"));
        }
        self.estimator.validate().map_err(|e| invalid("estimator", e.to_string()))?;
        if let Some(ov) = &self.constants_override {
            if ov.len() != self.modes.len() {
                return Err(invalid(
                    "constants_override",
                    format!("expected one entry per mode ({}), found {}", self.modes.len(), ov.len()),
                ));
            }
            for (k, o) in ov.iter().enumerate() {
                if o.mode != k + 1 {
                    return Err(invalid(
                        format!("constants_override[{k}].mode"),
                        format!("expected {}, found {}", k + 1, o.mode),
                    ));
                }
                if !override_constants(o).is_well_formed() {
                    return Err(invalid(
                        format!("constants_override[{k}]"),
                        "values must be finite and lipschitz, c, m non-negative",
                    ));
                }
            }
        }
        SwitchedSystem::new(n, modes, self.tau, self.substeps).map_err(|e| invalid("modes", e.to_string()))
    }

    /// Pretty JSON with fields in declaration order; the hashed form.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn override_table(&self) -> Option<Vec<ModeConstants>> {
        self.constants_override.as_ref().map(|ov| ov.iter().map(override_constants).collect())
    }

    pub fn problem(&self, system: SwitchedSystem, constants: Vec<ModeConstants>) -> SynthesisProblem {
        SynthesisProblem {
            system,
            constants,
            r: self.r.clone(),
            s: self.s.clone(),
            r2: self.r2.clone(),
            grid: self.grid.clone(),
            max_len: self.max_pattern_length,
        }
    }
}

fn override_constants(o: &OverrideConfig) -> ModeConstants {
    let m = o.m.unwrap_or(if o.lipschitz > 0.0 { o.c / o.lipschitz } else { 0.0 });
    ModeConstants { lambda: o.lambda, lipschitz: o.lipschitz, c: o.c, m }
}

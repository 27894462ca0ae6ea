//! Files written by `constants` and `synth`.
//!
//! Both embed the hash of the configuration they were computed from. The
//! controller file also embeds the configuration itself so `simulate` can
//! rebuild the system without the original file.

use std::path::Path;

use osl_synth::constants::ModeEstimate;
use osl_synth::synth::Controller;
use osl_synth::system::{ModeConstants, SwitchedSystem};
use osl_synth::IntervalBox;
use serde::{Deserialize, Serialize};

use crate::config::{from_json, read_file, ConfigError, Located, ProblemConfig, FORMAT_VERSION};

/// Where the constants used for synthesis came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsSource {
    Override,
    Estimated,
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    pub version: String,
    pub config_hash: String,
    pub t_box: IntervalBox,
    pub sound: bool,
    pub modes: Vec<ModeEstimate>,
}

impl ConstantsFile {
    pub fn table(&self) -> Vec<ModeConstants> {
        self.modes.iter().map(|m| m.constants).collect()
    }

    /// Reads a report and checks it belongs to `config`.
    pub fn load_for(path: &Path, config: &ProblemConfig) -> Result<Self, ConfigError> {
        let file: Self = from_json(&read_file(path)?)?;
        check_version(&file.version)?;
        if file.config_hash != config.hash() {
            return Err(mismatch("config_hash", "constants report was computed for a different configuration"));
        }
        if file.modes.len() != config.modes.len() {
            return Err(mismatch("modes", "constants report has the wrong number of modes"));
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub version: String,
    pub config_hash: String,
    pub config: ProblemConfig,
    pub constants_source: ConstantsSource,
    pub constants: Vec<ModeConstants>,
    pub complete: bool,
    pub controllers: Vec<Controller>,
}

impl ControllerFile {
    /// Reads a controller, checks the embedded hash and rebuilds the system.
    pub fn load(path: &Path) -> Result<(Self, SwitchedSystem), ConfigError> {
        let file: Self = from_json(&read_file(path)?)?;
        check_version(&file.version)?;
        if file.config_hash != file.config.hash() {
            return Err(mismatch("config_hash", "does not match the embedded configuration"));
        }
        let system = file.config.validate().map_err(|e| match e {
            ConfigError::Invalid(l) | ConfigError::Schema(l) => {
                ConfigError::Invalid(Located { path: format!("config.{}", l.path), message: l.message })
            }
            other => other,
        })?;
        if file.constants.len() != system.num_modes() {
            return Err(mismatch("constants", "one entry per mode is required"));
        }
        for (k, ctl) in file.controllers.iter().enumerate() {
            for b in &ctl.balls {
                if let Some(p) = &b.pattern {
                    p.validate(system.num_modes())
                        .map_err(|e| mismatch(format!("controllers[{k}].balls[{}].pattern", b.index), e.to_string()))?;
                }
            }
        }
        Ok((file, system))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("controller serializes") + "\n"
    }
}

fn check_version(v: &str) -> Result<(), ConfigError> {
    if v != FORMAT_VERSION {
        return Err(mismatch("version", format!("expected \"{FORMAT_VERSION}\", found \"{v}\"")));
    }
    Ok(())
}

fn mismatch(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(Located { path: path.into(), message: message.into() })
}

//! Versioned JSON configuration covering every module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationConfig};
use crate::error::{Error, Result, Violation};
use crate::fsm::{HomingConfig, TaskConfig};
use crate::motion::PidGains;
use crate::observer::{Calibration, ObserverConfig};
use crate::params::ArmParams;
use crate::safety::{ContactMedium, StabConfig, StabInputs};
use crate::session::SessionConfig;
use crate::tracking::{TrackConfig, TrackInputs};
use crate::workspace::{SearchGrid, WorkspaceSpec};

pub const SCHEMA_VERSION: u32 = 1;

fn committed_threshold() -> Option<Calibration> {
    Some(Calibration::committed())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub arm: ArmParams,
    #[serde(default)]
    pub observer: ObserverConfig,
    /// Residual threshold. `null` recalibrates from `calibration` on use.
    #[serde(default = "committed_threshold")]
    pub threshold: Option<Calibration>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub gains: PidGains,
    #[serde(default)]
    pub track: TrackConfig,
    #[serde(default)]
    pub workspace: WorkspaceSpec,
    #[serde(default)]
    pub grid: SearchGrid,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub homing: HomingConfig,
    #[serde(default)]
    pub medium: ContactMedium,
    #[serde(default)]
    pub stab: StabConfig,
    #[serde(default)]
    pub session: SessionConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            arm: ArmParams::default(),
            observer: ObserverConfig::default(),
            threshold: committed_threshold(),
            calibration: CalibrationConfig::default(),
            gains: PidGains::default(),
            track: TrackConfig::default(),
            workspace: WorkspaceSpec::default(),
            grid: SearchGrid::default(),
            task: TaskConfig::default(),
            homing: HomingConfig::default(),
            medium: ContactMedium::default(),
            stab: StabConfig::default(),
            session: SessionConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(Violation::new("schema_version", format!("unsupported version (expected {SCHEMA_VERSION})")));
        }
        v.extend(self.arm.violations("arm"));
        v.extend(self.observer.violations("observer"));
        if let Some(c) = &self.threshold {
            if !c.epsilon_r.iter().chain(c.r_hat_max.iter()).all(|x| x.is_finite() && *x >= 0.0) {
                v.push(Violation::new("threshold", "values must be finite and >= 0"));
            }
        }
        v.extend(self.calibration.violations("calibration", &self.arm));
        v.extend(self.gains.violations("gains"));
        v.extend(self.track.violations("track", &self.arm));
        v.extend(self.workspace.violations("workspace"));
        v.extend(self.grid.violations("grid"));
        v.extend(self.task.violations("task", &self.arm));
        v.extend(self.homing.violations("homing"));
        v.extend(self.medium.violations("medium"));
        v.extend(self.stab.violations("stab"));
        v.extend(self.session.violations("session"));
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Committed threshold, or a fresh calibration when none is set.
    pub fn threshold(&self) -> Result<Calibration> {
        match self.threshold {
            Some(c) => Ok(c),
            None => calibrate(&self.arm, &self.observer, &self.gains, &self.calibration),
        }
    }

    pub fn track_inputs(&self, threshold: Calibration) -> TrackInputs<'_> {
        TrackInputs { arm: &self.arm, observer: &self.observer, threshold, gains: &self.gains, track: &self.track }
    }

    pub fn stab_inputs(&self, threshold: Calibration) -> StabInputs<'_> {
        StabInputs {
            arm: &self.arm,
            observer: &self.observer,
            threshold,
            gains: &self.gains,
            stab: &self.stab,
            medium: &self.medium,
        }
    }
}

/// Read, parse and validate a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path)?;
    SimConfig::from_json(&text)
}

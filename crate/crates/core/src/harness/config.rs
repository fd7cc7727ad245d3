use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BalanceGains;
use crate::controller::{ControllerConfig, SensorVector};
use crate::sim::PlantConfig;
use crate::{Error, Result};

/// The two behavior conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Adaptive: TiPI gradient ascent during the session, direct servo drive.
    #[serde(rename = "ada", alias = "ADA")]
    Ada,
    /// Frozen pre-adapted network behind the speed/heading balancing loop.
    #[serde(rename = "rea", alias = "balanced-REA", alias = "REA")]
    BalancedRea,
}

impl Condition {
    pub fn tag(&self) -> &'static str {
        match self {
            Condition::Ada => "ada",
            Condition::BalancedRea => "rea",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ada" | "ADA" => Ok(Condition::Ada),
            "rea" | "REA" | "balanced-REA" => Ok(Condition::BalancedRea),
            other => Err(Error::Config(format!(
                "unknown condition {other:?}, expected ada or rea"
            ))),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Ada => f.write_str("ADA"),
            Condition::BalancedRea => f.write_str("balanced-REA"),
        }
    }
}

/// Hand-set starting weights of the adaptive controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Weight from each wheel-speed reading to its own servo.
    pub self_coupling: f64,
    /// Half-width of the uniform draw for the forward model weights.
    pub model_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            self_coupling: 0.8,
            model_scale: 0.1,
        }
    }
}

/// Where perturbations come from: a schedule file, or else a generated
/// nudge every `nudge_interval_s` seconds of sim time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub schedule: Option<PathBuf>,
    /// Zero disables generated nudges.
    pub nudge_interval_s: f64,
    /// N s
    pub nudge_magnitude: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            schedule: None,
            nudge_interval_s: 10.0,
            nudge_magnitude: 0.05,
        }
    }
}

impl PerturbationConfig {
    pub fn none() -> Self {
        PerturbationConfig {
            schedule: None,
            nudge_interval_s: 0.0,
            nudge_magnitude: 0.0,
        }
    }
}

/// Everything that determines a session. Config files (TOML or JSON) may
/// give any subset; missing fields take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub condition: Condition,
    pub duration_steps: u64,
    pub seed: u64,
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
    pub init: InitConfig,
    pub balance: BalanceGains,
    /// Per-channel factor applied to every reading before a controller
    /// sees it: accelerations by 1/(mu g), yaw rate by track/(2 v_max).
    pub sensor_gain: [f64; 5],
    /// Frozen parameter file for the reactive condition.
    pub frozen_params: Option<PathBuf>,
    pub perturbations: PerturbationConfig,
    /// Output directory for logs. Not part of the echoed dynamics.
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            condition: Condition::Ada,
            // 5 min at 20 Hz
            duration_steps: 6000,
            seed: 0,
            plant: PlantConfig::default(),
            controller: ControllerConfig::default(),
            init: InitConfig::default(),
            balance: BalanceGains::default(),
            sensor_gain: [0.2, 0.2, 0.025, 1.0, 1.0],
            frozen_params: None,
            perturbations: PerturbationConfig::default(),
            output: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.duration_steps == 0 {
            return Err(Error::Config("duration_steps must be >= 1".into()));
        }
        self.plant.validate()?;
        self.controller.validate()?;
        self.balance.validate()?;
        let p = &self.perturbations;
        if !(p.nudge_interval_s >= 0.0 && p.nudge_interval_s.is_finite()) {
            return Err(Error::Config("nudge_interval_s must be >= 0".into()));
        }
        if p.nudge_interval_s > 0.0 && !(p.nudge_magnitude >= 0.0 && p.nudge_magnitude <= self.plant.max_impulse)
        {
            return Err(Error::Config(format!(
                "nudge_magnitude must lie in [0, {}]",
                self.plant.max_impulse
            )));
        }
        if self.sensor_gain.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Config("sensor_gain entries must be finite and >= 0".into()));
        }
        if !(self.init.self_coupling.is_finite() && self.init.model_scale >= 0.0) {
            return Err(Error::Config("init values must be finite, model_scale >= 0".into()));
        }
        Ok(())
    }

    /// Parses TOML or JSON, chosen by file extension (`.json` is JSON,
    /// anything else TOML). Relative paths inside are resolved against the
    /// config file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        if let Some(dir) = path.parent() {
            let resolve = |p: &mut Option<PathBuf>| {
                if let Some(inner) = p {
                    if inner.is_relative() {
                        *inner = dir.join(&*inner);
                    }
                }
            };
            resolve(&mut cfg.frozen_params);
            resolve(&mut cfg.perturbations.schedule);
            resolve(&mut cfg.output);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    /// The reading as the controllers see it.
    pub fn scale_sensors(&self, s: &SensorVector) -> Result<SensorVector> {
        let v: Vec<f64> = s
            .to_vec()
            .iter()
            .zip(self.sensor_gain.iter())
            .map(|(v, g)| v * g)
            .collect();
        if v.len() != s.len() {
            return Err(Error::RejectedInput(format!(
                "expected {} sensor channels, got {}",
                self.sensor_gain.len(),
                s.len()
            )));
        }
        SensorVector::from_slice(&v)
    }

    /// Nudge interval in steps; 0 when generated nudges are off.
    pub fn nudge_interval_steps(&self) -> u64 {
        let p = &self.perturbations;
        if p.nudge_interval_s <= 0.0 {
            return 0;
        }
        (p.nudge_interval_s / self.plant.dt).round().max(1.0) as u64
    }
}

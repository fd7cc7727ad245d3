//! The frozen reactive condition.
//!
//! A pre-adapted network is frozen and its two outputs are read as a speed
//! and a heading increment. A proportional heading-hold loop turns that into
//! wheel commands, the way the robot's balancing mode does.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{
    controller_act, CovarianceEstimator, Diagnostics, LoopWindow, MotorVector,
    NetworkParams, ParamSnapshot, SensorVector,
};
use crate::harness::{ada_controller, SessionConfig};
use crate::sim::{wrap_angle, ActiveSet, Plant, RobotState};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub steps: u64,
    pub digest: String,
}

/// On-disk layout: the parameter snapshot plus a provenance record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FrozenFile {
    #[serde(flatten)]
    snapshot: ParamSnapshot,
    provenance: Provenance,
}

/// Immutable pre-adapted parameters. No method hands out mutable access.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenParams {
    snapshot: ParamSnapshot,
    params: NetworkParams,
    provenance: Provenance,
}

impl FrozenParams {
    pub fn freeze(snapshot: ParamSnapshot, seed: u64, steps: u64) -> Result<Self> {
        let params = snapshot.params()?;
        let digest = snapshot.digest();
        Ok(FrozenParams {
            snapshot,
            params,
            provenance: Provenance {
                seed,
                steps,
                digest,
            },
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn snapshot(&self) -> &ParamSnapshot {
        &self.snapshot
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Digest recomputed from the parameters actually held.
    pub fn digest(&self) -> String {
        self.snapshot.digest()
    }

    pub fn to_json(&self) -> String {
        let file = FrozenFile {
            snapshot: self.snapshot.clone(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&file).expect("frozen params serialize")
    }

    /// Parses and checks that the recorded digest matches the content.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: FrozenFile = serde_json::from_str(text)?;
        let digest = file.snapshot.digest();
        if digest != file.provenance.digest {
            return Err(Error::Config(format!(
                "frozen params digest mismatch: recorded {}, content {digest}",
                file.provenance.digest
            )));
        }
        Ok(FrozenParams {
            params: file.snapshot.params()?,
            snapshot: file.snapshot,
            provenance: file.provenance,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Runs the adaptive controller of `cfg` on an empty table for `steps`
/// ticks and freezes the result. Perturbation and condition settings of
/// `cfg` are ignored.
pub fn pre_adapt(cfg: &SessionConfig, seed: u64, steps: u64) -> Result<FrozenParams> {
    if steps == 0 {
        return Err(Error::Config("pre-adaptation needs at least one step".into()));
    }
    cfg.plant.validate()?;
    let mut sim = Plant::new(cfg.plant, seed)?;
    let mut ctl = ada_controller(&cfg.plant, &cfg.controller, &cfg.init, seed)?;
    let idle = ActiveSet::default();
    for _ in 0..steps {
        let s = cfg.scale_sensors(&sim.sense()?)?;
        let (y, _) = ctl.step(&s)?;
        sim.advance(&y, &idle)?;
    }
    FrozenParams::freeze(ctl.snapshot(), seed, steps)
}

/// Gains of the speed/heading interface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceGains {
    /// Differential wheel command per rad of heading error.
    pub k_p: f64,
    /// Heading increment in rad per tick at full second output.
    pub k_h: f64,
}

impl Default for BalanceGains {
    fn default() -> Self {
        BalanceGains { k_p: 0.3, k_h: 0.2 }
    }
}

impl BalanceGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_p.is_finite() && self.k_h.is_finite()) {
            return Err(Error::Config("balance gains must be finite".into()));
        }
        Ok(())
    }
}

/// What the balancing controller receives: a speed and an absolute heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceCommand {
    /// Normalized forward speed in `[0, 1]`.
    pub speed: f64,
    /// Absolute heading in `(-pi, pi]`, zero at session start.
    pub heading: f64,
}

/// Maps the frozen network output to a balance command. `held_heading` is
/// the heading set on the previous tick.
pub fn reactive_act(
    s: &SensorVector,
    fp: &FrozenParams,
    held_heading: f64,
    gains: &BalanceGains,
) -> Result<BalanceCommand> {
    let y = controller_act(s, &fp.params().controller)?;
    let y = y.as_vector();
    if y.len() != 2 {
        return Err(Error::RejectedInput("reactive mapping needs two outputs".into()));
    }
    Ok(command_from_outputs(y[0], y[1], held_heading, gains))
}

pub(crate) fn command_from_outputs(
    y_speed: f64,
    y_turn: f64,
    held_heading: f64,
    gains: &BalanceGains,
) -> BalanceCommand {
    BalanceCommand {
        speed: ((y_speed + 1.0) / 2.0).clamp(0.0, 1.0),
        heading: wrap_angle(held_heading + gains.k_h * y_turn),
    }
}

/// Heading-hold: common mode from speed, differential from heading error.
pub fn balance_to_wheels(
    cmd: &BalanceCommand,
    state: &RobotState,
    gains: &BalanceGains,
) -> MotorVector {
    let turn = gains.k_p * wrap_angle(cmd.heading - state.heading);
    let left = (cmd.speed - turn).clamp(-1.0, 1.0);
    let right = (cmd.speed + turn).clamp(-1.0, 1.0);
    MotorVector::from_slice(&[left, right]).expect("clamped command is valid")
}

/// Per-session state of the reactive condition: the frozen network, the
/// held heading and a passive loop monitor that measures (but never acts
/// on) the deviation process under the frozen parameters.
#[derive(Clone, Debug)]
pub struct ReactiveController {
    frozen: FrozenParams,
    gains: BalanceGains,
    heading: f64,
    window: LoopWindow,
    estimator: CovarianceEstimator,
    tick: u64,
}

impl ReactiveController {
    pub fn new(frozen: FrozenParams, gains: BalanceGains) -> Result<Self> {
        gains.validate()?;
        let n = frozen.params().sensor_dim();
        let cfg = frozen.snapshot().config();
        Ok(ReactiveController {
            estimator: CovarianceEstimator::new(n, cfg.ema_decay, cfg.ridge)?,
            window: LoopWindow::new(n),
            frozen,
            gains,
            heading: 0.0,
            tick: 0,
        })
    }

    pub fn frozen(&self) -> &FrozenParams {
        &self.frozen
    }

    pub fn held_heading(&self) -> f64 {
        self.heading
    }

    /// Sets the held heading, e.g. to the robot's heading when the condition
    /// takes over mid-session.
    pub fn hold_heading(&mut self, heading: f64) {
        self.heading = wrap_angle(heading);
    }

    pub fn step(
        &mut self,
        s: &SensorVector,
        state: &RobotState,
    ) -> Result<(MotorVector, BalanceCommand, Diagnostics)> {
        let n = self.window.sensor_dim();
        let mut diag = Diagnostics {
            tick: self.tick,
            warm: false,
            learned: false,
            non_finite: false,
            tipi: 0.0,
            xi_norm: 0.0,
            update_norm: 0.0,
            ds_t: nalgebra::DVector::zeros(n),
            xi_tm1: nalgebra::DVector::zeros(n),
        };
        if self.window.readings() >= 2 {
            let p = self.frozen.params();
            match self.window.update(s.clone(), p, p) {
                Ok(()) => {
                    diag.warm = true;
                    diag.ds_t = self.window.ds_t.clone();
                    diag.xi_tm1 = self.window.xi_tm1.clone();
                    diag.xi_norm = self.window.xi_tm1.norm();
                    let mut est = self.estimator.clone();
                    match est.update(&self.window).and_then(|_| est.tipi_value()) {
                        Ok(v) => {
                            diag.tipi = v;
                            self.estimator = est;
                        }
                        Err(_) => diag.non_finite = true,
                    }
                }
                Err(Error::NumericDomain(_)) => {
                    self.window.prime(s.clone())?;
                    diag.non_finite = true;
                }
                Err(e) => return Err(e),
            }
        } else {
            self.window.prime(s.clone())?;
        }

        let cmd = reactive_act(s, &self.frozen, self.heading, &self.gains)?;
        self.heading = cmd.heading;
        let motor = balance_to_wheels(&cmd, state, &self.gains);
        self.tick += 1;
        Ok((motor, cmd, diag))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{step_physics, PlantConfig, SensorNoise};

    #[test]
    fn output_mapping() {
        let g = BalanceGains::default();
        let c = command_from_outputs(1.0, 0.0, 0.3, &g);
        assert_eq!((c.speed, c.heading), (1.0, 0.3));
        let c = command_from_outputs(-1.0, 0.0, 0.3, &g);
        assert_eq!(c.speed, 0.0);
        let c = command_from_outputs(0.0, 1.0, 0.3, &g);
        assert_eq!(c.speed, 0.5);
        assert!((c.heading - (0.3 + g.k_h)).abs() < 1e-15);
    }

    #[test]
    fn heading_wraps() {
        let g = BalanceGains { k_p: 1.0, k_h: 0.5 };
        let c = command_from_outputs(0.0, 1.0, 3.0, &g);
        assert!(c.heading > -std::f64::consts::PI && c.heading < 0.0);
    }

    #[test]
    fn pure_common_and_pure_differential_mode() {
        let g = BalanceGains::default();
        let state = RobotState::default();
        let y = balance_to_wheels(&BalanceCommand { speed: 0.4, heading: 0.0 }, &state, &g);
        assert_eq!(y.to_vec(), vec![0.4, 0.4]);
        let y = balance_to_wheels(&BalanceCommand { speed: 0.0, heading: 0.1 }, &state, &g);
        let v = y.to_vec();
        assert!((v[0] + g.k_p * 0.1).abs() < 1e-15 && (v[1] - g.k_p * 0.1).abs() < 1e-15);
        let y = balance_to_wheels(&BalanceCommand { speed: 0.0, heading: 0.0 }, &state, &g);
        assert_eq!(y.to_vec(), vec![0.0, 0.0]);
        let y = balance_to_wheels(&BalanceCommand { speed: 1.0, heading: 3.0 }, &state, &g);
        assert!(y.to_vec().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn heading_recovers_after_spin() {
        let mut plant = PlantConfig::default();
        plant.noise = SensorNoise::zero();
        let g = BalanceGains::default();
        let cmd = BalanceCommand { speed: 0.2, heading: 0.0 };
        let mut s = RobotState::default();
        let idle = ActiveSet::default();
        for _ in 0..40 {
            let y = balance_to_wheels(&cmd, &s, &g);
            s = step_physics(&s, &y, plant.dt, &idle, &plant).unwrap();
        }
        // external spin: knock the heading and yaw rate off
        s.heading = wrap_angle(s.heading + 0.8);
        s.ang_vel += 6.0;
        let steps = (2.0 / plant.dt).round() as usize;
        for _ in 0..steps {
            let y = balance_to_wheels(&cmd, &s, &g);
            s = step_physics(&s, &y, plant.dt, &idle, &plant).unwrap();
        }
        let err = wrap_angle(cmd.heading - s.heading).abs();
        assert!(err < 5f64.to_radians(), "heading error {err} rad after 2 s");
    }
}

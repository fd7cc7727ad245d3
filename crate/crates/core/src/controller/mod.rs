//! Online TiPI-maximizing controller.

pub mod covariance;
pub mod learning;
pub mod network;
pub mod snapshot;
pub mod window;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use covariance::{ln_det, CovarianceEstimator};
pub use learning::{
    controller_gradient, model_update, tipi_gradient, ControllerStep, LearningConfig,
};
pub use network::{
    controller_act, loop_jacobian, loop_psi, ControllerParams, ModelParams, MotorVector,
    NetworkParams, SensorVector, PARAM_BOUND,
};
pub use snapshot::ParamSnapshot;
pub use window::LoopWindow;

use crate::{Error, Result};

/// Settings of the covariance estimator and learning rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    #[serde(flatten)]
    pub learning: LearningConfig,
    pub ema_decay: f64,
    pub ridge: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            learning: LearningConfig::default(),
            ema_decay: 0.9,
            ridge: 1e-4,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.learning.validate()?;
        CovarianceEstimator::new(1, self.ema_decay, self.ridge).map(|_| ())
    }
}

/// Per-tick report from [`TipiController::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub tick: u64,
    /// The window held two earlier readings, so deviations were computed.
    pub warm: bool,
    /// Parameters were updated this tick.
    pub learned: bool,
    /// Learning was skipped because an intermediate was not finite.
    pub non_finite: bool,
    pub tipi: f64,
    pub xi_norm: f64,
    pub update_norm: f64,
    pub ds_t: DVector<f64>,
    pub xi_tm1: DVector<f64>,
}

impl Diagnostics {
    fn idle(tick: u64, n: usize) -> Self {
        Diagnostics {
            tick,
            warm: false,
            learned: false,
            non_finite: false,
            tipi: 0.0,
            xi_norm: 0.0,
            update_norm: 0.0,
            ds_t: DVector::zeros(n),
            xi_tm1: DVector::zeros(n),
        }
    }
}

/// Parameters and motor command in force at one past tick.
#[derive(Clone, Debug)]
struct Acted {
    params: NetworkParams,
    motor: MotorVector,
}

/// The full adaptive controller state. A plain value: clone it to fork a run.
#[derive(Clone, Debug)]
pub struct TipiController {
    params: NetworkParams,
    config: ControllerConfig,
    window: LoopWindow,
    estimator: CovarianceEstimator,
    /// `[t-2, t-1]` relative to the next reading.
    acted: [Option<Acted>; 2],
    tick: u64,
    seed: u64,
}

impl TipiController {
    pub fn new(params: NetworkParams, config: ControllerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if !params.is_finite() {
            return Err(Error::RejectedInput("initial parameters are not finite".into()));
        }
        let n = params.sensor_dim();
        Ok(TipiController {
            window: LoopWindow::new(n),
            estimator: CovarianceEstimator::new(n, config.ema_decay, config.ridge)?,
            params,
            config,
            acted: [None, None],
            tick: 0,
            seed,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn window(&self) -> &LoopWindow {
        &self.window
    }

    pub fn estimator(&self) -> &CovarianceEstimator {
        &self.estimator
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Forgets the sensor and action history, keeping parameters and
    /// covariance moments. Learning resumes two ticks later. Used when the
    /// controller takes over a robot it has not been driving.
    pub fn restart_window(&mut self) {
        self.window = LoopWindow::new(self.params.sensor_dim());
        self.acted = [None, None];
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot::capture(&self.params, &self.config, self.seed)
    }

    /// One tick of the loop: slide the window to `s_t`, fold the new
    /// deviations into the covariances, train the forward model, take the
    /// controller gradient step and finally act on `s_t` with the updated
    /// controller.
    ///
    /// Learning is off for the first two ticks. A non-finite intermediate
    /// skips learning for the tick and sets [`Diagnostics::non_finite`];
    /// the controller still acts.
    pub fn step(&mut self, s_t: &SensorVector) -> Result<(MotorVector, Diagnostics)> {
        let n = self.params.sensor_dim();
        if s_t.len() != n {
            return Err(Error::RejectedInput(format!(
                "controller reads {n} sensors, got {}",
                s_t.len()
            )));
        }
        let tick = self.tick;
        let mut diag = Diagnostics::idle(tick, n);

        match &self.acted {
            [Some(tm2), Some(tm1)] => {
                let (tm2, tm1) = (tm2.clone(), tm1.clone());
                match self.window.update(s_t.clone(), &tm2.params, &tm1.params) {
                    Ok(()) => {
                        diag.warm = true;
                        diag.ds_t = self.window.ds_t.clone();
                        diag.xi_tm1 = self.window.xi_tm1.clone();
                        diag.xi_norm = self.window.xi_tm1.norm();
                        match self.learn(&tm2.motor) {
                            Ok((tipi, update_norm)) => {
                                diag.learned = true;
                                diag.tipi = tipi;
                                diag.update_norm = update_norm;
                            }
                            Err(_) => diag.non_finite = true,
                        }
                    }
                    Err(Error::NumericDomain(_)) | Err(Error::RejectedInput(_)) => {
                        self.window.prime(s_t.clone())?;
                        diag.non_finite = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => self.window.prime(s_t.clone())?,
        }

        let motor = controller_act(s_t, &self.params.controller)?;
        self.acted = [
            self.acted[1].take(),
            Some(Acted {
                params: self.params.clone(),
                motor: motor.clone(),
            }),
        ];
        self.tick += 1;
        Ok((motor, diag))
    }

    /// Covariance update, model update and controller step; commits only if
    /// every intermediate is finite. Returns `(tipi, |dtheta|)`.
    fn learn(&mut self, y_tm2: &MotorVector) -> Result<(f64, f64)> {
        let mut estimator = self.estimator.clone();
        estimator.update(&self.window)?;
        let tipi = estimator.tipi_value()?;
        let model = model_update(&self.window, &self.params.model, y_tm2, &self.config.learning)?;
        let step = controller_gradient(
            &self.window,
            &estimator,
            &self.params.controller,
            &model,
            &self.config.learning,
        )?;
        if !tipi.is_finite() {
            return Err(Error::NumericDomain("non-finite TiPI estimate".into()));
        }
        let model_change = (&model.a - &self.params.model.a).norm_squared()
            + (&model.b - &self.params.model.b).norm_squared();
        let update_norm = (step.norm().powi(2) + model_change).sqrt();

        self.estimator = estimator;
        self.params.model = model;
        step.apply_to(&mut self.params.controller);
        Ok((tipi, update_norm))
    }
}

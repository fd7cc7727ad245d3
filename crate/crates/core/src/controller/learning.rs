//! Parameter updates for both networks.
//!
//! The controller follows the one-shot TiPI gradient
//!
//! ```text
//! dtheta = eps * du^T (dL(s_{t-1}) / dtheta) ds_{t-1},   du = Sigma^-1 ds_t
//! ```
//!
//! which is the exact derivative of `1/2 ln|Sigma|` when `ds_t` is propagated
//! through the linearized loop `ds_t = L(s_{t-1}) ds_{t-1} + xi_t` with the
//! noise `xi_t` held fixed. The forward model does plain gradient descent on
//! its squared one-step prediction error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::covariance::CovarianceEstimator;
use super::network::{ControllerParams, ModelParams, MotorVector};
use super::window::LoopWindow;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    /// Controller update rate.
    pub eps_controller: f64,
    /// Forward model update rate.
    pub eps_model: f64,
    /// Max-norm bound on a single controller update.
    pub grad_clip: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            eps_controller: 0.1,
            eps_model: 0.05,
            grad_clip: 1.0,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_controller", self.eps_controller),
            ("eps_model", self.eps_model),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.grad_clip > 0.0) || self.grad_clip.is_nan() {
            return Err(Error::Config(format!(
                "grad_clip must be > 0, got {}",
                self.grad_clip
            )));
        }
        Ok(())
    }

    /// Both rates zero: the controller becomes a fixed reactive map.
    pub fn frozen() -> Self {
        LearningConfig {
            eps_controller: 0.0,
            eps_model: 0.0,
            grad_clip: 1.0,
        }
    }
}

/// A controller update `(dC, dh)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerStep {
    pub dc: DMatrix<f64>,
    pub dh: DVector<f64>,
}

impl ControllerStep {
    pub fn zeros(m: usize, n: usize) -> Self {
        ControllerStep {
            dc: DMatrix::zeros(m, n),
            dh: DVector::zeros(m),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.dc.amax().max(self.dh.amax())
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        (self.dc.norm_squared() + self.dh.norm_squared()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.dc.iter().chain(self.dh.iter()).all(|v| v.is_finite())
    }

    pub fn apply_to(&self, cp: &mut ControllerParams) {
        cp.c += &self.dc;
        cp.h += &self.dh;
        cp.clamp();
    }
}

/// Unscaled, unclipped gradient of the one-sample objective with respect to
/// `(C, h)`.
pub fn tipi_gradient(
    w: &LoopWindow,
    est: &CovarianceEstimator,
    cp: &ControllerParams,
    mp: &ModelParams,
) -> Result<ControllerStep> {
    if !w.is_warm() {
        return Err(Error::NotWarmedUp { have: w.readings() });
    }
    let (m, n) = cp.c.shape();
    if w.sensor_dim() != n || mp.a.shape() != (n, m) {
        return Err(Error::RejectedInput("window and network dimensions disagree".into()));
    }
    let du = est.sigma_cholesky()?.solve(&w.ds_t);
    let v = &w.ds_tm1;
    let z = cp.preactivation(w.s_tm1.as_vector());

    let mu = mp.a.transpose() * du;
    let cv = &cp.c * v;
    let mut slope = DVector::zeros(m);
    let mut curvature_term = DVector::zeros(m);
    for k in 0..m {
        let t = libm::tanh(z[k]);
        let g1 = 1.0 - t * t;
        let g2 = -2.0 * t * g1;
        slope[k] = mu[k] * g1;
        curvature_term[k] = mu[k] * g2 * cv[k];
    }
    let dc = &slope * v.transpose() + &curvature_term * w.s_tm1.as_vector().transpose();
    let step = ControllerStep {
        dc,
        dh: curvature_term,
    };
    if !step.is_finite() {
        return Err(Error::NumericDomain("controller gradient is not finite".into()));
    }
    Ok(step)
}

/// Controller update: the TiPI gradient scaled by `eps_controller` and
/// rescaled so that no entry exceeds `grad_clip` in magnitude.
pub fn controller_gradient(
    w: &LoopWindow,
    est: &CovarianceEstimator,
    cp: &ControllerParams,
    mp: &ModelParams,
    cfg: &LearningConfig,
) -> Result<ControllerStep> {
    let (m, n) = cp.c.shape();
    if cfg.eps_controller == 0.0 {
        return Ok(ControllerStep::zeros(m, n));
    }
    let mut step = tipi_gradient(w, est, cp, mp)?;
    step.dc *= cfg.eps_controller;
    step.dh *= cfg.eps_controller;
    let peak = step.max_abs();
    if peak > cfg.grad_clip {
        let scale = cfg.grad_clip / peak;
        step.dc *= scale;
        step.dh *= scale;
    }
    Ok(step)
}

/// Forward model step on the prediction error `xi_{t-1}`:
/// `dA = eps_model xi y_{t-2}^T`, `db = eps_model xi`, where `y_{t-2}` is the
/// motor command that the prediction of `s_{t-1}` was made from.
pub fn model_update(
    w: &LoopWindow,
    mp: &ModelParams,
    y_prev: &MotorVector,
    cfg: &LearningConfig,
) -> Result<ModelParams> {
    if !w.is_warm() {
        return Err(Error::NotWarmedUp { have: w.readings() });
    }
    if y_prev.len() != mp.a.ncols() || w.sensor_dim() != mp.a.nrows() {
        return Err(Error::RejectedInput("model update dimensions disagree".into()));
    }
    let mut next = mp.clone();
    if cfg.eps_model == 0.0 {
        return Ok(next);
    }
    let xi = &w.xi_tm1;
    next.a += xi * y_prev.as_vector().transpose() * cfg.eps_model;
    next.b += xi * cfg.eps_model;
    if !next.is_finite() {
        return Err(Error::NumericDomain("model update is not finite".into()));
    }
    next.clamp();
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::network::{NetworkParams, SensorVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn warm_window(rng: &mut ChaCha8Rng, p: &NetworkParams) -> LoopWindow {
        let n = p.sensor_dim();
        let mut w = LoopWindow::new(n);
        w.prime(SensorVector::new(rand_vec(rng, n)).unwrap()).unwrap();
        w.prime(SensorVector::new(rand_vec(rng, n)).unwrap()).unwrap();
        w.update(SensorVector::new(rand_vec(rng, n)).unwrap(), p, p).unwrap();
        w
    }

    fn random_params(rng: &mut ChaCha8Rng, n: usize, m: usize) -> NetworkParams {
        let c = rand_mat(rng, m, n);
        let h = rand_vec(rng, m);
        let a = rand_mat(rng, n, m);
        let b = rand_vec(rng, n);
        NetworkParams::new(
            ControllerParams::new(c, h).unwrap(),
            ModelParams::new(a, b).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_one_step_deviation_gives_zero_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_params(&mut rng, 3, 2);
        let mut w = warm_window(&mut rng, &p);
        w.ds_tm1.fill(0.0);
        let mut est = CovarianceEstimator::new(3, 0.0, 1e-4).unwrap();
        est.update(&w).unwrap();
        let step =
            controller_gradient(&w, &est, &p.controller, &p.model, &LearningConfig::default())
                .unwrap();
        assert_eq!(step, ControllerStep::zeros(2, 3));
    }

    #[test]
    fn zero_rate_gives_zero_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 3, 2);
        let w = warm_window(&mut rng, &p);
        let mut est = CovarianceEstimator::new(3, 0.0, 1e-4).unwrap();
        est.update(&w).unwrap();
        let cfg = LearningConfig {
            eps_controller: 0.0,
            ..LearningConfig::default()
        };
        let step = controller_gradient(&w, &est, &p.controller, &p.model, &cfg).unwrap();
        assert_eq!(step.max_abs(), 0.0);
    }

    #[test]
    fn clip_bounds_max_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng, 4, 2);
        let w = warm_window(&mut rng, &p);
        let mut est = CovarianceEstimator::new(4, 0.0, 1e-4).unwrap();
        est.update(&w).unwrap();
        let raw = tipi_gradient(&w, &est, &p.controller, &p.model).unwrap();
        let clip = raw.max_abs() * 0.25;
        let cfg = LearningConfig {
            eps_controller: 1.0,
            eps_model: 0.0,
            grad_clip: clip,
        };
        let step = controller_gradient(&w, &est, &p.controller, &p.model, &cfg).unwrap();
        assert!((step.max_abs() - clip).abs() < 1e-15);
        // direction preserved
        let ratio = step.dc[(0, 0)] / raw.dc[(0, 0)];
        assert!((ratio - 0.25).abs() < 1e-12);
    }

    #[test]
    fn model_update_no_change_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_params(&mut rng, 3, 2);
        let mut w = warm_window(&mut rng, &p);
        let y = MotorVector::from_slice(&[0.3, -0.2]).unwrap();
        let frozen = LearningConfig {
            eps_model: 0.0,
            ..LearningConfig::default()
        };
        assert_eq!(model_update(&w, &p.model, &y, &frozen).unwrap(), p.model);
        w.xi_tm1.fill(0.0);
        assert_eq!(
            model_update(&w, &p.model, &y, &LearningConfig::default()).unwrap(),
            p.model
        );
    }

    #[test]
    fn model_update_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_params(&mut rng, 3, 2);
        let w = warm_window(&mut rng, &p);
        let y = MotorVector::from_slice(&[0.5, -1.0]).unwrap();
        let cfg = LearningConfig {
            eps_model: 0.01,
            ..LearningConfig::default()
        };
        let next = model_update(&w, &p.model, &y, &cfg).unwrap();
        for i in 0..3 {
            assert!((next.b[i] - p.model.b[i] - 0.01 * w.xi_tm1[i]).abs() < 1e-15);
            for j in 0..2 {
                let expect = p.model.a[(i, j)] + 0.01 * w.xi_tm1[i] * y.as_vector()[j];
                assert!((next.a[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LearningConfig::default().validate().is_ok());
        let bad = LearningConfig {
            grad_clip: 0.0,
            ..LearningConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = LearningConfig {
            eps_model: f64::NAN,
            ..LearningConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}

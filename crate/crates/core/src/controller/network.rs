//! The two networks of the sensorimotor loop.
//!
//! The controller maps sensors to motors, `y = tanh(C s + h)`. The forward
//! model maps motors to the next sensor reading, `s' = A y + b`. Their
//! composition is the loop map `psi(s) = A tanh(C s + h) + b` whose
//! Jacobian drives the learning rule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Every network weight and bias is kept inside `[-PARAM_BOUND, PARAM_BOUND]`.
pub const PARAM_BOUND: f64 = 5.0;

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

/// One sensor reading `s_t`. Entries are always finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorVector(DVector<f64>);

impl SensorVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if !all_finite(values.iter()) {
            return Err(Error::RejectedInput(
                "sensor vector has non-finite entries".into(),
            ));
        }
        Ok(SensorVector(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(n: usize) -> Self {
        SensorVector(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// One motor command `y_t`, each entry in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotorVector(DVector<f64>);

impl MotorVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if !all_finite(values.iter()) {
            return Err(Error::RejectedInput(
                "motor vector has non-finite entries".into(),
            ));
        }
        if values.iter().any(|v| v.abs() > 1.0) {
            return Err(Error::RejectedInput(
                "motor command outside [-1, 1]".into(),
            ));
        }
        Ok(MotorVector(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn zeros(m: usize) -> Self {
        MotorVector(DVector::zeros(m))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

/// Controller weights `C` (m x n) and biases `h` (m).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub c: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl ControllerParams {
    pub fn new(c: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if c.nrows() != h.len() {
            return Err(Error::RejectedInput(format!(
                "controller weights have {} rows but bias has {} entries",
                c.nrows(),
                h.len()
            )));
        }
        let p = ControllerParams { c, h };
        if !p.is_finite() {
            return Err(Error::RejectedInput(
                "controller parameters are not finite".into(),
            ));
        }
        Ok(p)
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        ControllerParams {
            c: DMatrix::zeros(m, n),
            h: DVector::zeros(m),
        }
    }

    pub fn motor_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn sensor_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn is_finite(&self) -> bool {
        all_finite(self.c.iter()) && all_finite(self.h.iter())
    }

    pub fn clamp(&mut self) {
        clamp_all(self.c.iter_mut());
        clamp_all(self.h.iter_mut());
    }

    /// Pre-activation `z = C s + h`.
    pub fn preactivation(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.c * s + &self.h
    }
}

/// Forward model weights `A` (n x m) and biases `b` (n).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ModelParams {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::RejectedInput(format!(
                "model weights have {} rows but bias has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        let p = ModelParams { a, b };
        if !p.is_finite() {
            return Err(Error::RejectedInput("model parameters are not finite".into()));
        }
        Ok(p)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        ModelParams {
            a: DMatrix::zeros(n, m),
            b: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(self.a.iter()) && all_finite(self.b.iter())
    }

    pub fn clamp(&mut self) {
        clamp_all(self.a.iter_mut());
        clamp_all(self.b.iter_mut());
    }
}

fn clamp_all<'a>(it: impl Iterator<Item = &'a mut f64>) {
    for v in it {
        *v = v.clamp(-PARAM_BOUND, PARAM_BOUND);
    }
}

/// The full parameter set theta: controller plus forward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub controller: ControllerParams,
    pub model: ModelParams,
}

impl NetworkParams {
    pub fn new(controller: ControllerParams, model: ModelParams) -> Result<Self> {
        let p = NetworkParams { controller, model };
        p.check_dims()?;
        Ok(p)
    }

    pub fn sensor_dim(&self) -> usize {
        self.controller.sensor_dim()
    }

    pub fn motor_dim(&self) -> usize {
        self.controller.motor_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.controller.is_finite() && self.model.is_finite()
    }

    pub fn clamp(&mut self) {
        self.controller.clamp();
        self.model.clamp();
    }

    fn check_dims(&self) -> Result<()> {
        let (m, n) = self.controller.c.shape();
        if self.model.a.shape() != (n, m) {
            return Err(Error::RejectedInput(format!(
                "model weights are {:?}, expected ({n}, {m})",
                self.model.a.shape()
            )));
        }
        Ok(())
    }

    /// Hand-set starting point: every listed `(motor, sensor)` pair couples
    /// a wheel reading to its own servo with weight `self_coupling`, all other
    /// controller weights and biases are zero. The model weights are drawn
    /// uniformly from `[-model_scale, model_scale]`, model biases are zero.
    pub fn tweaked<R: Rng + ?Sized>(
        n: usize,
        m: usize,
        couplings: &[(usize, usize)],
        self_coupling: f64,
        model_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut controller = ControllerParams::zeros(m, n);
        for &(motor, sensor) in couplings {
            if motor >= m || sensor >= n {
                return Err(Error::Config(format!(
                    "coupling ({motor}, {sensor}) outside a {m}x{n} controller"
                )));
            }
            controller.c[(motor, sensor)] = self_coupling;
        }
        let mut a = DMatrix::zeros(n, m);
        if model_scale > 0.0 {
            // column-major fill keeps the draw order fixed for a given seed
            for v in a.iter_mut() {
                *v = rng.random_range(-model_scale..=model_scale);
            }
        }
        let model = ModelParams {
            a,
            b: DVector::zeros(n),
        };
        let mut p = NetworkParams::new(controller, model)?;
        p.clamp();
        Ok(p)
    }
}

fn check_sensor(s: &SensorVector, cp: &ControllerParams) -> Result<()> {
    if s.len() != cp.sensor_dim() {
        return Err(Error::RejectedInput(format!(
            "sensor vector has {} entries, controller expects {}",
            s.len(),
            cp.sensor_dim()
        )));
    }
    if cp.h.len() != cp.motor_dim() {
        return Err(Error::RejectedInput("controller bias length mismatch".into()));
    }
    Ok(())
}

fn check_model(cp: &ControllerParams, mp: &ModelParams) -> Result<()> {
    if mp.a.ncols() != cp.motor_dim() || mp.a.nrows() != mp.b.len() {
        return Err(Error::RejectedInput(format!(
            "model weights are {:?} with {} biases, controller has {} motors",
            mp.a.shape(),
            mp.b.len(),
            cp.motor_dim()
        )));
    }
    if mp.a.nrows() != cp.sensor_dim() {
        return Err(Error::RejectedInput(format!(
            "model predicts {} sensors, controller reads {}",
            mp.a.nrows(),
            cp.sensor_dim()
        )));
    }
    Ok(())
}

/// `y = tanh(C s + h)`.
pub fn controller_act(s: &SensorVector, cp: &ControllerParams) -> Result<MotorVector> {
    check_sensor(s, cp)?;
    let y = cp.preactivation(s.as_vector()).map(libm::tanh);
    if !all_finite(y.iter()) {
        return Err(Error::RejectedInput(
            "controller parameters produced a non-finite command".into(),
        ));
    }
    Ok(MotorVector(y))
}

/// One-step prediction `psi(s) = A tanh(C s + h) + b`.
pub fn loop_psi(s: &SensorVector, cp: &ControllerParams, mp: &ModelParams) -> Result<SensorVector> {
    check_sensor(s, cp)?;
    check_model(cp, mp)?;
    let y = cp.preactivation(s.as_vector()).map(libm::tanh);
    let next = &mp.a * y + &mp.b;
    SensorVector::new(next)
        .map_err(|_| Error::RejectedInput("loop prediction is not finite".into()))
}

/// `L(s) = A diag(1 - tanh^2(C s + h)) C`, the n x n Jacobian of [`loop_psi`].
pub fn loop_jacobian(
    s: &SensorVector,
    cp: &ControllerParams,
    mp: &ModelParams,
) -> Result<DMatrix<f64>> {
    check_sensor(s, cp)?;
    check_model(cp, mp)?;
    let slope = cp
        .preactivation(s.as_vector())
        .map(|z| 1.0 - libm::tanh(z).powi(2));
    let mut scaled = cp.c.clone();
    for (mut row, g) in scaled.row_iter_mut().zip(slope.iter()) {
        row *= *g;
    }
    Ok(&mp.a * scaled)
}

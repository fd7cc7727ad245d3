use nalgebra::DVector;

use super::network::{loop_psi, NetworkParams, SensorVector};
use crate::{Error, Result};

/// The two-step history `(s_{t-2}, s_{t-1}, s_t)` with its deterministic
/// predictions and deviations.
///
/// Predictions start from the measured `s_{t-2}`, so the deviation there is
/// zero by construction and the deviation one step later is the raw
/// prediction error `xi_{t-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopWindow {
    pub s_tm2: SensorVector,
    pub s_tm1: SensorVector,
    pub s_t: SensorVector,
    pub shat_tm1: SensorVector,
    pub shat_t: SensorVector,
    pub ds_tm1: DVector<f64>,
    pub ds_t: DVector<f64>,
    pub xi_tm1: DVector<f64>,
    readings: usize,
}

impl LoopWindow {
    pub fn new(n: usize) -> Self {
        LoopWindow {
            s_tm2: SensorVector::zeros(n),
            s_tm1: SensorVector::zeros(n),
            s_t: SensorVector::zeros(n),
            shat_tm1: SensorVector::zeros(n),
            shat_t: SensorVector::zeros(n),
            ds_tm1: DVector::zeros(n),
            ds_t: DVector::zeros(n),
            xi_tm1: DVector::zeros(n),
            readings: 0,
        }
    }

    pub fn sensor_dim(&self) -> usize {
        self.s_t.len()
    }

    /// Number of readings seen, saturating at 3.
    pub fn readings(&self) -> usize {
        self.readings
    }

    /// True once `s_{t-2}`, `s_{t-1}` and `s_t` are all real readings.
    pub fn is_warm(&self) -> bool {
        self.readings >= 3
    }

    /// Deviation at the window start, always zero.
    pub fn ds_tm2(&self) -> DVector<f64> {
        DVector::zeros(self.sensor_dim())
    }

    fn shift(&mut self, s_new: SensorVector) {
        self.s_tm2 = std::mem::replace(&mut self.s_tm1, std::mem::replace(&mut self.s_t, s_new));
        self.readings = (self.readings + 1).min(3);
    }

    /// Records a reading without computing deviations. Used while fewer than
    /// two earlier readings exist.
    pub fn prime(&mut self, s_new: SensorVector) -> Result<()> {
        self.check_dim(&s_new)?;
        self.shift(s_new);
        Ok(())
    }

    /// Slides the window forward to `s_new` and recomputes
    /// `shat_{t-1} = psi(s_{t-2}, theta_{t-2})`,
    /// `shat_t = psi(shat_{t-1}, theta_{t-1})` and the deviations.
    ///
    /// `theta_tm2` and `theta_tm1` are the parameters that were in force when
    /// `s_{t-2}` and `s_{t-1}` were acted upon. The window is left untouched
    /// on error.
    pub fn update(
        &mut self,
        s_new: SensorVector,
        theta_tm2: &NetworkParams,
        theta_tm1: &NetworkParams,
    ) -> Result<()> {
        self.check_dim(&s_new)?;
        if self.readings < 2 {
            return Err(Error::NotWarmedUp {
                have: self.readings + 1,
            });
        }
        // after the shift: s_tm2 <- old s_tm1, s_tm1 <- old s_t
        let s_tm2 = &self.s_tm1;
        let s_tm1 = &self.s_t;
        let shat_tm1 = loop_psi(s_tm2, &theta_tm2.controller, &theta_tm2.model)?;
        let shat_t = loop_psi(&shat_tm1, &theta_tm1.controller, &theta_tm1.model)?;
        let ds_tm1 = s_tm1.as_vector() - shat_tm1.as_vector();
        let ds_t = s_new.as_vector() - shat_t.as_vector();
        if ds_tm1.iter().chain(ds_t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("non-finite deviation".into()));
        }

        self.shift(s_new);
        self.xi_tm1 = ds_tm1.clone();
        self.ds_tm1 = ds_tm1;
        self.ds_t = ds_t;
        self.shat_tm1 = shat_tm1;
        self.shat_t = shat_t;
        Ok(())
    }

    fn check_dim(&self, s: &SensorVector) -> Result<()> {
        if s.len() != self.sensor_dim() {
            return Err(Error::RejectedInput(format!(
                "window holds {}-dimensional readings, got {}",
                self.sensor_dim(),
                s.len()
            )));
        }
        Ok(())
    }
}

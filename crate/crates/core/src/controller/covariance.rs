use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::window::LoopWindow;
use crate::{Error, Result};

/// Running estimates of the deviation covariance `Sigma = <ds ds^T>` and the
/// prediction-error covariance `D = <xi xi^T>`.
///
/// Raw second moments are tracked as exponential moving averages; the ridge
/// is added on read, so the stored moments never accumulate it.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceEstimator {
    sigma_moment: DMatrix<f64>,
    d_moment: DMatrix<f64>,
    ema_decay: f64,
    ridge: f64,
    samples: u64,
}

impl CovarianceEstimator {
    /// `ema_decay` weighs the previous estimate: 0 keeps only the newest
    /// sample, values close to 1 average over roughly `1 / (1 - ema_decay)`
    /// samples.
    pub fn new(n: usize, ema_decay: f64, ridge: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ema_decay) {
            return Err(Error::Config(format!(
                "ema_decay must lie in [0, 1), got {ema_decay}"
            )));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::Config(format!("ridge must be positive, got {ridge}")));
        }
        Ok(CovarianceEstimator {
            sigma_moment: DMatrix::zeros(n, n),
            d_moment: DMatrix::zeros(n, n),
            ema_decay,
            ridge,
            samples: 0,
        })
    }

    pub fn ema_decay(&self) -> f64 {
        self.ema_decay
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Regularized deviation covariance `Sigma + ridge I`.
    pub fn sigma(&self) -> DMatrix<f64> {
        self.regularized(&self.sigma_moment)
    }

    /// Regularized noise covariance `D + ridge I`.
    pub fn d_cov(&self) -> DMatrix<f64> {
        self.regularized(&self.d_moment)
    }

    fn regularized(&self, moment: &DMatrix<f64>) -> DMatrix<f64> {
        let n = moment.nrows();
        moment + DMatrix::identity(n, n) * self.ridge
    }

    /// Folds `ds_t ds_t^T` into Sigma and `xi_{t-1} xi_{t-1}^T` into D.
    pub fn update(&mut self, w: &LoopWindow) -> Result<()> {
        if !w.is_warm() {
            return Err(Error::NotWarmedUp { have: w.readings() });
        }
        self.update_with(&w.ds_t, &w.xi_tm1)
    }

    /// Same as [`update`](Self::update) with explicit samples.
    pub fn update_with(&mut self, ds: &DVector<f64>, xi: &DVector<f64>) -> Result<()> {
        let n = self.sigma_moment.nrows();
        if ds.len() != n || xi.len() != n {
            return Err(Error::RejectedInput(format!(
                "covariance samples must have {n} entries"
            )));
        }
        let keep = self.ema_decay;
        let fold = |moment: &mut DMatrix<f64>, v: &DVector<f64>| {
            let outer = v * v.transpose();
            *moment *= keep;
            *moment += outer * (1.0 - keep);
        };
        fold(&mut self.sigma_moment, ds);
        fold(&mut self.d_moment, xi);
        self.samples += 1;
        Ok(())
    }

    /// `I = 1/2 ln|Sigma| - 1/2 ln|D|` in nats. May be negative.
    pub fn tipi_value(&self) -> Result<f64> {
        Ok(0.5 * ln_det(&self.sigma())? - 0.5 * ln_det(&self.d_cov())?)
    }

    /// Cholesky factor of the regularized Sigma.
    pub fn sigma_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        cholesky(self.sigma())
    }
}

pub(crate) fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("covariance has non-finite entries".into()));
    }
    Cholesky::new(m).ok_or_else(|| {
        Error::NumericDomain("covariance is not positive definite".into())
    })
}

/// Natural log-determinant of a symmetric positive definite matrix.
pub fn ln_det(m: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(m.clone())?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

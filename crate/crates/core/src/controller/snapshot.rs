use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::learning::LearningConfig;
use super::network::{ControllerParams, ModelParams, NetworkParams};
use super::ControllerConfig;
use crate::{Error, Result};

/// Parameter snapshot exchanged as JSON. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub ema_decay: f64,
    pub ridge: f64,
    pub eps_controller: f64,
    pub eps_model: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ParamSnapshot {
    pub fn capture(params: &NetworkParams, config: &ControllerConfig, seed: u64) -> Self {
        ParamSnapshot {
            n: params.sensor_dim(),
            m: params.motor_dim(),
            c: rows(&params.controller.c),
            h: params.controller.h.iter().copied().collect(),
            a: rows(&params.model.a),
            b: params.model.b.iter().copied().collect(),
            ema_decay: config.ema_decay,
            ridge: config.ridge,
            eps_controller: config.learning.eps_controller,
            eps_model: config.learning.eps_model,
            grad_clip: config.learning.grad_clip,
            seed,
        }
    }

    pub fn params(&self) -> Result<NetworkParams> {
        let (n, m) = (self.n, self.m);
        if self.h.len() != m || self.b.len() != n {
            return Err(Error::Config("snapshot bias lengths disagree with n, m".into()));
        }
        let controller =
            ControllerParams::new(from_rows(&self.c, m, n, "C")?, DVector::from_vec(self.h.clone()))?;
        let model = ModelParams::new(from_rows(&self.a, n, m, "A")?, DVector::from_vec(self.b.clone()))?;
        NetworkParams::new(controller, model)
    }

    pub fn config(&self) -> ControllerConfig {
        ControllerConfig {
            learning: LearningConfig {
                eps_controller: self.eps_controller,
                eps_model: self.eps_model,
                grad_clip: self.grad_clip,
            },
            ema_decay: self.ema_decay,
            ridge: self.ridge,
        }
    }

    /// Hex SHA-256 over the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("snapshot serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

//! Information measures and behavior statistics. All information quantities
//! are in nats.

use nalgebra::{DMatrix, DVector};

use crate::controller::ln_det;
use crate::{Error, Result};

/// Joint counts over `(s_{t-1}, s_t)` symbol pairs; row = previous symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteJoint {
    counts: Vec<Vec<u64>>,
}

impl DiscreteJoint {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::RejectedInput("joint counts must form a non-empty square table".into()));
        }
        if counts.iter().flatten().all(|c| *c == 0) {
            return Err(Error::RejectedInput("joint counts are all zero".into()));
        }
        Ok(DiscreteJoint { counts })
    }

    /// Counts transitions of a symbol sequence with symbols in `0..k`.
    pub fn from_sequence(symbols: &[usize], k: usize) -> Result<Self> {
        let mut counts = vec![vec![0u64; k]; k];
        for w in symbols.windows(2) {
            if w[0] >= k || w[1] >= k {
                return Err(Error::RejectedInput(format!("symbol outside 0..{k}")));
            }
            counts[w[0]][w[1]] += 1;
        }
        DiscreteJoint::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Merges symbols by `map[old] = new`, applied to both axes.
    pub fn coarsen(&self, map: &[usize], k_new: usize) -> Result<Self> {
        if map.len() != self.counts.len() || map.iter().any(|m| *m >= k_new) {
            return Err(Error::RejectedInput("invalid symbol map".into()));
        }
        let mut counts = vec![vec![0u64; k_new]; k_new];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                counts[map[i]][map[j]] += c;
            }
        }
        DiscreteJoint::new(counts)
    }
}

/// Plug-in mutual information between consecutive symbols.
pub fn discrete_mi(j: &DiscreteJoint) -> f64 {
    let total = j.total() as f64;
    let k = j.counts.len();
    let row: Vec<f64> = j.counts.iter().map(|r| r.iter().sum::<u64>() as f64 / total).collect();
    let col: Vec<f64> = (0..k)
        .map(|c| j.counts.iter().map(|r| r[c]).sum::<u64>() as f64 / total)
        .collect();
    let mut mi = 0.0;
    for (a, r) in j.counts.iter().enumerate() {
        for (b, &c) in r.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let p = c as f64 / total;
            mi += p * (p / (row[a] * col[b])).ln();
        }
    }
    // rounding can leave a tiny negative residue for independent tables
    mi.max(0.0)
}

/// Predictive information of a stationary Gaussian AR(1) process
/// `x_t = a x_{t-1} + noise`: `-1/2 ln(1 - a^2)`.
pub fn gaussian_ar1_mi(a: f64) -> Result<f64> {
    if !(a.abs() < 1.0) {
        return Err(Error::NumericDomain(format!(
            "AR(1) coefficient must satisfy |a| < 1, got {a}"
        )));
    }
    Ok(-0.5 * (1.0 - a * a).ln())
}

/// Windowed `1/2 ln|Sigma| - 1/2 ln|D|` from sample covariances of the
/// deviation samples `ds` and the prediction-error samples `xi`, plus
/// `ridge * I`. Returns one value per index `i >= window - 1`, computed over
/// samples `i + 1 - window ..= i`.
pub fn running_tipi(
    ds: &[DVector<f64>],
    xi: &[DVector<f64>],
    window: usize,
    ridge: f64,
) -> Result<Vec<f64>> {
    if ds.len() != xi.len() {
        return Err(Error::RejectedInput("ds and xi series differ in length".into()));
    }
    let Some(n) = ds.first().map(|v| v.len()) else {
        return Ok(Vec::new());
    };
    if window < n + 1 {
        return Err(Error::Config(format!(
            "window {window} too small for {n}-dimensional covariances (need >= {})",
            n + 1
        )));
    }
    if !(ridge > 0.0) {
        return Err(Error::Config("ridge must be positive".into()));
    }
    let mut sigma = WindowMoments::new(n);
    let mut noise = WindowMoments::new(n);
    let mut out = Vec::with_capacity(ds.len().saturating_sub(window - 1));
    for i in 0..ds.len() {
        sigma.add(&ds[i]);
        noise.add(&xi[i]);
        if i >= window {
            sigma.remove(&ds[i - window]);
            noise.remove(&xi[i - window]);
        }
        if i + 1 >= window {
            let s = ln_det(&sigma.covariance(window, ridge))?;
            let d = ln_det(&noise.covariance(window, ridge))?;
            out.push(0.5 * s - 0.5 * d);
        }
    }
    Ok(out)
}

struct WindowMoments {
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl WindowMoments {
    fn new(n: usize) -> Self {
        WindowMoments {
            sum: DVector::zeros(n),
            outer: DMatrix::zeros(n, n),
        }
    }

    fn add(&mut self, v: &DVector<f64>) {
        self.sum += v;
        self.outer += v * v.transpose();
    }

    fn remove(&mut self, v: &DVector<f64>) {
        self.sum -= v;
        self.outer -= v * v.transpose();
    }

    fn covariance(&self, count: usize, ridge: f64) -> DMatrix<f64> {
        let n = self.sum.len();
        let c = count as f64;
        let centered = &self.outer - &self.sum * self.sum.transpose() / c;
        let mut cov = centered / (c - 1.0);
        // enforce exact symmetry after the running-sum arithmetic
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = m;
                cov[(j, i)] = m;
            }
        }
        cov + DMatrix::identity(n, n) * ridge
    }
}

/// Shannon entropy of the visit histogram over a `grid x grid` partition of
/// the square `[-radius, radius]^2`.
pub fn occupancy_entropy<'a>(
    positions: impl IntoIterator<Item = &'a [f64; 2]>,
    grid: usize,
    radius: f64,
) -> Result<f64> {
    if grid < 2 {
        return Err(Error::Config(format!("occupancy grid must be >= 2, got {grid}")));
    }
    let mut hist = vec![0u64; grid * grid];
    let cell = |v: f64| {
        let u = ((v + radius) / (2.0 * radius) * grid as f64).floor();
        (u.max(0.0) as usize).min(grid - 1)
    };
    let mut total = 0u64;
    for p in positions {
        hist[cell(p[1]) * grid + cell(p[0])] += 1;
        total += 1;
    }
    if total == 0 {
        return Ok(0.0);
    }
    let total = total as f64;
    let h = hist
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Lower and upper quartile, linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some((q(0.25), q(0.75)))
}

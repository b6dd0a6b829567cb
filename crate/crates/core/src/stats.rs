//! Label prototypes and label angle moments, estimated from (pseudo-)labeled
//! representations and smoothed across epochs with a moving average.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::angular::COS_CLAMP;
use crate::error::{Error, Result};

/// Per-label estimates from one pass over a sample set. `None` marks labels
/// without enough support (`Σy > 0` for prototype and mean, `Σy > 1` for variance).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochEstimate {
    pub prototypes: Vec<Option<DVector<f64>>>,
    pub mu: Vec<Option<f64>>,
    pub var: Vec<Option<f64>>,
}

/// `c_k = Σ_i y_ik f_i / Σ_i y_ik`.
pub fn compute_prototypes(reprs: &[DVector<f64>], y: &[Vec<f64>]) -> Vec<Option<DVector<f64>>> {
    assert_eq!(reprs.len(), y.len());
    let Some(k) = y.first().map(Vec::len) else {
        return Vec::new();
    };
    let dim = reprs[0].len();
    let mut sums = vec![DVector::zeros(dim); k];
    let mut weights = vec![0.0; k];
    for (f, yi) in reprs.iter().zip(y) {
        for (label, &w) in yi.iter().enumerate() {
            if w != 0.0 {
                sums[label].axpy(w, f, 1.0);
                weights[label] += w;
            }
        }
    }
    sums.into_iter()
        .zip(weights)
        .map(|(s, w)| (w > 0.0).then(|| s / w))
        .collect()
}

fn clamped_angle(f: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let raw = f.dot(c) / (f.norm() * c.norm());
    raw.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP).acos()
}

/// Weighted angle means and Bessel-corrected variances (denominator `Σy - 1`)
/// of each label's members around its prototype.
pub fn compute_angle_stats(
    reprs: &[DVector<f64>],
    y: &[Vec<f64>],
    prototypes: &[Option<DVector<f64>>],
) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let k = prototypes.len();
    let mut mu = vec![None; k];
    let mut var = vec![None; k];
    for label in 0..k {
        let Some(c) = prototypes[label].as_ref().filter(|c| c.norm() > 0.0) else {
            continue;
        };
        let members: Vec<(f64, f64)> = reprs
            .iter()
            .zip(y)
            .filter(|(f, yi)| yi[label] != 0.0 && f.norm() > 0.0)
            .map(|(f, yi)| (yi[label], clamped_angle(f, c)))
            .collect();
        let w: f64 = members.iter().map(|(w, _)| w).sum();
        if w <= 0.0 {
            continue;
        }
        let m = members.iter().map(|(w, b)| w * b).sum::<f64>() / w;
        mu[label] = Some(m);
        if w > 1.0 {
            let ss: f64 = members.iter().map(|(w, b)| w * (b - m) * (b - m)).sum();
            var[label] = Some(ss / (w - 1.0));
        }
    }
    (mu, var)
}

pub fn estimate(reprs: &[DVector<f64>], y: &[Vec<f64>]) -> EpochEstimate {
    let prototypes = compute_prototypes(reprs, y);
    let (mu, var) = compute_angle_stats(reprs, y, &prototypes);
    EpochEstimate { prototypes, mu, var }
}

/// Moving-average state of prototypes and angle moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleStats {
    /// K × D
    pub prototypes: DMatrix<f64>,
    pub mu: Vec<f64>,
    /// Raw variances; flooring happens when a transform is built.
    pub var: Vec<f64>,
    /// Weight of the previous value in the moving average.
    pub gamma_ma: f64,
    pub initialized: Vec<bool>,
    pub var_initialized: Vec<bool>,
}

impl AngleStats {
    pub fn new(n_labels: usize, dim: usize, gamma_ma: f64) -> Result<Self> {
        if !(gamma_ma > 0.0 && gamma_ma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma_ma {gamma_ma} outside (0, 1]")));
        }
        Ok(Self {
            prototypes: DMatrix::zeros(n_labels, dim),
            mu: vec![std::f64::consts::FRAC_PI_2; n_labels],
            var: vec![1.0; n_labels],
            gamma_ma,
            initialized: vec![false; n_labels],
            var_initialized: vec![false; n_labels],
        })
    }

    pub fn n_labels(&self) -> usize {
        self.mu.len()
    }

    /// `value <- (1 - γ) new + γ previous`; a label's first observation is taken as is.
    /// Labels absent from `est` keep their values.
    pub fn ma_update(&mut self, est: &EpochEstimate) {
        let g = self.gamma_ma;
        let mix = |old: f64, new: f64| (1.0 - g) * new + g * old;
        for k in 0..self.n_labels() {
            if let (Some(c), Some(mu)) = (&est.prototypes[k], est.mu[k]) {
                if self.initialized[k] {
                    let old = self.prototypes.row(k).transpose();
                    let blended = c.zip_map(&old, |n, o| mix(o, n));
                    self.prototypes.set_row(k, &blended.transpose());
                    self.mu[k] = mix(self.mu[k], mu);
                } else {
                    self.prototypes.set_row(k, &c.transpose());
                    self.mu[k] = mu;
                    self.initialized[k] = true;
                }
            }
            if let Some(v) = est.var[k] {
                if self.var_initialized[k] {
                    self.var[k] = mix(self.var[k], v);
                } else {
                    self.var[k] = v;
                    self.var_initialized[k] = true;
                }
            }
        }
    }

    /// Variances with never-observed labels replaced by the mean of observed ones
    /// (or 1 if none are observed), so they do not distort the pooled variance.
    pub fn effective_var(&self) -> Vec<f64> {
        let seen: Vec<f64> = self
            .var
            .iter()
            .zip(&self.var_initialized)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| *v)
            .collect();
        let fill = if seen.is_empty() {
            1.0
        } else {
            seen.iter().sum::<f64>() / seen.len() as f64
        };
        self.var
            .iter()
            .zip(&self.var_initialized)
            .map(|(&v, &ok)| if ok { v } else { fill })
            .collect()
    }
}

/// Average difference of label angle variances: the mean of `|σ_k² - σ_j²|`
/// over unordered label pairs.
pub fn avg_dlav(var: &[f64]) -> Result<f64> {
    let k = var.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("avg_dlav needs at least 2 labels, got {k}")));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            total += (var[i] - var[j]).abs();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

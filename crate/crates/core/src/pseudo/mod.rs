//! Pseudo-label generation: temperature sharpening, self-adaptive confidence
//! masking for hard labels, and class-distribution-aware thresholds for
//! multi-label data.

mod augment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{Augmenter, View, STRONG_DROPOUT, WEAK_DROPOUT};

/// `q_k = p_k^(1/T) / Σ_j p_j^(1/T)`.
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let inv = 1.0 / temperature;
    // Scale by the max first so tiny temperatures do not underflow every entry.
    let max = p.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::InvalidArgument("probability vector is all zero".into()));
    }
    let powered: Vec<f64> = p.iter().map(|&x| (x / max).powf(inv)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|x| x / total).collect())
}

/// Linear ramp `min(step / total, 1)`; a zero-length ramp is already saturated.
pub fn ramp_up(step: usize, total_ramp: usize) -> f64 {
    if total_ramp == 0 {
        return 1.0;
    }
    (step as f64 / total_ramp as f64).min(1.0)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskOutcome {
    pub labels: Vec<usize>,
    pub keep: Vec<bool>,
}

/// Anything that turns a batch of probability rows into hard labels plus a keep mask.
pub trait ConfidenceMask {
    fn mask(&mut self, probs: &[Vec<f64>]) -> MaskOutcome;
}

/// Global confidence EMA times per-class normalized probability EMA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveThresholdState {
    pub tau: f64,
    pub ptilde: Vec<f64>,
    pub momentum: f64,
}

impl AdaptiveThresholdState {
    pub const DEFAULT_MOMENTUM: f64 = 0.999;

    pub fn new(n_labels: usize, momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside (0, 1)")));
        }
        if n_labels == 0 {
            return Err(Error::InvalidArgument("no labels".into()));
        }
        let u = 1.0 / n_labels as f64;
        Ok(Self {
            tau: u,
            ptilde: vec![u; n_labels],
            momentum,
        })
    }

    /// `τ_k = τ · p̃_k / max_j p̃_j`
    pub fn thresholds(&self) -> Vec<f64> {
        let max = self.ptilde.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return vec![self.tau; self.ptilde.len()];
        }
        self.ptilde.iter().map(|p| self.tau * p / max).collect()
    }

    pub fn update(&mut self, probs: &[Vec<f64>]) {
        if probs.is_empty() {
            return;
        }
        let n = probs.len() as f64;
        let mom = self.momentum;
        let mean_max = probs.iter().map(|r| r[argmax(r)]).sum::<f64>() / n;
        self.tau = mom * self.tau + (1.0 - mom) * mean_max;
        for (k, pt) in self.ptilde.iter_mut().enumerate() {
            let mean_k = probs.iter().map(|r| r[k]).sum::<f64>() / n;
            *pt = mom * *pt + (1.0 - mom) * mean_k;
        }
    }
}

impl ConfidenceMask for AdaptiveThresholdState {
    fn mask(&mut self, probs: &[Vec<f64>]) -> MaskOutcome {
        adaptive_mask(probs, self)
    }
}

/// `keep_i = max_k P_ik >= τ_{argmax_i}`.
pub fn mask_with_thresholds(probs: &[Vec<f64>], thresholds: &[f64]) -> MaskOutcome {
    let labels: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    let keep = probs
        .iter()
        .zip(&labels)
        .map(|(r, &l)| r[l] >= thresholds[l])
        .collect();
    MaskOutcome { labels, keep }
}

/// Updates `state` with the batch, then masks the batch against the new thresholds.
pub fn adaptive_mask(probs: &[Vec<f64>], state: &mut AdaptiveThresholdState) -> MaskOutcome {
    if probs.is_empty() {
        return MaskOutcome {
            labels: Vec::new(),
            keep: Vec::new(),
        };
    }
    state.update(probs);
    mask_with_thresholds(probs, &state.thresholds())
}

/// Per-class thresholds `γ_k` such that the fraction of unlabeled rows with
/// `score >= γ_k` matches `prevalence_k`: `γ_k` is the `r_k`-th largest score in
/// column `k`, `r_k = round_half_up(prevalence_k · N_u)`, or `+∞` when `r_k = 0`.
pub fn cap_thresholds(scores: &[Vec<f64>], prevalence: &[f64]) -> Vec<f64> {
    let n = scores.len();
    prevalence
        .iter()
        .enumerate()
        .map(|(k, &prev)| {
            let r = ((prev * n as f64) + 0.5).floor() as usize;
            if r == 0 || n == 0 {
                return f64::INFINITY;
            }
            let mut col: Vec<f64> = scores.iter().map(|row| row[k]).collect();
            col.sort_by(|a, b| b.total_cmp(a));
            col[r.min(n) - 1]
        })
        .collect()
}

/// `y_ik = 1` iff `score_ik >= γ_k`.
pub fn apply_cap(scores: &[Vec<f64>], gamma: &[f64]) -> Vec<Vec<bool>> {
    scores
        .iter()
        .map(|row| {
            assert_eq!(row.len(), gamma.len(), "score row and thresholds differ in length");
            row.iter().zip(gamma).map(|(s, g)| s >= g).collect()
        })
        .collect()
}

/// Per-class fraction of positive labels.
pub fn prevalence(y: &[Vec<f64>], n_labels: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_labels];
    if y.is_empty() {
        return out;
    }
    for row in y {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= y.len() as f64);
    out
}

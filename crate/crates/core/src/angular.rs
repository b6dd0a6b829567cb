//! Angle-space losses: the additive-margin cosine softmax, its variance-balanced
//! counterpart over per-label affine angle maps, the softmax posterior, and the
//! analytic gradients back to representations and label weights.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stats::AngleStats;

/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]` before `arccos`.
pub const COS_CLAMP: f64 = 1e-7;
/// Lower bound applied to label angle variances (radians²).
pub const VAR_FLOOR: f64 = 1e-6;

const ROW_NORM_FLOOR: f64 = 1e-12;

/// Label weight vectors (rows of `w`) with scale `s` and margin `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularHead {
    /// K × D
    pub w: DMatrix<f64>,
    pub s: f64,
    pub m: f64,
}

impl AngularHead {
    pub fn init<R: Rng + ?Sized>(n_labels: usize, dim: usize, s: f64, m: f64, rng: &mut R) -> Self {
        let lim = (6.0 / (n_labels + dim) as f64).sqrt();
        let mut w = DMatrix::from_fn(n_labels, dim, |_, _| rng.random_range(-lim..lim));
        for k in 0..n_labels {
            if w.row(k).norm() < ROW_NORM_FLOOR {
                w[(k, 0)] = 1.0;
            }
        }
        Self { w, s, m }
    }

    pub fn n_labels(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }
}

/// `ψ_k(θ) = a_k θ + b_k`. The identity map is `a = 1, b = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalancedTransform {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl BalancedTransform {
    pub fn identity(n_labels: usize) -> Self {
        Self {
            a: vec![1.0; n_labels],
            b: vec![0.0; n_labels],
        }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.a.iter().all(|&a| a == 1.0) && self.b.iter().all(|&b| b == 0.0)
    }

    #[inline]
    pub fn psi(&self, k: usize, theta: f64) -> f64 {
        self.a[k] * theta + self.b[k]
    }

    /// `ψ_k(θ)` restricted to `[0, π]`, where cosine is monotone. Both ends
    /// have `sin = 0`, so `cos` of the clamped angle stays differentiable.
    #[inline]
    pub fn psi_angle(&self, k: usize, theta: f64) -> f64 {
        self.psi(k, theta).clamp(0.0, std::f64::consts::PI)
    }

    /// Maps every label's angle distribution `N(μ_k, σ_k²)` onto `N(μ_k, σ̂²)`,
    /// `σ̂² = mean_k σ_k²`. Variances below [`VAR_FLOOR`] are floored; the
    /// second return value counts how many were.
    pub fn from_moments(mu: &[f64], var: &[f64]) -> (Self, usize) {
        assert_eq!(mu.len(), var.len());
        let mut floored = 0;
        let var: Vec<f64> = var
            .iter()
            .map(|&v| {
                if v < VAR_FLOOR || v.is_nan() {
                    floored += 1;
                    VAR_FLOOR
                } else {
                    v
                }
            })
            .collect();
        let pooled = if var.iter().all(|&v| v == var[0]) {
            var[0]
        } else {
            var.iter().sum::<f64>() / var.len() as f64
        };
        let sigma_hat = pooled.sqrt();
        let a: Vec<f64> = var.iter().map(|v| sigma_hat / v.sqrt()).collect();
        let b = a.iter().zip(mu).map(|(a, mu)| (1.0 - a) * mu).collect();
        (Self { a, b }, floored)
    }
}

/// See [`BalancedTransform::from_moments`].
pub fn balanced_transform(stats: &AngleStats) -> (BalancedTransform, usize) {
    BalancedTransform::from_moments(&stats.mu, &stats.var)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosineAngles {
    pub cos: Vec<f64>,
    pub theta: Vec<f64>,
    /// Whether the raw cosine hit the clamp (its derivative is then zero).
    pub clamped: Vec<bool>,
}

fn clamp_cos(raw: f64) -> (f64, bool) {
    let hi = 1.0 - COS_CLAMP;
    if raw > hi {
        (hi, true)
    } else if raw < -hi {
        (-hi, true)
    } else {
        (raw, false)
    }
}

/// Cosines and angles between `f` and every row of `w`.
///
/// # Panics
/// If `f` or a row of `w` has zero norm; callers run [`crate::encoder::guard_degenerate`] first.
pub fn cosine_angles(f: &DVector<f64>, w: &DMatrix<f64>) -> CosineAngles {
    let fnorm = f.norm();
    assert!(fnorm > 0.0, "zero-norm representation");
    let k = w.nrows();
    let mut out = CosineAngles {
        cos: Vec::with_capacity(k),
        theta: Vec::with_capacity(k),
        clamped: Vec::with_capacity(k),
    };
    for row in w.row_iter() {
        let wn = row.norm();
        assert!(wn > 0.0, "zero-norm label weight vector");
        let raw = row.transpose().dot(f) / (fnorm * wn);
        let (c, hit) = clamp_cos(raw);
        out.cos.push(c);
        out.theta.push(c.acos());
        out.clamped.push(hit);
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// `-Σ_k y_k log softmax_k(s (z_j - y_j m))` and its gradient w.r.t. `z`.
fn margin_softmax_loss(z: &[f64], y: &[f64], s: f64, m: f64) -> (f64, Vec<f64>) {
    assert_eq!(z.len(), y.len());
    let logits: Vec<f64> = z.iter().zip(y).map(|(z, y)| s * (z - y * m)).collect();
    let lse = log_sum_exp(&logits);
    let y_sum: f64 = y.iter().sum();
    let loss = y.iter().zip(&logits).map(|(y, l)| y * (lse - l)).sum();
    let p = softmax(&logits);
    let grad = p.iter().zip(y).map(|(p, y)| s * (y_sum * p - y)).collect();
    (loss, grad)
}

/// Additive-margin loss over cosines. Returns `(loss, dloss/dcos)`.
pub fn am_loss(cos: &[f64], y: &[f64], s: f64, m: f64) -> (f64, Vec<f64>) {
    margin_softmax_loss(cos, y, s, m)
}

/// Transformed cosines `cos ψ_k(θ_k)`, with `ψ_k` clamped to `[0, π]`.
pub fn transformed_cos(theta: &[f64], t: &BalancedTransform) -> Vec<f64> {
    theta.iter().enumerate().map(|(k, &th)| t.psi_angle(k, th).cos()).collect()
}

/// Margin loss over the balanced angles. Returns `(loss, dloss/dθ)`.
pub fn bdd_loss(theta: &[f64], y: &[f64], t: &BalancedTransform, s: f64, m: f64) -> (f64, Vec<f64>) {
    let z = transformed_cos(theta, t);
    let (loss, dz) = margin_softmax_loss(&z, y, s, m);
    let dtheta = dz
        .iter()
        .enumerate()
        .map(|(k, g)| -g * t.a[k] * t.psi_angle(k, theta[k]).sin())
        .collect();
    (loss, dtheta)
}

/// `p_k ∝ exp(cos ψ_k(θ_k))`.
pub fn posterior(theta: &[f64], t: &BalancedTransform) -> Vec<f64> {
    softmax(&transformed_cos(theta, t))
}

/// Pulls a gradient w.r.t. the posterior back to the transformed cosines.
pub fn posterior_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(p, g)| p * g).sum();
    p.iter().zip(dp).map(|(p, g)| p * (g - inner)).collect()
}

/// Everything the head computes for one representation, kept for backprop.
#[derive(Clone, Debug)]
pub struct HeadActivation {
    pub angles: CosineAngles,
    /// `cos ψ_k(θ_k)`
    pub z: Vec<f64>,
    fnorm: f64,
    wnorm: Vec<f64>,
    /// `d z_k / d cos θ_k`, zero where the clamp was active.
    dz_dcos: Vec<f64>,
}

impl HeadActivation {
    pub fn new(f: &DVector<f64>, w: &DMatrix<f64>, t: &BalancedTransform) -> Self {
        let angles = cosine_angles(f, w);
        let z = transformed_cos(&angles.theta, t);
        let dz_dcos = (0..w.nrows())
            .map(|k| {
                if angles.clamped[k] {
                    return 0.0;
                }
                let c = angles.cos[k];
                let dz_dtheta = -t.a[k] * t.psi_angle(k, angles.theta[k]).sin();
                let dtheta_dcos = -1.0 / (1.0 - c * c).sqrt();
                dz_dtheta * dtheta_dcos
            })
            .collect();
        Self {
            angles,
            z,
            fnorm: f.norm(),
            wnorm: w.row_iter().map(|r| r.norm()).collect(),
            dz_dcos,
        }
    }

    pub fn posterior(&self) -> Vec<f64> {
        softmax(&self.z)
    }

    /// Accumulates `dL/df` and `dL/dW` given `dL/dz`.
    pub fn backprop(
        &self,
        f: &DVector<f64>,
        w: &DMatrix<f64>,
        dl_dz: &[f64],
        grad_f: &mut DVector<f64>,
        grad_w: &mut DMatrix<f64>,
    ) {
        let f2 = self.fnorm * self.fnorm;
        for k in 0..w.nrows() {
            let g = dl_dz[k] * self.dz_dcos[k];
            if g == 0.0 {
                continue;
            }
            let c = self.angles.cos[k];
            let wn = self.wnorm[k];
            let inv = 1.0 / (self.fnorm * wn);
            let wk = w.row(k);
            // d cos / d f = w/(|f||w|) - cos f/|f|²
            for d in 0..f.len() {
                grad_f[d] += g * (wk[d] * inv - c * f[d] / f2);
            }
            // d cos / d w = f/(|f||w|) - cos w/|w|²
            let w2 = wn * wn;
            for d in 0..f.len() {
                grad_w[(k, d)] += g * (f[d] * inv - c * wk[d] / w2);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct HeadGrad {
    pub loss: f64,
    pub grad_f: DVector<f64>,
    pub grad_w: DMatrix<f64>,
}

/// Balanced margin loss of one example and its exact gradients w.r.t. `f` and `W`.
pub fn head_backward(f: &DVector<f64>, head: &AngularHead, t: &BalancedTransform, y: &[f64]) -> HeadGrad {
    head_backward_with_margin(f, head, t, y, head.m)
}

pub fn head_backward_with_margin(
    f: &DVector<f64>,
    head: &AngularHead,
    t: &BalancedTransform,
    y: &[f64],
    m: f64,
) -> HeadGrad {
    let act = HeadActivation::new(f, &head.w, t);
    let (loss, dz) = margin_softmax_loss(&act.z, y, head.s, m);
    let mut grad_f = DVector::zeros(f.len());
    let mut grad_w = DMatrix::zeros(head.w.nrows(), head.w.ncols());
    act.backprop(f, &head.w, &dz, &mut grad_f, &mut grad_w);
    HeadGrad { loss, grad_f, grad_w }
}

/// Loss only, for callers that need no gradient.
pub fn head_loss(f: &DVector<f64>, head: &AngularHead, t: &BalancedTransform, y: &[f64], m: f64) -> f64 {
    let act = HeadActivation::new(f, &head.w, t);
    margin_softmax_loss(&act.z, y, head.s, m).0
}

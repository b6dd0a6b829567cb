//! Conditional-entropy regularizer, nuclear norm, singular value thresholding
//! and the ADMM split that handles the nuclear norm on the label weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SVD_MAX_ITER: usize = 10_000;

/// `-(1/N) Σ_i Σ_k P_ik ln P_ik` with `0 ln 0 = 0`, and its gradient w.r.t. `P`.
/// The gradient entry of an exact zero is reported as 0.
pub fn entropy_reg(p: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for row in p {
        let mut g = Vec::with_capacity(row.len());
        for &x in row {
            if x < 0.0 || !x.is_finite() {
                return Err(Error::InvalidArgument(format!("probability entry {x} is not in [0, 1]")));
            }
            if x > 0.0 {
                value -= x * x.ln();
                g.push(-(x.ln() + 1.0) / n);
            } else {
                g.push(0.0);
            }
        }
        grad.push(g);
    }
    Ok((value / n, grad))
}

fn svd(m: &DMatrix<f64>) -> Result<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD input has non-finite entries".into()));
    }
    m.clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| {
            Error::Numerical(format!(
                "SVD did not converge on a {}x{} matrix (frobenius norm {:.6e}, max |entry| {:.6e})",
                m.nrows(),
                m.ncols(),
                m.norm(),
                m.amax()
            ))
        })
}

pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    Ok(svd(m)?.singular_values.iter().copied().collect())
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// `U max(Σ - thresh, 0) Vᵀ`, the proximal operator of `thresh · ‖·‖_*`.
pub fn svt(m: &DMatrix<f64>, thresh: f64) -> Result<DMatrix<f64>> {
    if thresh.is_nan() || thresh < 0.0 {
        return Err(Error::InvalidArgument(format!("SVT threshold {thresh} must be non-negative")));
    }
    if m.is_empty() {
        return Ok(m.clone());
    }
    let mut d = svd(m)?;
    d.singular_values.iter_mut().for_each(|s| *s = (*s - thresh).max(0.0));
    d.recompose()
        .map_err(|e| Error::Numerical(format!("SVD recomposition failed: {e}")))
}

/// Auxiliary copy `Ŵ` of the label weights, multiplier `Θ` and penalty `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub w_hat: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub tau_penalty: f64,
    pub lambda3: f64,
}

impl AdmmState {
    /// Starts from `Ŵ = W`, `Θ = 0`.
    pub fn new(w: &DMatrix<f64>, tau_penalty: f64, lambda3: f64) -> Result<Self> {
        if !(tau_penalty > 0.0 && tau_penalty.is_finite()) {
            return Err(Error::InvalidArgument(format!("ADMM penalty {tau_penalty} must be positive")));
        }
        if lambda3.is_nan() || lambda3 < 0.0 {
            return Err(Error::InvalidArgument(format!("lambda3 {lambda3} must be non-negative")));
        }
        Ok(Self {
            w_hat: w.clone(),
            theta: DMatrix::zeros(w.nrows(), w.ncols()),
            tau_penalty,
            lambda3,
        })
    }

    fn check_shape(&self, w: &DMatrix<f64>) {
        assert_eq!(
            w.shape(),
            self.w_hat.shape(),
            "label weights do not match the ADMM state shape"
        );
    }

    /// `(τ/2) ‖Ŵ - W + Θ/τ‖²_F`
    pub fn penalty(&self, w: &DMatrix<f64>) -> f64 {
        self.check_shape(w);
        let r = &self.w_hat - w + &self.theta / self.tau_penalty;
        0.5 * self.tau_penalty * r.norm_squared()
    }

    /// Gradient of [`AdmmState::penalty`] w.r.t. `W`: `τ(W - Ŵ) - Θ`.
    pub fn penalty_grad(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.check_shape(w);
        (w - &self.w_hat) * self.tau_penalty - &self.theta
    }

    /// `Ŵ <- D_{λ3/τ}(W - Θ/τ)`
    pub fn update_aux(&mut self, w: &DMatrix<f64>) -> Result<()> {
        self.check_shape(w);
        let target = w - &self.theta / self.tau_penalty;
        self.w_hat = svt(&target, self.lambda3 / self.tau_penalty)?;
        Ok(())
    }

    /// `Θ <- Θ + τ(Ŵ - W)`
    pub fn update_dual(&mut self, w: &DMatrix<f64>) {
        self.check_shape(w);
        self.theta += (&self.w_hat - w) * self.tau_penalty;
    }

    /// Auxiliary then dual update; returns the primal residual `‖Ŵ - W‖_F`.
    pub fn step(&mut self, w: &DMatrix<f64>) -> Result<f64> {
        self.update_aux(w)?;
        self.update_dual(w);
        Ok((&self.w_hat - w).norm())
    }
}

/// Dual update only, as a free function.
pub fn admm_dual_update(state: &mut AdmmState, w: &DMatrix<f64>) {
    state.update_dual(w);
}

pub fn admm_penalty_grad(state: &AdmmState, w: &DMatrix<f64>) -> DMatrix<f64> {
    state.penalty_grad(w)
}

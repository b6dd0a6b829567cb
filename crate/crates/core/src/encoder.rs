//! Two-layer tanh MLP encoder with hand-written backward pass and an EMA shadow.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SparseVec;
use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_REPR_DIM: usize = 32;

/// Added to the first coordinate of an all-zero representation before any cosine.
pub const DEGENERATE_NUDGE: f64 = 1e-8;

/// `f = W2ᵀ tanh(W1ᵀ x + b1) + b2`. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// input_dim × hidden
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// hidden × repr_dim
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Activations kept from `forward` for the matching `backward`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: SparseVec,
    hidden: DVector<f64>,
}

impl EncoderParams {
    pub fn zeros(input_dim: usize, hidden: usize, repr_dim: usize) -> Self {
        Self {
            w1: DMatrix::zeros(input_dim, hidden),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(hidden, repr_dim),
            b2: DVector::zeros(repr_dim),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, repr_dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden, repr_dim);
        let l1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + repr_dim) as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-l1..l1));
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-l2..l2));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn repr_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.repr_dim())
    }

    pub fn fill_zero(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice(),
            self.b1.as_slice(),
            self.w2.as_slice(),
            self.b2.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// # Panics
    /// If `x.dim` differs from the input dimension.
    pub fn forward(&self, x: &SparseVec) -> (DVector<f64>, ForwardCache) {
        assert_eq!(
            x.dim,
            self.input_dim(),
            "feature dimension {} does not match encoder input {}",
            x.dim,
            self.input_dim()
        );
        let mut pre = self.b1.clone();
        for (i, v) in x.iter() {
            pre.axpy(v, &self.w1.row(i).transpose(), 1.0);
        }
        let hidden = pre.map(f64::tanh);
        let f = self.w2.tr_mul(&hidden) + &self.b2;
        (
            f,
            ForwardCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    /// Adds the gradient of `f · grad_f` w.r.t. every parameter into `grads`.
    pub fn backward_into(&self, grad_f: &DVector<f64>, cache: &ForwardCache, grads: &mut EncoderParams) {
        assert_eq!(grad_f.len(), self.repr_dim());
        assert_eq!(cache.hidden.len(), self.hidden_dim(), "stale forward cache");
        grads.b2 += grad_f;
        grads.w2.ger(1.0, &cache.hidden, grad_f, 1.0);
        let dh = &self.w2 * grad_f;
        let dpre = dh.zip_map(&cache.hidden, |g, h| g * (1.0 - h * h));
        grads.b1 += &dpre;
        for (i, v) in cache.input.iter() {
            let mut row = grads.w1.row_mut(i);
            for (r, d) in row.iter_mut().zip(dpre.iter()) {
                *r += v * d;
            }
        }
    }

    pub fn backward(&self, grad_f: &DVector<f64>, cache: &ForwardCache) -> EncoderParams {
        let mut g = self.zeros_like();
        self.backward_into(grad_f, cache, &mut g);
        g
    }
}

/// Nudges an all-zero representation off the origin. Returns whether it did.
pub fn guard_degenerate(f: &mut DVector<f64>) -> bool {
    if f.iter().all(|&v| v == 0.0) && !f.is_empty() {
        f[0] += DEGENERATE_NUDGE;
        true
    } else {
        false
    }
}

/// Exponential moving average of the encoder and the label weight matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaShadow {
    pub encoder: EncoderParams,
    pub head_w: DMatrix<f64>,
    decay: f64,
}

impl EmaShadow {
    pub fn new(encoder: &EncoderParams, head_w: &DMatrix<f64>, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        Ok(Self {
            encoder: encoder.clone(),
            head_w: head_w.clone(),
            decay,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `shadow <- decay * shadow + (1 - decay) * live`
    pub fn update(&mut self, encoder: &EncoderParams, head_w: &DMatrix<f64>) {
        let d = self.decay;
        let mix = |s: &mut [f64], l: &[f64]| {
            assert_eq!(s.len(), l.len(), "EMA shape mismatch");
            for (s, l) in s.iter_mut().zip(l) {
                *s = d * *s + (1.0 - d) * l;
            }
        };
        for (s, l) in self.encoder.tensors_mut().into_iter().zip(encoder.tensors()) {
            mix(s, l);
        }
        mix(self.head_w.as_mut_slice(), head_w.as_slice());
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if decay > 0.0 && decay < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("EMA decay {decay} must lie in (0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(dim: usize, rng: &mut ChaCha8Rng) -> SparseVec {
        let dense: Vec<f64> = (0..dim)
            .map(|_| if rng.random_bool(0.6) { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        SparseVec::from_dense(&dense)
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = EncoderParams::zeros(5, 4, 3);
        let x = SparseVec::from_dense(&[0.3, 0.0, 0.1, 0.9, 0.0]);
        let (f, _) = p.forward(&x);
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_forward_and_backward() {
        let mut p = EncoderParams::zeros(1, 1, 1);
        p.w1[(0, 0)] = 1.0;
        p.w2[(0, 0)] = 1.0;
        let x = SparseVec::from_dense(&[1.0]);
        let (f, cache) = p.forward(&x);
        assert!((f[0] - 0.7615941559557649).abs() < 1e-15);
        let g = p.backward(&DVector::from_element(1, 1.0), &cache);
        assert!((g.w2[(0, 0)] - 1f64.tanh()).abs() < 1e-15);
        assert_eq!(g.b2[0], 1.0);
        let t = 1f64.tanh();
        assert!((g.b1[0] - (1.0 - t * t)).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = EncoderParams::init(6, 5, 4, &mut rng);
        let x = random_sparse(6, &mut rng);
        let (_, cache) = p.forward(&x);
        let g = p.backward(&DVector::zeros(4), &cache);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = EncoderParams::init(6, 5, 4, &mut rng);
        let x = random_sparse(6, &mut rng);
        assert_eq!(p.forward(&x).0, p.forward(&x).0);
    }

    #[test]
    fn init_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = EncoderParams::init(50, 20, 10, &mut rng);
        let l1 = (6.0f64 / 70.0).sqrt();
        assert!(p.w1.iter().all(|w| w.abs() < l1));
        assert!(p.b1.iter().all(|&b| b == 0.0));
        assert!(p.b2.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn degenerate_guard() {
        let mut f = DVector::zeros(3);
        assert!(guard_degenerate(&mut f));
        assert_eq!(f[0], DEGENERATE_NUDGE);
        assert!(!guard_degenerate(&mut f));
    }

    #[test]
    fn ema_formula_and_fixed_point() {
        let live = EncoderParams {
            w1: DMatrix::from_element(1, 1, 1.0),
            b1: DVector::from_element(1, 1.0),
            w2: DMatrix::from_element(1, 1, 1.0),
            b2: DVector::from_element(1, 1.0),
        };
        let zero = EncoderParams::zeros(1, 1, 1);
        let mut ema = EmaShadow::new(&zero, &DMatrix::zeros(1, 1), 0.999).unwrap();
        ema.update(&live, &DMatrix::from_element(1, 1, 1.0));
        assert!((ema.encoder.w1[(0, 0)] - 0.001).abs() < 1e-15);
        assert!((ema.head_w[(0, 0)] - 0.001).abs() < 1e-15);

        let mut same = EmaShadow::new(&live, &DMatrix::from_element(1, 1, 1.0), 0.5).unwrap();
        same.update(&live, &DMatrix::from_element(1, 1, 1.0));
        assert_eq!(same.encoder, live);

        assert!(EmaShadow::new(&zero, &DMatrix::zeros(1, 1), 1.0).is_err());
        assert!(EmaShadow::new(&zero, &DMatrix::zeros(1, 1), 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn forward_stays_finite(seed in any::<u64>(), scale in 0.0f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = EncoderParams::init(8, 6, 4, &mut rng);
            let mut x = random_sparse(8, &mut rng);
            x.values.iter_mut().for_each(|v| *v *= scale);
            let (f, _) = p.forward(&x);
            prop_assert!(f.iter().all(|v| v.is_finite()));
        }
    }
}

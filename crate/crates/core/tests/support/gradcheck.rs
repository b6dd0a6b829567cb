//! Five-point finite differences against analytic gradients. Every loss is
//! re-derived here from plain arithmetic so the reference does not reuse
//! library code paths. Each check returns the worst error over its instances.

#![allow(dead_code, clippy::needless_range_loop)]

use bddtext::angular::{
    am_loss, bdd_loss, posterior_backward, AngularHead, BalancedTransform, HeadActivation,
};
use bddtext::corpus::SparseVec;
use bddtext::encoder::EncoderParams;
use bddtext::regularizers::{entropy_reg, AdmmState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const H: f64 = 1e-4;
pub const TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Worst {
    pub instances: usize,
    pub rel_err: f64,
}

impl Worst {
    fn new() -> Self {
        Self { instances: 0, rel_err: 0.0 }
    }

    fn add(&mut self, e: f64) {
        self.instances += 1;
        self.rel_err = self.rel_err.max(e);
    }

    fn merge(&mut self, e: f64) {
        self.rel_err = self.rel_err.max(e);
    }
}

/// `mag` is the objective's magnitude at the point. Stencil roundoff grows
/// with it, so it sets the floor under which differences count as noise.
pub fn rel_err(a: &[f64], n: &[f64], mag: f64) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt() + n.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / scale.max(1e-6 * mag.abs().max(1.0))
}

pub fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            let mut at = |d: f64| {
                x[i] = orig + d;
                let v = f(&x);
                x[i] = orig;
                v
            };
            (8.0 * (at(H) - at(-H)) - (at(2.0 * H) - at(-2.0 * H))) / (12.0 * H)
        })
        .collect()
}

/// `Σ_k y_k · (-log softmax_k(s(z - y m)))`
pub fn ref_margin_loss(z: &[f64], y: &[f64], s: f64, m: f64) -> f64 {
    let logits: Vec<f64> = z.iter().zip(y).map(|(z, y)| s * (z - y * m)).collect();
    // -log p_k = log(1 + Σ_{i≠k} exp(l_i - l_k)), kept precise when p_k → 1
    let mut loss = 0.0;
    for (k, (yk, lk)) in y.iter().zip(&logits).enumerate() {
        if *yk == 0.0 {
            continue;
        }
        let rest: Vec<f64> = logits.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, l)| l - lk).collect();
        let mx = rest.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let term = if mx > 0.0 {
            mx + ((-mx).exp() + rest.iter().map(|r| (r - mx).exp()).sum::<f64>()).ln()
        } else {
            rest.iter().map(|r| r.exp()).sum::<f64>().ln_1p()
        };
        loss += yk * term;
    }
    loss
}

fn ref_psi(a: f64, b: f64, theta: f64) -> f64 {
    (a * theta + b).clamp(0.0, PI)
}

fn near_clamp(p: f64) -> bool {
    p.abs() < 1e-2 || (p - PI).abs() < 1e-2
}

fn random_target(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match rng.random_range(0..3) {
        0 => {
            let mut y = vec![0.0; k];
            y[rng.random_range(0..k)] = 1.0;
            y
        }
        1 => {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        }
        _ => {
            let mut y: Vec<f64> = (0..k).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            y[rng.random_range(0..k)] = 1.0;
            y
        }
    }
}

fn random_transform(k: usize, rng: &mut ChaCha8Rng) -> BalancedTransform {
    let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.4..2.5)).collect();
    let b = a.iter().map(|a| (1.0 - a) * rng.random_range(0.2..1.4)).collect();
    BalancedTransform { a, b }
}

/// Margin loss w.r.t. the cosines.
pub fn margin_loss(n: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    for _ in 0..n {
        let k = rng.random_range(2..=5);
        let cos: Vec<f64> = (0..k).map(|_| rng.random_range(-0.95..0.95)).collect();
        let y = random_target(k, &mut rng);
        let s = rng.random_range(0.5..30.0);
        let m = rng.random_range(0.0..0.5);
        let (loss, grad) = am_loss(&cos, &y, s, m);
        let reference = ref_margin_loss(&cos, &y, s, m);
        let num = numeric(&cos, |c| ref_margin_loss(c, &y, s, m));
        worst.add(rel_err(&grad, &num, loss));
        worst.merge((loss - reference).abs() / reference.abs().max(1.0));
    }
    worst
}

/// Balanced loss w.r.t. the raw angles, through `ψ` and its clamp.
pub fn balanced_loss(n: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    while worst.instances < n {
        let k = rng.random_range(2..=5);
        let t = random_transform(k, &mut rng);
        let theta: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..3.09)).collect();
        if (0..k).any(|j| near_clamp(t.a[j] * theta[j] + t.b[j])) {
            continue;
        }
        let y = random_target(k, &mut rng);
        let (s, m) = (rng.random_range(0.5..30.0), rng.random_range(0.0..0.5));
        let reference = |th: &[f64]| {
            let z: Vec<f64> = (0..k).map(|j| ref_psi(t.a[j], t.b[j], th[j]).cos()).collect();
            ref_margin_loss(&z, &y, s, m)
        };
        let (loss, grad) = bdd_loss(&theta, &y, &t, s, m);
        worst.add(rel_err(&grad, &numeric(&theta, reference), loss));
        worst.merge((loss - reference(&theta)).abs() / loss.abs().max(1.0));
    }
    worst
}

/// Loss as a function of the raw representation and column-major K × D weights.
fn ref_head_loss(f: &[f64], w: &[f64], k: usize, t: &BalancedTransform, y: &[f64], s: f64, m: f64) -> f64 {
    let d = f.len();
    let fnorm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let z: Vec<f64> = (0..k)
        .map(|j| {
            let row: Vec<f64> = (0..d).map(|c| w[j + c * k]).collect();
            let wn = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = row.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / (fnorm * wn);
            ref_psi(t.a[j], t.b[j], cos.acos()).cos()
        })
        .collect();
    ref_margin_loss(&z, y, s, m)
}

/// Full head chain: representation and label weights through arccos and `ψ`.
pub fn head_chain(n: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    while worst.instances < n {
        let k = rng.random_range(2..=5);
        let d = rng.random_range(2..=8);
        let head = AngularHead::init(k, d, rng.random_range(1.0..20.0), rng.random_range(0.0..0.4), &mut rng);
        let f = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let t = if rng.random_bool(0.3) {
            BalancedTransform::identity(k)
        } else {
            random_transform(k, &mut rng)
        };
        let act = HeadActivation::new(&f, &head.w, &t);
        let away = act.angles.cos.iter().all(|c| c.abs() < 0.99)
            && (0..k).all(|j| !near_clamp(t.psi(j, act.angles.theta[j])));
        if !away {
            continue;
        }
        let y = random_target(k, &mut rng);
        let (loss, dz) = am_loss(&act.z, &y, head.s, head.m);
        let mut gf = DVector::zeros(d);
        let mut gw = DMatrix::zeros(k, d);
        act.backprop(&f, &head.w, &dz, &mut gf, &mut gw);

        let wv = head.w.as_slice().to_vec();
        let fv = f.as_slice().to_vec();
        let nf = numeric(&fv, |x| ref_head_loss(x, &wv, k, &t, &y, head.s, head.m));
        let nw = numeric(&wv, |x| ref_head_loss(&fv, x, k, &t, &y, head.s, head.m));
        worst.add(rel_err(gf.as_slice(), &nf, loss));
        worst.merge(rel_err(gw.as_slice(), &nw, loss));
        let reference = ref_head_loss(&fv, &wv, k, &t, &y, head.s, head.m);
        worst.merge((loss - reference).abs() / loss.abs().max(1.0));
    }
    worst
}

fn ref_entropy(p: &[f64], rows: usize) -> f64 {
    -p.iter().map(|v| v * v.ln()).sum::<f64>() / rows as f64
}

fn ref_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Entropy w.r.t. the probabilities, and through the posterior softmax.
pub fn entropy(n: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    for _ in 0..n {
        let k = rng.random_range(2..=5);
        let rows = rng.random_range(1..=4);
        let p: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let flat: Vec<f64> = p.concat();
        let (v, g) = entropy_reg(&p).expect("valid rows");
        worst.add(rel_err(&g.concat(), &numeric(&flat, |x| ref_entropy(x, rows)), v));
        worst.merge((v - ref_entropy(&flat, rows)).abs());

        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pz = ref_softmax(&z);
        let (vz, gp) = entropy_reg(std::slice::from_ref(&pz)).expect("valid row");
        let gz = posterior_backward(&pz, &gp[0]);
        worst.merge(rel_err(&gz, &numeric(&z, |x| ref_entropy(&ref_softmax(x), 1)), vz));
    }
    worst
}

/// ADMM augmented penalty w.r.t. the label weights.
pub fn admm_penalty(n: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    for _ in 0..n {
        let (k, d) = (rng.random_range(2..=5), rng.random_range(2..=8));
        let w0 = DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
        let mut st = AdmmState::new(&w0, rng.random_range(0.1..5.0), 0.1).expect("valid penalty");
        st.theta = DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0));
        let tau = st.tau_penalty;
        let reference = |x: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..x.len() {
                let r = st.w_hat.as_slice()[i] - x[i] + st.theta.as_slice()[i] / tau;
                acc += r * r;
            }
            0.5 * tau * acc
        };
        let v = st.penalty(&w);
        let g = st.penalty_grad(&w);
        worst.add(rel_err(g.as_slice(), &numeric(w.as_slice(), reference), v));
        worst.merge((v - reference(w.as_slice())).abs() / v.max(1.0));
    }
    worst
}

/// Encoder backward pass against the scalar objective `g · f(x)`.
pub fn encoder(n: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    for _ in 0..n {
        let (v, h, d) = (rng.random_range(2..=10), rng.random_range(2..=8), rng.random_range(2..=8));
        let mut p = EncoderParams::init(v, h, d, &mut rng);
        p.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        p.b2.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let dense: Vec<f64> = (0..v)
            .map(|_| if rng.random_bool(0.5) { rng.random_range(-1.0..1.0) } else { 0.0 })
            .collect();
        let x = SparseVec::from_dense(&dense);
        let g = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));

        // f = W2ᵀ tanh(W1ᵀ x + b1) + b2
        let objective = |q: &EncoderParams| -> f64 {
            let mut out = 0.0;
            for c in 0..d {
                let mut fc = q.b2[c];
                for j in 0..h {
                    let mut pre = q.b1[j];
                    for i in 0..v {
                        pre += q.w1[(i, j)] * dense[i];
                    }
                    fc += q.w2[(j, c)] * pre.tanh();
                }
                out += g[c] * fc;
            }
            out
        };
        let (_, cache) = p.forward(&x);
        let grads = p.backward(&g, &cache);
        let analytic: Vec<f64> = grads.tensors().concat();
        let flat: Vec<f64> = p.tensors().concat();
        let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
        let rebuild = |x: &[f64]| -> EncoderParams {
            let mut q = p.clone();
            let mut off = 0;
            for (t, &len) in q.tensors_mut().into_iter().zip(&sizes) {
                t.copy_from_slice(&x[off..off + len]);
                off += len;
            }
            q
        };
        let num = numeric(&flat, |x| objective(&rebuild(x)));
        worst.add(rel_err(&analytic, &num, objective(&p)));
    }
    worst
}

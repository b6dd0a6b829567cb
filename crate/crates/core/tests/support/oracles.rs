//! Independent references for the transform, pseudo-labeling, SVT/ADMM and
//! metric contracts. Each check returns a summary the caller asserts on.

#![allow(dead_code)]

use bddtext::angular::{am_loss, bdd_loss, BalancedTransform, COS_CLAMP};
use bddtext::metrics::{average_precision, micro_macro_f1, ranking_loss};
use bddtext::pseudo::{apply_cap, cap_thresholds, sharpen};
use bddtext::regularizers::{svt, AdmmState};
use bddtext::stats::estimate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub instances: usize,
    /// Largest deviation from the reference.
    pub worst: f64,
    /// Instances that broke an exact contract.
    pub violations: usize,
    /// Instances excused by a documented exception (CAP ties).
    pub excused: usize,
}

impl Summary {
    fn see(&mut self, dev: f64) {
        self.worst = self.worst.max(dev);
    }
}

fn sample_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

fn angle(f: &[f64], c: &[f64]) -> f64 {
    let dot: f64 = f.iter().zip(c).map(|(a, b)| a * b).sum();
    let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    (dot / (nf * nc)).clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP).acos()
}

/// Per sample set: the transform built from the set's own moments sends every
/// label's angle variance to the pooled value. `worst` is the largest gap.
/// Sets with a variance under the floor are redrawn.
pub fn balance_invariant(sets: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Summary::default();
    while out.instances < sets {
        let k = rng.random_range(2..=5);
        let d = rng.random_range(2..=8);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
        let mut reprs = Vec::new();
        let mut ys = Vec::new();
        for label in 0..k {
            let spread = rng.random_range(0.05..1.0);
            for _ in 0..rng.random_range(2..=12) {
                let f: Vec<f64> = centers[label].iter().map(|c| c + spread * rng.random_range(-1.0..1.0)).collect();
                let mut y = vec![0.0; k];
                y[label] = 1.0;
                reprs.push(DVector::from_vec(f.clone()));
                ys.push(y);
                members[label].push(f);
            }
        }
        let est = estimate(&reprs, &ys);
        let mu: Vec<f64> = est.mu.iter().map(|m| m.expect("every label has members")).collect();
        let var: Vec<f64> = est.var.iter().map(|v| v.expect("every label has two members")).collect();
        let (t, floored) = BalancedTransform::from_moments(&mu, &var);
        if floored > 0 {
            continue;
        }

        let mut own_var = Vec::new();
        let mut psi_sets = Vec::new();
        for (label, fs) in members.iter().enumerate() {
            let c: Vec<f64> = (0..d).map(|j| fs.iter().map(|f| f[j]).sum::<f64>() / fs.len() as f64).collect();
            let beta: Vec<f64> = fs.iter().map(|f| angle(f, &c)).collect();
            own_var.push(sample_var(&beta));
            psi_sets.push(beta.iter().map(|&b| t.psi(label, b)).collect::<Vec<_>>());
        }
        let pooled = own_var.iter().sum::<f64>() / k as f64;
        for psi in &psi_sets {
            out.see((sample_var(psi) - pooled).abs());
        }
        out.instances += 1;
    }
    out
}

/// With equal variances the transform is the identity and the balanced loss
/// equals the plain margin loss bit for bit. Counts mismatches.
pub fn equal_variance_identity(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Summary::default();
    for _ in 0..n {
        let k = rng.random_range(2..=5);
        let v = rng.random_range(1e-3..1.0);
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..3.0)).collect();
        let (t, _) = BalancedTransform::from_moments(&mu, &vec![v; k]);
        let theta: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::PI)).collect();
        let mut y = vec![0.0; k];
        y[rng.random_range(0..k)] = 1.0;
        let (s, m) = (rng.random_range(0.5..30.0), rng.random_range(0.0..0.5));
        let cos: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let (lb, _) = bdd_loss(&theta, &y, &t, s, m);
        let (la, _) = am_loss(&cos, &y, s, m);
        if lb.to_bits() != la.to_bits() || !t.is_identity() {
            out.violations += 1;
        }
        out.instances += 1;
    }
    out
}

/// Sharpened rows sum to one and keep their argmax. `worst` is the largest
/// deviation of a row sum from 1.
pub fn sharpen_contract(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Summary::default();
    for _ in 0..n {
        let k = rng.random_range(2..=8);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1e-4..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let q = sharpen(&p, rng.random_range(0.05..2.0)).expect("valid row");
        out.see((q.iter().sum::<f64>() - 1.0).abs());
        let top = |v: &[f64]| {
            let mut best = 0;
            for i in 1..v.len() {
                if v[i] > v[best] {
                    best = i;
                }
            }
            best
        };
        if top(&p) != top(&q) {
            out.violations += 1;
        }
        out.instances += 1;
    }
    out
}

/// CAP realized positive fraction per class within `1/N_u` of the target
/// prevalence; classes whose threshold score is tied are counted as excused.
pub fn cap_contract(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Summary::default();
    for i in 0..n {
        let k = rng.random_range(2..=6);
        let rows = rng.random_range(5..=200);
        // every fourth matrix uses a coarse grid so that ties occur
        let coarse = i % 4 == 0;
        let scores: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        let s = rng.random_range(0.0..1.0);
                        if coarse {
                            (s * 10.0f64).floor() / 10.0
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
        let prev: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let gamma = cap_thresholds(&scores, &prev);
        let y = apply_cap(&scores, &gamma);
        let mut excused = false;
        let mut bad = false;
        for c in 0..k {
            let realized = y.iter().filter(|r| r[c]).count() as f64 / rows as f64;
            let dev = (realized - prev[c]).abs();
            if dev <= 1.0 / rows as f64 + 1e-12 {
                continue;
            }
            let tied = scores.iter().filter(|r| r[c] == gamma[c]).count() > 1;
            if tied {
                excused = true;
            } else {
                bad = true;
                out.see(dev);
            }
        }
        out.violations += bad as usize;
        out.excused += excused as usize;
        out.instances += 1;
    }
    out
}

fn rot(a: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// `½‖X − M‖² + t‖X‖_*` minimized by search over `X = R(α) diag(s) R(β)ᵀ`:
/// a grid over both rotation angles, then pattern refinement. For fixed
/// rotations the objective separates in `s` and each entry soft-thresholds.
fn brute_prox_2x2(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let build = |a: f64, b: f64| -> (f64, DMatrix<f64>) {
        let (u, v) = (rot(a), rot(b));
        let s: Vec<f64> = (0..2).map(|i| soft((u.column(i).transpose() * m * v.column(i))[(0, 0)], t)).collect();
        let x = &u * DMatrix::from_diagonal(&DVector::from_vec(s.clone())) * v.transpose();
        let obj = 0.5 * (&x - m).norm_squared() + t * (s[0].abs() + s[1].abs());
        (obj, x)
    };
    let steps = 180;
    let h = std::f64::consts::PI / steps as f64;
    let (mut best, mut ab) = (f64::INFINITY, (0.0, 0.0));
    for i in 0..steps {
        for j in 0..steps {
            let (a, b) = (i as f64 * h, j as f64 * h);
            let (o, _) = build(a, b);
            if o < best {
                best = o;
                ab = (a, b);
            }
        }
    }
    let mut step = h;
    while step > 1e-12 {
        let mut moved = false;
        for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step), (step, step), (-step, -step), (step, -step), (-step, step)] {
            let (o, _) = build(ab.0 + da, ab.1 + db);
            if o < best {
                best = o;
                ab = (ab.0 + da, ab.1 + db);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    build(ab.0, ab.1).1
}

/// SVT against brute-forced proximal points of the nuclear norm on 2 × 2.
pub fn svt_prox(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Summary::default();
    for _ in 0..n {
        let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0));
        let t = rng.random_range(0.0..1.5);
        let got = svt(&m, t).expect("finite input");
        let want = brute_prox_2x2(&m, t);
        out.see((got - want).norm());
        out.instances += 1;
    }
    out
}

/// Alternating updates on `½‖W − A‖² + λ‖Ŵ‖_*` s.t. `W = Ŵ`, with the exact
/// W-step `(A + τŴ + Θ)/(1 + τ)`. Returns the iteration at which the primal
/// residual first drops below `tol`, with the final residual.
pub fn admm_surrogate(seed: u64, max_iter: usize, tol: f64) -> (Option<usize>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let (tau, lambda) = (1.0, 0.5);
    let mut w = a.clone();
    let mut st = AdmmState::new(&w, tau, lambda).expect("valid penalty");
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        w = (&a + &st.w_hat * tau + &st.theta) / (1.0 + tau);
        residual = st.step(&w).expect("finite input");
        if residual < tol {
            return (Some(it), residual);
        }
    }
    (None, residual)
}

fn brute_f1(t: &[Vec<bool>], p: &[Vec<bool>]) -> (f64, f64) {
    let k = t[0].len();
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let mut cells = Vec::new();
    for i in 0..t.len() {
        for c in 0..k {
            cells.push((c, t[i][c], p[i][c]));
        }
    }
    let count = |pred: &dyn Fn(&(usize, bool, bool)) -> bool| cells.iter().filter(|x| pred(x)).count();
    let micro = f1(count(&|x| x.1 && x.2), count(&|x| !x.1 && x.2), count(&|x| x.1 && !x.2));
    let mut macro_sum = 0.0;
    for c in 0..k {
        macro_sum += f1(
            count(&|x| x.0 == c && x.1 && x.2),
            count(&|x| x.0 == c && !x.1 && x.2),
            count(&|x| x.0 == c && x.1 && !x.2),
        );
    }
    (micro, macro_sum / k as f64)
}

/// Pair enumeration over every ordered label pair of each row.
fn brute_ranking(t: &[Vec<bool>], s: &[Vec<f64>]) -> Option<(f64, f64)> {
    let mut rl_sum = 0.0;
    let mut ap_sum = 0.0;
    let mut rows = 0;
    for (ti, si) in t.iter().zip(s) {
        let k = ti.len();
        let n_rel = ti.iter().filter(|&&r| r).count();
        if n_rel == 0 || n_rel == k {
            continue;
        }
        let mut bad = 0;
        let mut pairs = 0;
        for a in 0..k {
            for b in 0..k {
                if ti[a] && !ti[b] {
                    pairs += 1;
                    bad += (si[a] <= si[b]) as usize;
                }
            }
        }
        // worst competition rank: position of the last member of the tie group
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&x, &y| si[y].total_cmp(&si[x]));
        let mut rank = vec![0usize; k];
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && si[order[j + 1]] == si[order[i]] {
                j += 1;
            }
            for &o in &order[i..=j] {
                rank[o] = j + 1;
            }
            i = j + 1;
        }
        let mut ap = 0.0;
        for l in 0..k {
            if ti[l] {
                let rel_at_or_above = (0..k).filter(|&j| ti[j] && rank[j] <= rank[l]).count();
                ap += rel_at_or_above as f64 / rank[l] as f64;
            }
        }
        rl_sum += bad as f64 / pairs as f64;
        ap_sum += ap / n_rel as f64;
        rows += 1;
    }
    (rows > 0).then(|| (rl_sum / rows as f64, ap_sum / rows as f64))
}

/// Library metrics against the brute-force references on random instances with
/// `N ≤ 20`, `K ≤ 6` and coarse scores (many ties). Any inequality counts.
pub fn metrics(n: usize, seed: u64) -> Summary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Summary::default();
    for _ in 0..n {
        let rows = rng.random_range(1..=20);
        let k = rng.random_range(1..=6);
        let t: Vec<Vec<bool>> = (0..rows).map(|_| (0..k).map(|_| rng.random_bool(0.4)).collect()).collect();
        let p: Vec<Vec<bool>> = (0..rows).map(|_| (0..k).map(|_| rng.random_bool(0.4)).collect()).collect();
        let s: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..k).map(|_| rng.random_range(0..5) as f64 / 4.0).collect())
            .collect();
        let f = micro_macro_f1(&t, &p).expect("same shapes");
        let (micro, macro_f1) = brute_f1(&t, &p);
        let mut ok = f.micro == micro && f.macro_f1 == macro_f1;
        match (brute_ranking(&t, &s), ranking_loss(&t, &s), average_precision(&t, &s)) {
            (Some((rl, ap)), Ok(rl2), Ok(ap2)) => ok &= rl == rl2 && ap == ap2,
            (None, Err(_), Err(_)) => {}
            _ => ok = false,
        }
        out.violations += (!ok) as usize;
        out.instances += 1;
    }
    out
}

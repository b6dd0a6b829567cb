//! Warm-up, self-training epochs and prediction.
//!
//! Multi-class epochs draw `batch_labeled` labeled and `batch_unlabeled`
//! unlabeled texts per inner loop. Pseudo-labels for the unlabeled batch come
//! from the parameters as they stand before that loop's update; the update then
//! minimizes the supervised balanced loss, the weighted unsupervised loss on the
//! pseudo-labels and the entropy term. Multi-label epochs score the whole
//! unlabeled pool once at the start of the epoch, derive class-distribution-aware
//! pseudo-labels, and add the ADMM proximal penalty on the label weights; the
//! auxiliary and dual variables move after the epoch's inner loops. Every epoch
//! ends by re-estimating prototypes and angle moments over the texts it used.

mod config;
mod optim;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::angular::{self, AngularHead, BalancedTransform, CosineAngles, HeadActivation};
use crate::corpus::{tokenize, Document, FeatureSpace, LabelVocab, SparseVec};
use crate::encoder::{guard_degenerate, EmaShadow, EncoderParams};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::pseudo::{self, AdaptiveThresholdState, Augmenter, ConfidenceMask, View};
use crate::regularizers::{entropy_reg, singular_values, AdmmState};
use crate::stats::{self, AngleStats};

pub use config::{Mode, TrainConfig};
pub use optim::OptimizerState;

/// A featurized document. `y` is empty for unlabeled texts.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub x: SparseVec,
    pub degenerate: bool,
    pub y: Vec<f64>,
}

/// Everything a run reads: label set, feature space and the three splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub mode: Mode,
    pub labels: LabelVocab,
    pub features: FeatureSpace,
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub dev: Vec<Example>,
}

impl Dataset {
    /// Label set from the labeled split; tf-idf vocabulary from labeled and
    /// unlabeled texts.
    pub fn prepare(
        mode: Mode,
        min_df: usize,
        max_features: usize,
        labeled: &[Document],
        unlabeled: &[Document],
        dev: &[Document],
    ) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Config("labeled split is empty".into()));
        }
        let labels = LabelVocab::from_documents(labeled)?;
        let train_texts: Vec<Document> = labeled.iter().chain(unlabeled).cloned().collect();
        let features = FeatureSpace::build(&train_texts, min_df, max_features)?;
        Self::with_features(mode, labels, features, labeled, unlabeled, dev)
    }

    pub fn with_features(
        mode: Mode,
        labels: LabelVocab,
        features: FeatureSpace,
        labeled: &[Document],
        unlabeled: &[Document],
        dev: &[Document],
    ) -> Result<Self> {
        let mut ds = Self {
            mode,
            labels,
            features,
            labeled: Vec::new(),
            unlabeled: Vec::new(),
            dev: Vec::new(),
        };
        ds.labeled = ds.encode_labeled(labeled)?;
        ds.unlabeled = unlabeled.iter().map(|d| ds.example(d, Vec::new())).collect();
        ds.dev = ds.encode_labeled(dev)?;
        Ok(ds)
    }

    fn example(&self, doc: &Document, y: Vec<f64>) -> Example {
        let tokens = tokenize(&doc.text);
        let f = self.features.featurize_tokens(tokens.iter().map(String::as_str));
        Example {
            id: doc.id.clone(),
            tokens,
            x: f.vec,
            degenerate: f.degenerate,
            y,
        }
    }

    /// Featurizes labeled documents, enforcing one label per text in multi-class mode.
    pub fn encode_labeled(&self, docs: &[Document]) -> Result<Vec<Example>> {
        docs.iter()
            .map(|d| {
                if d.labels.is_empty() {
                    return Err(Error::Config(format!("document {:?} has no label", d.id)));
                }
                if !self.mode.is_multi_label() && d.labels.len() != 1 {
                    return Err(Error::Config(format!(
                        "document {:?} has {} labels but mode {} is multi-class",
                        d.id,
                        d.labels.len(),
                        self.mode
                    )));
                }
                Ok(self.example(d, self.labels.encode(&d.labels)?))
            })
            .collect()
    }

    pub fn encode_unlabeled(&self, docs: &[Document]) -> Vec<Example> {
        docs.iter().map(|d| self.example(d, Vec::new())).collect()
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }
}

/// Borrowed parameters used for inference; never mutated through this view.
#[derive(Clone, Copy)]
pub struct ModelView<'a> {
    pub encoder: &'a EncoderParams,
    pub w: &'a DMatrix<f64>,
    pub transform: &'a BalancedTransform,
}

impl ModelView<'_> {
    /// Representation with the degenerate nudge applied; the flag reports whether it was.
    pub fn represent(&self, x: &SparseVec) -> (DVector<f64>, bool) {
        let (mut f, _) = self.encoder.forward(x);
        let nudged = guard_degenerate(&mut f);
        (f, nudged)
    }

    pub fn angles(&self, x: &SparseVec) -> CosineAngles {
        angular::cosine_angles(&self.represent(x).0, self.w)
    }

    pub fn posterior(&self, x: &SparseVec) -> Vec<f64> {
        angular::posterior(&self.angles(x).theta, self.transform)
    }

    pub fn posteriors<'x>(&self, xs: impl IntoIterator<Item = &'x SparseVec>) -> Vec<Vec<f64>> {
        xs.into_iter().map(|x| self.posterior(x)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<Vec<bool>>,
    pub scores: Vec<Vec<f64>>,
}

/// Trained parameters plus everything prediction needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub mode: Mode,
    pub encoder: EncoderParams,
    pub head: AngularHead,
    pub transform: BalancedTransform,
    pub stats: AngleStats,
    pub ema: EmaShadow,
    /// Multi-label prediction thresholds, fit on the shadow's scores after the last epoch.
    pub cap_gamma: Option<Vec<f64>>,
}

impl Model {
    pub fn live(&self) -> ModelView<'_> {
        ModelView {
            encoder: &self.encoder,
            w: &self.head.w,
            transform: &self.transform,
        }
    }

    pub fn shadow(&self) -> ModelView<'_> {
        ModelView {
            encoder: &self.ema.encoder,
            w: &self.ema.head_w,
            transform: &self.transform,
        }
    }

    /// Predictions from the EMA shadow. Multi-class takes the argmax of the
    /// posterior; multi-label keeps every label whose score clears its frozen
    /// threshold (argmax only when no thresholds exist).
    pub fn predict<'x>(&self, xs: impl IntoIterator<Item = &'x SparseVec>) -> Prediction {
        let scores = self.shadow().posteriors(xs);
        let labels = match (&self.mode, &self.cap_gamma) {
            (Mode::Mlc, Some(gamma)) => pseudo::apply_cap(&scores, gamma),
            _ => scores.iter().map(|p| one_hot_bool(pseudo::argmax(p), p.len())).collect(),
        };
        Prediction { labels, scores }
    }

    pub fn evaluate(&self, examples: &[Example]) -> Result<EvalReport> {
        let pred = self.predict(examples.iter().map(|e| &e.x));
        let truth: Vec<Vec<bool>> = examples.iter().map(|e| to_bool(&e.y)).collect();
        EvalReport::compute(&truth, &pred.labels, &pred.scores)
    }
}

fn one_hot(k: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn one_hot_bool(k: usize, n: usize) -> Vec<bool> {
    (0..n).map(|j| j == k).collect()
}

fn to_bool(y: &[f64]) -> Vec<bool> {
    y.iter().map(|&v| v > 0.5).collect()
}

fn to_f64(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Representations nudged off the origin before a cosine.
    pub degenerate_reprs: u64,
    /// Label variances raised to the floor when building a transform.
    pub floored_vars: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub epoch_losses: Vec<f64>,
}

/// Per-epoch means of the objective terms. `total = sup + lambda1 * unsup
/// + lambda2 * entropy + penalty`, where `unsup` already carries the ramp weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub total: f64,
    pub sup: f64,
    pub unsup: f64,
    pub entropy: f64,
    pub penalty: f64,
    pub kept_fraction: f64,
    pub avg_dlav: f64,
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub admm_residual: Option<f64>,
    pub w_rank: usize,
    pub dev_micro_f1: Option<f64>,
    pub dev_macro_f1: Option<f64>,
}

/// Hook run after each epoch, e.g. to compute diagnostics against hidden truth.
pub trait EpochObserver {
    fn after_epoch(&mut self, trainer: &Trainer<'_>, report: &EpochReport) -> Result<()>;
}

impl EpochObserver for () {
    fn after_epoch(&mut self, _: &Trainer<'_>, _: &EpochReport) -> Result<()> {
        Ok(())
    }
}

/// Pseudo-labels, keep flags and inputs for one unlabeled batch.
type PseudoBatch = (Vec<Vec<f64>>, Vec<bool>, Vec<SparseVec>);

/// Mutable training state beyond the model itself.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub opt: OptimizerState,
    pub admm: Option<AdmmState>,
    pub adaptive: AdaptiveThresholdState,
    /// Self-training steps taken (drives the ramp).
    pub steps: usize,
    pub epoch: usize,
    pub warmed_up: bool,
    pub counters: Counters,
    /// Multi-label pseudo-labels of the unlabeled pool for the current epoch.
    pub pool_pseudo: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
}

struct Grads {
    encoder: EncoderParams,
    w: DMatrix<f64>,
}

impl Grads {
    fn zero(&mut self) {
        self.encoder.fill_zero();
        self.w.fill(0.0);
    }
}

/// Loss contribution of one text.
struct Target<'y> {
    y: &'y [f64],
    /// Gradient weight of the margin loss.
    weight: f64,
    margin: f64,
}

/// Forward and backward for one text; returns `(margin loss, entropy)` and adds
/// `weight * dloss + entropy_weight * dentropy` into `grads`.
fn accumulate(
    model: &Model,
    x: &SparseVec,
    target: Option<Target<'_>>,
    entropy_weight: f64,
    grads: &mut Grads,
    counters: &mut Counters,
) -> Result<(f64, f64)> {
    let (mut f, cache) = model.encoder.forward(x);
    if guard_degenerate(&mut f) {
        counters.degenerate_reprs += 1;
    }
    let act = HeadActivation::new(&f, &model.head.w, &model.transform);
    let k = act.z.len();
    let mut dz = vec![0.0; k];
    let mut loss = 0.0;
    if let Some(t) = target {
        // The margin loss over transformed cosines is the balanced loss.
        let (l, g) = angular::am_loss(&act.z, t.y, model.head.s, t.margin);
        loss = l;
        if t.weight != 0.0 {
            dz.iter_mut().zip(&g).for_each(|(d, g)| *d += t.weight * g);
        }
    }
    let mut ent = 0.0;
    if entropy_weight != 0.0 {
        let p = act.posterior();
        let (e, de) = entropy_reg(std::slice::from_ref(&p))?;
        ent = e;
        let back = angular::posterior_backward(&p, &de[0]);
        dz.iter_mut().zip(&back).for_each(|(d, g)| *d += entropy_weight * g);
    }
    if dz.iter().any(|&g| g != 0.0) {
        let mut grad_f = DVector::zeros(f.len());
        act.backprop(&f, &model.head.w, &dz, &mut grad_f, &mut grads.w);
        model.encoder.backward_into(&grad_f, &cache, &mut grads.encoder);
    }
    Ok((loss, ent))
}

#[derive(Default)]
struct EpochAccum {
    steps: usize,
    total: f64,
    sup: f64,
    unsup: f64,
    entropy: f64,
    penalty: f64,
    kept: usize,
    offered: usize,
    /// Labeled texts seen this epoch.
    labeled: BTreeMap<usize, ()>,
    /// Unlabeled texts kept this epoch and their latest pseudo-label.
    unlabeled: BTreeMap<usize, Vec<f64>>,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode != data.mode {
            return Err(Error::Config(format!(
                "config mode {} does not match dataset mode {}",
                cfg.mode, data.mode
            )));
        }
        if data.labeled.is_empty() {
            return Err(Error::Config("labeled split is empty".into()));
        }
        let k = data.n_labels();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = EncoderParams::init(data.features.dim(), cfg.hidden, cfg.repr_dim, &mut rng);
        let head = AngularHead::init(k, cfg.repr_dim, cfg.s, cfg.m, &mut rng);
        let ema = EmaShadow::new(&encoder, &head.w, cfg.ema_decay)?;
        let shapes: Vec<usize> = encoder
            .tensors()
            .iter()
            .map(|t| t.len())
            .chain([head.w.len()])
            .collect();
        let model = Model {
            mode: cfg.mode,
            encoder,
            transform: BalancedTransform::identity(k),
            stats: AngleStats::new(k, cfg.repr_dim, cfg.gamma_ma)?,
            head,
            ema,
            cap_gamma: None,
        };
        let state = TrainState {
            model,
            opt: OptimizerState::new(&shapes, cfg.weight_decay),
            admm: None,
            adaptive: AdaptiveThresholdState::new(k, cfg.threshold_momentum)?,
            steps: 0,
            epoch: 0,
            warmed_up: false,
            counters: Counters::default(),
            pool_pseudo: Vec::new(),
            rng,
        };
        Ok(Self { cfg, data, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn model(&self) -> &Model {
        &self.state.model
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    fn new_grads(&self) -> Grads {
        Grads {
            encoder: self.state.model.encoder.zeros_like(),
            w: DMatrix::zeros(self.state.model.head.w.nrows(), self.state.model.head.w.ncols()),
        }
    }

    fn apply_update(&mut self, grads: &Grads) -> Result<()> {
        let st = &mut self.state;
        let lr_e = self.cfg.lr_encoder;
        let lr_h = self.cfg.lr_head;
        {
            let [w1, b1, w2, b2] = st.model.encoder.tensors_mut();
            let mut params: [&mut [f64]; 5] = [w1, b1, w2, b2, st.model.head.w.as_mut_slice()];
            let g = grads.encoder.tensors();
            let gs: [&[f64]; 5] = [g[0], g[1], g[2], g[3], grads.w.as_slice()];
            st.opt.step(&mut params, &gs, &[lr_e, lr_e, lr_e, lr_e, lr_h])?;
        }
        st.model.ema.update(&st.model.encoder, &st.model.head.w);
        Ok(())
    }

    fn check_coverage(&self) -> Result<()> {
        if self.cfg.mode.is_multi_label() {
            return Ok(());
        }
        let mut seen = vec![false; self.data.n_labels()];
        for e in &self.data.labeled {
            seen[pseudo::argmax(&e.y)] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "class {:?} has no labeled text",
                self.data.labels.names()[k]
            )));
        }
        Ok(())
    }

    /// Plain margin-loss training on the labeled split, then the first
    /// estimate of the label statistics from labeled texts only.
    pub fn warmup(&mut self) -> Result<WarmupReport> {
        self.check_coverage()?;
        let n = self.data.labeled.len();
        let mut grads = self.new_grads();
        let mut order: Vec<usize> = (0..n).collect();
        let mut epoch_losses = Vec::with_capacity(self.cfg.warmup_epochs);
        let identity = BalancedTransform::identity(self.data.n_labels());
        let saved = std::mem::replace(&mut self.state.model.transform, identity);
        for _ in 0..self.cfg.warmup_epochs {
            order.shuffle(&mut self.state.rng);
            let mut total = 0.0;
            for batch in order.chunks(self.cfg.warmup_batch) {
                grads.zero();
                let scale = 1.0 / batch.len() as f64;
                for &i in batch {
                    let ex = &self.data.labeled[i];
                    let target = Target {
                        y: &ex.y,
                        weight: scale,
                        margin: self.cfg.m,
                    };
                    let (l, _) = accumulate(&self.state.model, &ex.x, Some(target), 0.0, &mut grads, &mut self.state.counters)?;
                    total += l;
                }
                if !total.is_finite() {
                    return Err(Error::Numerical(format!("warm-up loss became {total}")));
                }
                self.apply_update(&grads)?;
            }
            epoch_losses.push(total / n as f64);
        }
        self.state.model.transform = saved;

        let members: BTreeMap<usize, ()> = (0..n).map(|i| (i, ())).collect();
        self.refresh_stats(&members, &BTreeMap::new());
        if self.cfg.mode.is_multi_label() && self.cfg.lambda3 > 0.0 {
            self.state.admm = Some(AdmmState::new(&self.state.model.head.w, self.cfg.tau_penalty, self.cfg.lambda3)?);
        }
        self.state.warmed_up = true;
        self.calibrate();
        Ok(WarmupReport { epoch_losses })
    }

    /// Re-estimates prototypes and angle moments from the given texts with the
    /// live encoder, folds them into the moving average and rebuilds the transform.
    fn refresh_stats(&mut self, labeled: &BTreeMap<usize, ()>, unlabeled: &BTreeMap<usize, Vec<f64>>) {
        let view = self.state.model.live();
        let mut reprs = Vec::new();
        let mut ys = Vec::new();
        for &i in labeled.keys() {
            let ex = &self.data.labeled[i];
            if !ex.degenerate {
                reprs.push(view.represent(&ex.x).0);
                ys.push(ex.y.clone());
            }
        }
        for (&j, y) in unlabeled {
            let ex = &self.data.unlabeled[j];
            if !ex.degenerate && y.iter().any(|&v| v != 0.0) {
                reprs.push(view.represent(&ex.x).0);
                ys.push(y.clone());
            }
        }
        if reprs.is_empty() {
            return;
        }
        let est = stats::estimate(&reprs, &ys);
        self.state.model.stats.ma_update(&est);
        self.rebuild_transform();
    }

    fn rebuild_transform(&mut self) {
        let k = self.data.n_labels();
        self.state.model.transform = if self.cfg.use_bdd {
            let st = &self.state.model.stats;
            let (t, floored) = BalancedTransform::from_moments(&st.mu, &st.effective_var());
            self.state.counters.floored_vars += floored as u64;
            t
        } else {
            BalancedTransform::identity(k)
        };
    }

    fn sample(&mut self, n: usize, count: usize) -> Vec<usize> {
        if n == 0 {
            return Vec::new();
        }
        (0..count).map(|_| self.state.rng.random_range(0..n)).collect()
    }

    /// Pseudo-labels, keep flags and training inputs for an unlabeled batch,
    /// computed from the current parameters before they are updated.
    fn mcc_pseudo_labels(&mut self, idx: &[usize]) -> Result<PseudoBatch> {
        let k = self.data.n_labels();
        let model = &self.state.model;
        let view = model.live();
        match self.cfg.mode {
            Mode::MccS => {
                let mut ys = Vec::with_capacity(idx.len());
                for &j in idx {
                    let p = view.posterior(&self.data.unlabeled[j].x);
                    ys.push(pseudo::sharpen(&p, self.cfg.temperature)?);
                }
                let xs = idx.iter().map(|&j| self.data.unlabeled[j].x.clone()).collect();
                Ok((ys, vec![true; idx.len()], xs))
            }
            Mode::MccF => {
                let aug = Augmenter::new(self.cfg.seed);
                let epoch = self.state.epoch;
                let fs = &self.data.features;
                let view_x = |j: usize, v: View| {
                    let ex = &self.data.unlabeled[j];
                    fs.featurize_tokens(aug.view(&ex.tokens, &ex.id, epoch, v)).vec
                };
                let probs: Vec<Vec<f64>> = idx.iter().map(|&j| view.posterior(&view_x(j, View::Weak))).collect();
                let strong: Vec<SparseVec> = idx.iter().map(|&j| view_x(j, View::Strong)).collect();
                let out = self.state.adaptive.mask(&probs);
                let ys = out.labels.iter().map(|&l| one_hot(l, k)).collect();
                Ok((ys, out.keep, strong))
            }
            Mode::Mlc => unreachable!("multi-label pseudo-labels are produced per epoch"),
        }
    }

    fn mcc_step(&mut self, acc: &mut EpochAccum, grads: &mut Grads) -> Result<()> {
        let cfg = self.cfg.clone();
        let lab = self.sample(self.data.labeled.len(), cfg.batch_labeled);
        let touches_unlabeled = cfg.lambda1 > 0.0 || cfg.lambda2 > 0.0;
        let unl = if touches_unlabeled {
            self.sample(self.data.unlabeled.len(), cfg.batch_unlabeled)
        } else {
            Vec::new()
        };
        let (ys, keep, xs) = if unl.is_empty() {
            (Vec::new(), Vec::new(), Vec::new())
        } else {
            self.mcc_pseudo_labels(&unl)?
        };
        let ramp = match cfg.mode {
            Mode::MccS => pseudo::ramp_up(self.state.steps, cfg.ramp_steps),
            _ => 1.0,
        };

        grads.zero();
        let n_ent = (lab.len() + unl.len()) as f64;
        let ent_w = if cfg.lambda2 > 0.0 { cfg.lambda2 / n_ent } else { 0.0 };
        let (mut sup, mut unsup, mut ent) = (0.0, 0.0, 0.0);
        let bl = lab.len() as f64;
        for &i in &lab {
            let ex = &self.data.labeled[i];
            let t = Target {
                y: &ex.y,
                weight: 1.0 / bl,
                margin: cfg.m,
            };
            let (l, e) = accumulate(&self.state.model, &ex.x, Some(t), ent_w, grads, &mut self.state.counters)?;
            sup += l / bl;
            ent += e;
        }
        let bu = unl.len().max(1) as f64;
        let u_margin = if cfg.unlabeled_margin { cfg.m } else { 0.0 };
        for (pos, x) in xs.iter().enumerate() {
            let target = keep[pos].then(|| Target {
                y: &ys[pos],
                weight: cfg.lambda1 * ramp / bu,
                margin: u_margin,
            });
            let (l, e) = accumulate(&self.state.model, x, target, ent_w, grads, &mut self.state.counters)?;
            unsup += l / bu;
            ent += e;
        }
        let ent_mean = if n_ent > 0.0 { ent / n_ent } else { 0.0 };
        let total = sup + cfg.lambda1 * ramp * unsup + cfg.lambda2 * ent_mean;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "epoch {} step {}: loss {total} (sup {sup}, unsup {unsup}, entropy {ent_mean})",
                self.state.epoch, self.state.steps
            )));
        }
        self.apply_update(grads)?;
        self.state.steps += 1;

        acc.steps += 1;
        acc.total += total;
        acc.sup += sup;
        acc.unsup += ramp * unsup;
        acc.entropy += ent_mean;
        for &i in &lab {
            acc.labeled.insert(i, ());
        }
        acc.offered += unl.len();
        for (pos, &j) in unl.iter().enumerate() {
            if keep[pos] {
                acc.kept += 1;
                if cfg.lambda1 > 0.0 {
                    acc.unlabeled.insert(j, ys[pos].clone());
                }
            }
        }
        Ok(())
    }

    /// Per-class score thresholds matching the labeled prevalence, fit on the
    /// unlabeled pool (or on the labeled texts when there is no pool).
    fn cap_gamma(&self, view: ModelView<'_>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let k = self.data.n_labels();
        let ys: Vec<Vec<f64>> = self.data.labeled.iter().map(|e| e.y.clone()).collect();
        let prevalence = pseudo::prevalence(&ys, k);
        let pool = if self.data.unlabeled.is_empty() {
            &self.data.labeled
        } else {
            &self.data.unlabeled
        };
        let scores = view.posteriors(pool.iter().map(|e| &e.x));
        (pseudo::cap_thresholds(&scores, &prevalence), scores)
    }

    /// Class-distribution-aware pseudo-labels for the whole unlabeled pool from
    /// the current parameters.
    fn mlc_refresh_pseudo(&mut self) {
        self.state.pool_pseudo = if self.data.unlabeled.is_empty() {
            Vec::new()
        } else {
            let (gamma, scores) = self.cap_gamma(self.state.model.live());
            pseudo::apply_cap(&scores, &gamma).iter().map(|r| to_f64(r)).collect()
        };
    }

    /// Prediction thresholds, fit on the scores of the model that predicts.
    fn calibrate(&mut self) {
        if self.cfg.mode.is_multi_label() {
            let (gamma, _) = self.cap_gamma(self.state.model.shadow());
            self.state.model.cap_gamma = Some(gamma);
        }
    }

    fn mlc_step(&mut self, acc: &mut EpochAccum, grads: &mut Grads) -> Result<()> {
        let cfg = self.cfg.clone();
        let lab = self.sample(self.data.labeled.len(), cfg.batch_labeled);
        let unl = if cfg.lambda1 > 0.0 {
            self.sample(self.data.unlabeled.len(), cfg.batch_unlabeled)
        } else {
            Vec::new()
        };
        grads.zero();
        let (mut sup, mut unsup) = (0.0, 0.0);
        let bl = lab.len() as f64;
        for &i in &lab {
            let ex = &self.data.labeled[i];
            let t = Target {
                y: &ex.y,
                weight: 1.0 / bl,
                margin: cfg.m,
            };
            let (l, _) = accumulate(&self.state.model, &ex.x, Some(t), 0.0, grads, &mut self.state.counters)?;
            sup += l / bl;
        }
        let bu = unl.len().max(1) as f64;
        let u_margin = if cfg.unlabeled_margin { cfg.m } else { 0.0 };
        for &j in &unl {
            let y = &self.state.pool_pseudo[j];
            // An all-zero pseudo-label row has zero loss and zero gradient.
            if y.iter().all(|&v| v == 0.0) {
                continue;
            }
            let t = Target {
                y,
                weight: cfg.lambda1 / bu,
                margin: u_margin,
            };
            let (l, _) = accumulate(&self.state.model, &self.data.unlabeled[j].x, Some(t), 0.0, grads, &mut self.state.counters)?;
            unsup += l / bu;
        }
        let mut penalty = 0.0;
        if let Some(admm) = &self.state.admm {
            penalty = admm.penalty(&self.state.model.head.w);
            grads.w += admm.penalty_grad(&self.state.model.head.w);
        }
        let total = sup + cfg.lambda1 * unsup + penalty;
        if !total.is_finite() {
            return Err(Error::Numerical(format!(
                "epoch {} step {}: loss {total} (sup {sup}, unsup {unsup}, penalty {penalty})",
                self.state.epoch, self.state.steps
            )));
        }
        self.apply_update(grads)?;
        self.state.steps += 1;

        acc.steps += 1;
        acc.total += total;
        acc.sup += sup;
        acc.unsup += unsup;
        acc.penalty += penalty;
        for &i in &lab {
            acc.labeled.insert(i, ());
        }
        acc.offered += unl.len();
        for &j in &unl {
            let y = &self.state.pool_pseudo[j];
            if y.iter().any(|&v| v != 0.0) {
                acc.kept += 1;
                acc.unlabeled.insert(j, y.clone());
            }
        }
        Ok(())
    }

    /// One self-training epoch in the configured mode.
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        if !self.state.warmed_up {
            return Err(Error::Config("train_epoch called before warmup".into()));
        }
        let mut acc = EpochAccum::default();
        let mut grads = self.new_grads();
        let multi_label = self.cfg.mode.is_multi_label();
        if multi_label {
            self.mlc_refresh_pseudo();
        }
        for _ in 0..self.cfg.inner_loops {
            if multi_label {
                self.mlc_step(&mut acc, &mut grads)?;
            } else {
                self.mcc_step(&mut acc, &mut grads)?;
            }
        }
        let labeled: BTreeMap<usize, ()> = (0..self.data.labeled.len()).map(|i| (i, ())).collect();
        let unlabeled = std::mem::take(&mut acc.unlabeled);
        self.refresh_stats(&labeled, &unlabeled);

        let mut admm_residual = None;
        if let Some(admm) = self.state.admm.as_mut() {
            if (self.state.epoch + 1).is_multiple_of(self.cfg.admm_every) {
                admm_residual = Some(admm.step(&self.state.model.head.w)?);
            }
        }
        let w_rank = singular_values(&self.state.model.head.w)?
            .iter()
            .filter(|&&s| s > 1e-6)
            .count();

        self.calibrate();
        let (dev_micro_f1, dev_macro_f1) = if self.data.dev.is_empty() {
            (None, None)
        } else {
            let r = self.state.model.evaluate(&self.data.dev)?;
            (Some(r.micro_f1), Some(r.macro_f1))
        };
        let steps = acc.steps.max(1) as f64;
        let st = &self.state.model.stats;
        let report = EpochReport {
            epoch: self.state.epoch,
            total: acc.total / steps,
            sup: acc.sup / steps,
            unsup: acc.unsup / steps,
            entropy: acc.entropy / steps,
            penalty: acc.penalty / steps,
            kept_fraction: if acc.offered == 0 {
                0.0
            } else {
                acc.kept as f64 / acc.offered as f64
            },
            avg_dlav: stats::avg_dlav(&st.effective_var())?,
            mu: st.mu.clone(),
            var: st.var.clone(),
            admm_residual,
            w_rank,
            dev_micro_f1,
            dev_macro_f1,
        };
        self.state.epoch += 1;
        Ok(report)
    }

    /// Warm-up followed by `epochs` self-training epochs.
    pub fn fit(&mut self, observer: &mut dyn EpochObserver) -> Result<Vec<EpochReport>> {
        if !self.state.warmed_up {
            self.warmup()?;
        }
        let mut reports = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            let r = self.train_epoch()?;
            observer.after_epoch(self, &r)?;
            reports.push(r);
        }
        Ok(reports)
    }

    /// Pseudo-labels the whole unlabeled pool with the live parameters: argmax
    /// for multi-class, prevalence-matched thresholds for multi-label.
    pub fn pseudo_label_pool(&self) -> Vec<Vec<bool>> {
        let k = self.data.n_labels();
        let scores = self
            .state
            .model
            .live()
            .posteriors(self.data.unlabeled.iter().map(|e| &e.x));
        if self.cfg.mode.is_multi_label() {
            let ys: Vec<Vec<f64>> = self.data.labeled.iter().map(|e| e.y.clone()).collect();
            let gamma = pseudo::cap_thresholds(&scores, &pseudo::prevalence(&ys, k));
            pseudo::apply_cap(&scores, &gamma)
        } else {
            scores.iter().map(|p| one_hot_bool(pseudo::argmax(p), k)).collect()
        }
    }

    /// Label angle variances over labeled texts plus the unlabeled pool under the
    /// given unlabeled label assignment, with the live encoder and no averaging.
    pub fn pool_angle_variances(&self, unlabeled_y: &[Vec<bool>]) -> Vec<Option<f64>> {
        assert_eq!(unlabeled_y.len(), self.data.unlabeled.len());
        let view = self.state.model.live();
        let mut reprs = Vec::new();
        let mut ys = Vec::new();
        for ex in &self.data.labeled {
            if !ex.degenerate {
                reprs.push(view.represent(&ex.x).0);
                ys.push(ex.y.clone());
            }
        }
        for (ex, y) in self.data.unlabeled.iter().zip(unlabeled_y) {
            if !ex.degenerate {
                reprs.push(view.represent(&ex.x).0);
                ys.push(to_f64(y));
            }
        }
        stats::estimate(&reprs, &ys).var
    }
}

/// Convenience: build a trainer, run it to completion and return the model with its reports.
pub fn train(cfg: TrainConfig, data: &Dataset, observer: &mut dyn EpochObserver) -> Result<(Model, Vec<EpochReport>)> {
    let mut t = Trainer::new(cfg, data)?;
    let reports = t.fit(observer)?;
    Ok((t.state.model, reports))
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::{DEFAULT_HIDDEN, DEFAULT_REPR_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Multi-class, sharpened soft pseudo-labels with a ramped unlabeled weight.
    #[serde(rename = "mcc-s")]
    MccS,
    /// Multi-class, hard pseudo-labels under a self-adaptive confidence mask.
    #[serde(rename = "mcc-f")]
    MccF,
    /// Multi-label, class-distribution-aware thresholds plus the nuclear-norm term.
    #[serde(rename = "mlc")]
    Mlc,
}

impl Mode {
    pub fn is_multi_label(self) -> bool {
        matches!(self, Mode::Mlc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::MccS => "mcc-s",
            Mode::MccF => "mcc-f",
            Mode::Mlc => "mlc",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcc-s" => Ok(Mode::MccS),
            "mcc-f" => Ok(Mode::MccF),
            "mlc" => Ok(Mode::Mlc),
            other => Err(Error::Config(format!("unknown mode {other:?} (mcc-s, mcc-f, mlc)"))),
        }
    }
}

/// Every knob of a training run. Serialized verbatim into `config.json`;
/// unknown keys are rejected when reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub s: f64,
    pub m: f64,
    /// Weight of the unsupervised angular loss.
    pub lambda1: f64,
    /// Weight of the entropy term (multi-class).
    pub lambda2: f64,
    /// Weight of the nuclear norm on the label weights (multi-label).
    pub lambda3: f64,
    pub tau_penalty: f64,
    /// Sharpening temperature.
    pub temperature: f64,
    /// Moving-average weight of the previous epoch's statistics.
    pub gamma_ma: f64,
    pub ema_decay: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub epochs: usize,
    pub inner_loops: usize,
    pub warmup_epochs: usize,
    pub warmup_batch: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub hidden: usize,
    pub repr_dim: usize,
    pub min_df: usize,
    pub max_features: usize,
    /// Steps over which the unlabeled weight ramps from 0 to 1 (sharpening mode).
    pub ramp_steps: usize,
    pub threshold_momentum: f64,
    /// `false` pins the angle transform to the identity (plain margin loss).
    pub use_bdd: bool,
    /// Apply the margin `m` inside the loss on pseudo-labeled texts.
    pub unlabeled_margin: bool,
    /// Run the ADMM auxiliary/dual update every this many epochs.
    pub admm_every: usize,
}

impl TrainConfig {
    /// The published hyper-parameters for each mode, with desk-scale run length
    /// (20 epochs × 50 inner loops, 32-dimensional representations).
    pub fn published_defaults(mode: Mode) -> Self {
        let (s, m, lambda2, lambda3, gamma_ma) = match mode {
            Mode::MccS => (1.0, 0.01, 1.0, 0.0, 0.1),
            Mode::MccF => (20.0, 0.3, 0.001, 0.0, 0.1),
            Mode::Mlc => (20.0, 0.3, 0.0, 0.001, 0.001),
        };
        let epochs = 20;
        let inner_loops = 50;
        Self {
            mode,
            s,
            m,
            lambda1: 1.0,
            lambda2,
            lambda3,
            tau_penalty: 1.0,
            temperature: 0.5,
            gamma_ma,
            ema_decay: 0.999,
            batch_labeled: 4,
            batch_unlabeled: 8,
            epochs,
            inner_loops,
            warmup_epochs: 5,
            warmup_batch: 8,
            lr_encoder: 1e-5,
            lr_head: 1e-3,
            weight_decay: 0.01,
            seed: 1,
            hidden: DEFAULT_HIDDEN,
            repr_dim: DEFAULT_REPR_DIM,
            min_df: 1,
            max_features: 5000,
            ramp_steps: epochs * inner_loops / 4,
            threshold_momentum: 0.999,
            use_bdd: true,
            unlabeled_margin: true,
            admm_every: 1,
        }
    }

    /// Settings tuned for the small synthetic corpora: a randomly initialized
    /// encoder needs larger learning rates than a pretrained one, and a run
    /// of a few hundred steps needs a shorter EMA horizon.
    pub fn desk_preset(mode: Mode) -> Self {
        let mut c = Self::published_defaults(mode);
        c.lr_encoder = 1e-4;
        c.lr_head = 1e-2;
        c.ema_decay = 0.99;
        c.threshold_momentum = 0.99;
        c.warmup_epochs = 20;
        c.epochs = 10;
        match mode {
            Mode::MccS => {
                c.temperature = 0.3;
                c.lambda2 = 0.03;
            }
            Mode::MccF => {}
            Mode::Mlc => {
                c.s = 2.0;
                c.m = 0.1;
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("s", self.s),
            ("tau_penalty", self.tau_penalty),
            ("temperature", self.temperature),
            ("lr_encoder", self.lr_encoder),
            ("lr_head", self.lr_head),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("m", self.m),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.gamma_ma > 0.0 && self.gamma_ma <= 1.0) {
            return Err(Error::Config(format!("gamma_ma {} outside (0, 1]", self.gamma_ma)));
        }
        for (name, v) in [("ema_decay", self.ema_decay), ("threshold_momentum", self.threshold_momentum)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} {v} outside (0, 1)")));
            }
        }
        let counts = [
            ("batch_labeled", self.batch_labeled),
            ("batch_unlabeled", self.batch_unlabeled),
            ("inner_loops", self.inner_loops),
            ("warmup_batch", self.warmup_batch),
            ("hidden", self.hidden),
            ("repr_dim", self.repr_dim),
            ("max_features", self.max_features),
            ("admm_every", self.admm_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }
}

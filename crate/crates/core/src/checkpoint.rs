//! On-disk layout of a trained run.
//!
//! ```text
//! <dir>/config.json       training configuration
//! <dir>/model.bin         encoder, label weights and EMA shadow (binary, f64 LE)
//! <dir>/model_meta.json   mode, scale, margin, EMA decay, transform, thresholds
//! <dir>/stats.json        moving-average prototypes and angle moments
//! <dir>/admm.json         auxiliary weights and multiplier, or null
//! <dir>/features.json     vocabulary and idf weights
//! <dir>/labels.json       label names in column order
//! <dir>/metrics.csv       one row per epoch
//! ```
//!
//! `model.bin`: the 8-byte magic `BDDTXTM\0`, a `u32` format version, a `u32`
//! tensor count, then per tensor a `u32` name length, the UTF-8 name, a `u32`
//! rank, `u64` dimensions and the values in column-major order. Integers are
//! little-endian.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::angular::{AngularHead, BalancedTransform};
use crate::corpus::{FeatureSpace, LabelVocab};
use crate::encoder::{EmaShadow, EncoderParams};
use crate::error::{Error, Result};
use crate::regularizers::AdmmState;
use crate::stats::AngleStats;
use crate::trainer::{EpochReport, Mode, Model, TrainConfig};

pub const MODEL_MAGIC: &[u8; 8] = b"BDDTXTM\0";
pub const FORMAT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.bin";
pub const META_FILE: &str = "model_meta.json";
pub const STATS_FILE: &str = "stats.json";
pub const ADMM_FILE: &str = "admm.json";
pub const FEATURES_FILE: &str = "features.json";
pub const LABELS_FILE: &str = "labels.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// A named tensor: dimensions plus column-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn matrix(name: &str, m: &DMatrix<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![m.nrows(), m.ncols()],
            data: m.as_slice().to_vec(),
        }
    }

    fn vector(name: &str, v: &DVector<f64>) -> Self {
        Self {
            name: name.into(),
            dims: vec![v.len()],
            data: v.as_slice().to_vec(),
        }
    }
}

fn encoder_tensors(prefix: &str, e: &EncoderParams) -> [Tensor; 4] {
    [
        Tensor::matrix(&format!("{prefix}.w1"), &e.w1),
        Tensor::vector(&format!("{prefix}.b1"), &e.b1),
        Tensor::matrix(&format!("{prefix}.w2"), &e.w2),
        Tensor::vector(&format!("{prefix}.b2"), &e.b2),
    ]
}

pub fn model_tensors(model: &Model) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = encoder_tensors("encoder", &model.encoder).into();
    out.push(Tensor::matrix("head.w", &model.head.w));
    out.extend(encoder_tensors("ema.encoder", &model.ema.encoder));
    out.push(Tensor::matrix("ema.head_w", &model.ema.head_w));
    out
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("{MODEL_FILE} truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MODEL_MAGIC {
        return Err(Error::Checkpoint(format!("{MODEL_FILE} has the wrong magic bytes")));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{MODEL_FILE} format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(Tensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

struct TensorTable(Vec<Tensor>);

impl TensorTable {
    fn get(&self, name: &str, rank: usize) -> Result<&Tensor> {
        let t = self
            .0
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} missing from {MODEL_FILE}")))?;
        if t.dims.len() != rank {
            return Err(Error::Checkpoint(format!("tensor {name} has rank {}, expected {rank}", t.dims.len())));
        }
        Ok(t)
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let t = self.get(name, 2)?;
        Ok(DMatrix::from_column_slice(t.dims[0], t.dims[1], &t.data))
    }

    fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let t = self.get(name, 1)?;
        Ok(DVector::from_column_slice(&t.data))
    }

    fn encoder(&self, prefix: &str) -> Result<EncoderParams> {
        let e = EncoderParams {
            w1: self.matrix(&format!("{prefix}.w1"))?,
            b1: self.vector(&format!("{prefix}.b1"))?,
            w2: self.matrix(&format!("{prefix}.w2"))?,
            b2: self.vector(&format!("{prefix}.b2"))?,
        };
        if e.b1.len() != e.w1.ncols() || e.w2.nrows() != e.w1.ncols() || e.b2.len() != e.w2.ncols() {
            return Err(Error::Checkpoint(format!("{prefix} tensors have inconsistent shapes")));
        }
        Ok(e)
    }
}

/// Scalars and small vectors that complete `model.bin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub mode: Mode,
    pub s: f64,
    pub m: f64,
    pub ema_decay: f64,
    pub transform: BalancedTransform,
    pub cap_gamma: Option<Vec<f64>>,
}

impl ModelMeta {
    pub fn of(model: &Model) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            mode: model.mode,
            s: model.head.s,
            m: model.head.m,
            ema_decay: model.ema.decay(),
            transform: model.transform.clone(),
            cap_gamma: model.cap_gamma.clone(),
        }
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    encode_tensors(&model_tensors(model))
}

pub fn decode_model(bytes: &[u8], meta: &ModelMeta, stats: AngleStats) -> Result<Model> {
    let table = TensorTable(decode_tensors(bytes)?);
    let encoder = table.encoder("encoder")?;
    let w = table.matrix("head.w")?;
    let ema_encoder = table.encoder("ema.encoder")?;
    let ema_w = table.matrix("ema.head_w")?;
    let k = w.nrows();
    if w.ncols() != encoder.repr_dim() || ema_w.shape() != w.shape() || ema_encoder.w1.shape() != encoder.w1.shape() {
        return Err(Error::Checkpoint("label weights do not match the encoder".into()));
    }
    if meta.transform.len() != k || stats.n_labels() != k || meta.cap_gamma.as_ref().is_some_and(|g| g.len() != k) {
        return Err(Error::Checkpoint(format!("metadata does not match {k} labels")));
    }
    let ema = EmaShadow::new(&ema_encoder, &ema_w, meta.ema_decay)?;
    Ok(Model {
        mode: meta.mode,
        encoder,
        head: AngularHead { w, s: meta.s, m: meta.m },
        transform: meta.transform.clone(),
        stats,
        ema,
        cap_gamma: meta.cap_gamma.clone(),
    })
}

/// Everything needed to predict with, resume from, or audit a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub admm: Option<AdmmState>,
    pub features: FeatureSpace,
    pub labels: LabelVocab,
    pub epochs: Vec<EpochReport>,
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let bytes = read(dir, name)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("checkpoint parts are serializable")
}

pub fn metrics_csv(reports: &[EpochReport]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut out = String::from(
        "epoch,total,sup,unsup,entropy,penalty,kept_fraction,avg_dlav,admm_residual,w_rank,dev_micro_f1,dev_macro_f1\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.total,
            r.sup,
            r.unsup,
            r.entropy,
            r.penalty,
            r.kept_fraction,
            r.avg_dlav,
            opt(r.admm_residual),
            r.w_rank,
            opt(r.dev_micro_f1),
            opt(r.dev_macro_f1)
        );
    }
    out
}

impl Checkpoint {
    /// Writes every file, creating `dir` if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(dir, CONFIG_FILE, self.config.to_json())?;
        write(dir, MODEL_FILE, encode_model(&self.model))?;
        write(dir, META_FILE, to_json(&ModelMeta::of(&self.model)))?;
        write(dir, STATS_FILE, to_json(&self.model.stats))?;
        write(dir, ADMM_FILE, to_json(&self.admm))?;
        write(dir, FEATURES_FILE, to_json(&self.features))?;
        write(dir, LABELS_FILE, to_json(&self.labels.names()))?;
        write(dir, METRICS_FILE, metrics_csv(&self.epochs))?;
        Ok(())
    }

    /// Reads a checkpoint back. Epoch reports are not restored from `metrics.csv`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let config_text = String::from_utf8(read(dir, CONFIG_FILE)?)
            .map_err(|_| Error::Checkpoint(format!("{CONFIG_FILE} is not UTF-8")))?;
        let config = TrainConfig::from_json(&config_text)?;
        let meta: ModelMeta = read_json(dir, META_FILE)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{META_FILE} format version {}, expected {FORMAT_VERSION}",
                meta.format_version
            )));
        }
        let stats: AngleStats = read_json(dir, STATS_FILE)?;
        let model = decode_model(&read(dir, MODEL_FILE)?, &meta, stats)?;
        let admm: Option<AdmmState> = read_json(dir, ADMM_FILE)?;
        let features: FeatureSpace = read_json(dir, FEATURES_FILE)?;
        let names: Vec<String> = read_json(dir, LABELS_FILE)?;
        let labels = LabelVocab::new(names)?;
        if features.dim() != model.encoder.input_dim() {
            return Err(Error::Checkpoint(format!(
                "feature space has {} columns but the encoder expects {}",
                features.dim(),
                model.encoder.input_dim()
            )));
        }
        if labels.len() != model.head.w.nrows() {
            return Err(Error::Checkpoint(format!(
                "{} label names for {} label weights",
                labels.len(),
                model.head.w.nrows()
            )));
        }
        Ok(Self {
            config,
            model,
            admm,
            features,
            labels,
            epochs: Vec::new(),
        })
    }

    pub fn files(dir: impl AsRef<Path>) -> Vec<PathBuf> {
        [
            CONFIG_FILE,
            MODEL_FILE,
            META_FILE,
            STATS_FILE,
            ADMM_FILE,
            FEATURES_FILE,
            LABELS_FILE,
            METRICS_FILE,
        ]
        .iter()
        .map(|f| dir.as_ref().join(f))
        .collect()
    }
}

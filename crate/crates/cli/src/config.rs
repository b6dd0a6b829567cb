use std::fs;
use std::path::{Path, PathBuf};

use bddtext::trainer::{Mode, TrainConfig};
use clap::{Args, ValueEnum};
use serde_json::{Map, Value};

use crate::error::{usage, CliResult};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    /// Tuned for small synthetic corpora on a CPU.
    Desk,
    /// The published hyperparameters.
    Published,
}

/// Configuration layers, lowest precedence first: preset, config file, flags.
#[derive(Args, Clone, Debug)]
pub struct ConfigArgs {
    #[arg(long)]
    pub mode: Option<Mode>,
    /// JSON object whose keys are TrainConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: Preset,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Pin the angle transform to the identity.
    #[arg(long)]
    pub no_bdd: bool,
}

fn read_object(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(usage(format!("config {}: expected a JSON object", path.display()))),
        Err(e) => Err(usage(format!("config {}: {e}", path.display()))),
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let file = self.config.as_deref().map(read_object).transpose()?.unwrap_or_default();
        let mode = match (self.mode, file.get("mode")) {
            (Some(m), _) => m,
            (None, Some(v)) => serde_json::from_value(v.clone()).map_err(|e| usage(format!("config mode: {e}")))?,
            (None, None) => return Err(usage("--mode is required when the config file does not set it")),
        };
        let base = match self.preset {
            Preset::Desk => TrainConfig::desk_preset(mode),
            Preset::Published => TrainConfig::published_defaults(mode),
        };
        let Value::Object(mut merged) = serde_json::to_value(&base).expect("config is serializable") else {
            unreachable!("TrainConfig serializes to an object")
        };
        for (key, value) in file {
            if !merged.contains_key(&key) {
                return Err(usage(format!("config: unknown key {key:?}")));
            }
            merged.insert(key, value);
        }
        let mut cfg: TrainConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| usage(format!("config: {e}")))?;
        cfg.mode = mode;
        if let Some(v) = self.lambda1 {
            cfg.lambda1 = v;
        }
        if let Some(v) = self.lambda2 {
            cfg.lambda2 = v;
        }
        if let Some(v) = self.lambda3 {
            cfg.lambda3 = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.warmup_epochs {
            cfg.warmup_epochs = v;
        }
        if self.no_bdd {
            cfg.use_bdd = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

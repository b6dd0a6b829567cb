use std::fs;
use std::path::{Path, PathBuf};

use bddtext::corpus::SynthSpec;
use bddtext::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{missing, usage, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("BDDTEXT_GIT_DESCRIBE"))
}

/// Input files of a training-style command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub labeled: PathBuf,
    pub unlabeled: Option<PathBuf>,
    pub dev: Option<PathBuf>,
}

/// What was run, with every input it read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Synth { spec: SynthSpec },
    Train { data: DataPaths },
    Evaluate { checkpoint: PathBuf, data: PathBuf },
    Ablate { data: DataPaths },
    Diagnose { data: DataPaths, truth: PathBuf },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth { .. } => "synth",
            Invocation::Train { .. } => "train",
            Invocation::Evaluate { .. } => "evaluate",
            Invocation::Ablate { .. } => "ablate",
            Invocation::Diagnose { .. } => "diagnose",
        }
    }
}

/// Written into the output directory before any work starts. Replaying it
/// reruns the command with the recorded resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub invocation: Invocation,
    pub config_path: Option<PathBuf>,
    pub config: Option<TrainConfig>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub version: String,
}

impl RunManifest {
    pub fn write(&self) -> CliResult<()> {
        fs::create_dir_all(&self.out_dir)
            .map_err(|e| usage(format!("cannot create {}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest is serializable");
        fs::write(&path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}

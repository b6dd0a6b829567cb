use std::path::{Component, Path};

use bddtext::corpus::{load_jsonl, Document};

use crate::error::{missing, usage, CliResult};
use crate::manifest::DataPaths;

/// Directory name reserved for hidden ground truth.
pub const ORACLE_DIR: &str = "oracle";

fn in_oracle_dir(path: &Path) -> bool {
    path.components().any(|c| c == Component::Normal(ORACLE_DIR.as_ref()))
}

fn read_docs(path: &Path) -> CliResult<Vec<Document>> {
    if !path.is_file() {
        return Err(usage(format!("dataset file {} does not exist", path.display())));
    }
    Ok(load_jsonl(path)?.0)
}

/// Reads a training or evaluation split, refusing anything under `oracle/`.
pub fn load_split(path: &Path) -> CliResult<Vec<Document>> {
    if in_oracle_dir(path) {
        return Err(usage(format!(
            "{} is inside an {ORACLE_DIR}/ directory; only diagnose may read ground truth",
            path.display()
        )));
    }
    read_docs(path)
}

pub fn load_truth(path: &Path) -> CliResult<Vec<Document>> {
    if !path.is_file() {
        return Err(missing(format!("ground-truth file {} does not exist", path.display())));
    }
    Ok(load_jsonl(path)?.0)
}

pub struct Splits {
    pub labeled: Vec<Document>,
    pub unlabeled: Vec<Document>,
    pub dev: Vec<Document>,
}

impl Splits {
    pub fn load(paths: &DataPaths) -> CliResult<Self> {
        let optional = |p: &Option<std::path::PathBuf>| p.as_deref().map(load_split).transpose().map(Option::unwrap_or_default);
        Ok(Self {
            labeled: load_split(&paths.labeled)?,
            unlabeled: optional(&paths.unlabeled)?,
            dev: optional(&paths.dev)?,
        })
    }
}

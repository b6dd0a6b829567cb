//! Documents, label vocabularies, JSONL ingestion and tf-idf features.

mod features;
mod synth;

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{tokenize, FeatureSpace, Featurized, SparseVec};
pub use synth::{synth_corpus, SynthCorpus, SynthSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    /// Empty for unlabeled documents.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, labels: Vec<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            labels,
        }
    }

    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty()
    }
}

/// Ordered label names. Column `k` of every label matrix refers to `names[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "label vocabulary needs at least 2 labels, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Sorted union of the label names used by `docs`.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Result<Self> {
        Self::new(collect_label_names(docs))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Multi-hot encoding of `labels`; unknown names are an error.
    pub fn encode(&self, labels: &[String]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.len()];
        for l in labels {
            let k = self
                .index_of(l)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown label {l:?}")))?;
            y[k] = 1.0;
        }
        Ok(y)
    }
}

fn collect_label_names<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Vec<String> {
    let set: BTreeSet<&str> = docs
        .into_iter()
        .flat_map(|d| d.labels.iter().map(String::as_str))
        .collect();
    set.into_iter().map(str::to_owned).collect()
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: Option<String>,
    text: String,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

/// Parses JSONL records. Blank lines are skipped; line numbers are 1-based.
/// Returns the documents in order plus the sorted label names seen.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<(Vec<Document>, Vec<String>)> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        docs.push(Document {
            id: rec.id.unwrap_or_else(|| format!("doc{line_no}")),
            text: rec.text,
            labels: rec.labels.unwrap_or_default(),
        });
    }
    let mut ids = HashSet::new();
    for d in &docs {
        if !ids.insert(d.id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate document id {:?}", d.id)));
        }
    }
    let names = collect_label_names(&docs);
    Ok((docs, names))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<(Vec<Document>, Vec<String>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file))
}

pub fn write_jsonl<W: Write>(mut writer: W, docs: &[Document]) -> std::io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(BufWriter::new(file), docs).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_dev: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, corpus_size: usize, n_labels: usize, multi_class: bool) -> Result<()> {
        let total = self.n_labeled + self.n_unlabeled + self.n_dev;
        if total > corpus_size {
            return Err(Error::InvalidArgument(format!(
                "split needs {total} documents but corpus has {corpus_size}"
            )));
        }
        if multi_class && self.n_labeled < n_labels {
            return Err(Error::InvalidArgument(format!(
                "n_labeled={} cannot cover all {n_labels} classes",
                self.n_labeled
            )));
        }
        Ok(())
    }
}

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Sparse vector with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let mut out = Self::zeros(dense.len());
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            d[i] = v;
        }
        d
    }
}

/// A featurized document. `degenerate` is set when no token is in the vocabulary,
/// in which case `vec` is the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurized {
    pub vec: SparseVec,
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct FeatureSpaceRepr {
    tokens: Vec<String>,
    idf: Vec<f64>,
}

/// Token vocabulary with smoothed idf weights. Columns are in lexical token order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureSpaceRepr", into = "FeatureSpaceRepr")]
pub struct FeatureSpace {
    tokens: Vec<String>,
    token_index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TryFrom<FeatureSpaceRepr> for FeatureSpace {
    type Error = String;

    fn try_from(r: FeatureSpaceRepr) -> std::result::Result<Self, String> {
        if r.tokens.len() != r.idf.len() {
            return Err("token and idf lengths differ".into());
        }
        if r.idf.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err("idf values must be positive".into());
        }
        let token_index: HashMap<String, usize> =
            r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if token_index.len() != r.tokens.len() {
            return Err("duplicate tokens".into());
        }
        Ok(Self {
            tokens: r.tokens,
            token_index,
            idf: r.idf,
        })
    }
}

impl From<FeatureSpace> for FeatureSpaceRepr {
    fn from(f: FeatureSpace) -> Self {
        Self {
            tokens: f.tokens,
            idf: f.idf,
        }
    }
}

impl FeatureSpace {
    /// Keeps tokens with document frequency `>= min_df`, then the `max_features`
    /// most frequent (ties broken lexically). `idf = ln((1+N)/(1+df)) + 1`.
    pub fn build(docs: &[Document], min_df: usize, max_features: usize) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::InvalidArgument("cannot build features from zero documents".into()));
        }
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let uniq: HashSet<String> = tokenize(&d.text).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = df.into_iter().filter(|(_, c)| *c >= min_df).collect();
        // BTreeMap iteration is lexical, so a stable sort on df keeps lexical tie order.
        kept.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        kept.truncate(max_features);
        if kept.is_empty() {
            return Err(Error::EmptyFeatureSpace);
        }
        kept.sort_by(|a, b| a.0.cmp(&b.0));

        let n = docs.len() as f64;
        let idf = kept
            .iter()
            .map(|(_, c)| ((1.0 + n) / (1.0 + *c as f64)).ln() + 1.0)
            .collect();
        let tokens: Vec<String> = kept.into_iter().map(|(t, _)| t).collect();
        let token_index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self {
            tokens,
            token_index,
            idf,
        })
    }

    pub fn dim(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn column(&self, token: &str) -> Option<usize> {
        self.token_index.get(token).copied()
    }

    pub fn featurize(&self, doc: &Document) -> Featurized {
        let toks = tokenize(&doc.text);
        self.featurize_tokens(toks.iter().map(String::as_str))
    }

    /// tf-idf weights of already-tokenized text, l2-normalized.
    pub fn featurize_tokens<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Featurized {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&col) = self.token_index.get(t) {
                *tf.entry(col).or_default() += 1.0;
            }
        }
        let mut vec = SparseVec::zeros(self.dim());
        for (col, count) in tf {
            vec.indices.push(col);
            vec.values.push(count * self.idf[col]);
        }
        let norm = vec.norm();
        if norm == 0.0 {
            return Featurized {
                vec: SparseVec::zeros(self.dim()),
                degenerate: true,
            };
        }
        vec.values.iter_mut().for_each(|v| *v /= norm);
        Featurized {
            vec,
            degenerate: false,
        }
    }
}

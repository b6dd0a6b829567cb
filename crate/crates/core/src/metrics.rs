//! Micro/Macro-F1 and the example-based ranking metrics (ranking loss, label
//! ranking average precision).
//!
//! Conventions:
//! - a class whose F1 denominator is zero scores 0;
//! - in ranking loss a tie between a relevant and an irrelevant label counts as
//!   a misordered pair;
//! - in average precision tied labels all take the worst (largest) rank;
//! - rows without both a relevant and an irrelevant label are excluded from the
//!   ranking metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Summary {
    pub micro: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn check_shapes<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} rows vs {} rows", a.len(), b.len())));
    }
    let k = a.first().map_or(0, Vec::len);
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != k || rb.len() != k {
            return Err(Error::Shape(format!("ragged label matrix, expected {k} columns")));
        }
    }
    Ok(k)
}

pub fn micro_macro_f1(y_true: &[Vec<bool>], y_pred: &[Vec<bool>]) -> Result<F1Summary> {
    let k = check_shapes(y_true, y_pred)?;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        for c in 0..k {
            match (t[c], p[c]) {
                (true, true) => tp[c] += 1,
                (false, true) => fp[c] += 1,
                (true, false) => fn_[c] += 1,
                (false, false) => {}
            }
        }
    }
    let per_class: Vec<ClassScores> = (0..k)
        .map(|c| {
            let (tp, fp, fn_) = (tp[c] as f64, fp[c] as f64, fn_[c] as f64);
            ClassScores {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
                support: (tp + fn_) as usize,
            }
        })
        .collect();
    let (stp, sfp, sfn) = (
        tp.iter().sum::<usize>() as f64,
        fp.iter().sum::<usize>() as f64,
        fn_.iter().sum::<usize>() as f64,
    );
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64
    };
    Ok(F1Summary {
        micro: ratio(2.0 * stp, 2.0 * stp + sfp + sfn),
        macro_f1,
        per_class,
    })
}

fn rankable(row: &[bool]) -> bool {
    row.iter().any(|&r| r) && row.iter().any(|&r| !r)
}

/// Number of rows the ranking metrics skip.
pub fn excluded_rows(y_true: &[Vec<bool>]) -> usize {
    y_true.iter().filter(|r| !rankable(r)).count()
}

fn row_mean(
    y_true: &[Vec<bool>],
    scores: &[Vec<f64>],
    per_row: impl Fn(&[bool], &[f64]) -> f64,
) -> Result<f64> {
    check_shapes(y_true, scores)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for (t, s) in y_true.iter().zip(scores) {
        if rankable(t) {
            total += per_row(t, s);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "no row has both a relevant and an irrelevant label".into(),
        ));
    }
    Ok(total / used as f64)
}

/// Fraction of (relevant, irrelevant) pairs with `score_rel <= score_irrel`.
pub fn ranking_loss(y_true: &[Vec<bool>], scores: &[Vec<f64>]) -> Result<f64> {
    row_mean(y_true, scores, |t, s| {
        let mut bad = 0usize;
        let mut pairs = 0usize;
        for (i, _) in t.iter().enumerate().filter(|(_, &r)| r) {
            for (j, _) in t.iter().enumerate().filter(|(_, &r)| !r) {
                pairs += 1;
                if s[i] <= s[j] {
                    bad += 1;
                }
            }
        }
        bad as f64 / pairs as f64
    })
}

/// Label ranking average precision with worst-rank ties.
pub fn average_precision(y_true: &[Vec<bool>], scores: &[Vec<f64>]) -> Result<f64> {
    row_mean(y_true, scores, |t, s| {
        let mut acc = 0.0;
        let mut n_rel = 0usize;
        for (l, _) in t.iter().enumerate().filter(|(_, &r)| r) {
            let rank = s.iter().filter(|&&x| x >= s[l]).count();
            let rel_above = t.iter().zip(s).filter(|(&r, &x)| r && x >= s[l]).count();
            acc += rel_above as f64 / rank as f64;
            n_rel += 1;
        }
        acc / n_rel as f64
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// `None` when no row is rankable.
    pub ranking_loss: Option<f64>,
    pub average_precision: Option<f64>,
    pub ranking_rows_excluded: usize,
    pub per_class: Vec<ClassScores>,
}

impl EvalReport {
    pub fn compute(y_true: &[Vec<bool>], y_pred: &[Vec<bool>], scores: &[Vec<f64>]) -> Result<Self> {
        let f1 = micro_macro_f1(y_true, y_pred)?;
        let optional = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            micro_f1: f1.micro,
            macro_f1: f1.macro_f1,
            ranking_loss: optional(ranking_loss(y_true, scores))?,
            average_precision: optional(average_precision(y_true, scores))?,
            ranking_rows_excluded: excluded_rows(y_true),
            per_class: f1.per_class,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Summary row followed by one row per class.
    pub fn to_csv(&self, label_names: &[String]) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut out = String::from("scope,micro_f1,macro_f1,ranking_loss,average_precision,precision,recall,f1,support\n");
        let _ = writeln!(
            out,
            "all,{},{},{},{},,,,",
            self.micro_f1,
            self.macro_f1,
            opt(self.ranking_loss),
            opt(self.average_precision)
        );
        for (i, c) in self.per_class.iter().enumerate() {
            let name = label_names.get(i).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(out, "{name},,,,,{},{},{},{}", c.precision, c.recall, c.f1, c.support);
        }
        out
    }
}

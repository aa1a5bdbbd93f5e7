//! Ranking metrics (ROC-AUC, PR-AUC) and confusion-matrix metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_flags(flags: &[u8], labels: &[u8]) -> Result<Self> {
        if flags.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "confusion",
                left: vec![flags.len()],
                right: vec![labels.len()],
            });
        }
        let mut c = Confusion::default();
        for (&f, &l) in flags.iter().zip(labels) {
            match (f != 0, l != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Threshold-dependent part of a [`MetricBlock`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kappa: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub roc_auc: f64,
    pub pr_auc: f64,
    #[serde(flatten)]
    pub classification: Classification,
}

impl MetricBlock {
    pub fn compute(scores: &[f64], flags: &[u8], labels: &[u8]) -> Result<Self> {
        Ok(Self {
            roc_auc: roc_auc(scores, labels)?,
            pr_auc: pr_auc(scores, labels)?,
            classification: classification_block(flags, labels)?,
        })
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_block(flags: &[u8], labels: &[u8]) -> Result<Classification> {
    let confusion = Confusion::from_flags(flags, labels)?;
    let Confusion { tp, fp, fn_, tn } = confusion;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let n = confusion.total() as f64;
    let kappa = if n == 0.0 {
        0.0
    } else {
        let p_o = (tp + tn) as f64 / n;
        let p_e = ((tp + fp) as f64 * (tp + fn_) as f64 + (fn_ + tn) as f64 * (fp + tn) as f64) / (n * n);
        if p_e == 1.0 {
            0.0
        } else {
            (p_o - p_e) / (1.0 - p_e)
        }
    };
    Ok(Classification {
        precision,
        recall,
        f1,
        kappa,
        confusion,
    })
}

/// Cumulative (tp, fp) after each group of tied scores, in descending order.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "ranking metric",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {bad}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        groups.push((tp, fp));
    }
    Ok((groups, tp, fp))
}

/// Trapezoidal area under the ROC curve; equals the Mann–Whitney statistic
/// with half credit for tied pairs.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (groups, p, n) = tie_groups(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("labels hold a single class"));
    }
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for (tp, fp) in groups {
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (2.0 * p as f64 * n as f64))
}

/// Step-wise `Σ (R_k − R_{k−1})·P_k` over distinct thresholds, high to low.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (groups, p, _) = tie_groups(scores, labels)?;
    if p == 0 {
        return Err(Error::UndefinedMetric("no positive labels"));
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in groups {
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

//! Reconstruction-error scoring and percentile thresholding.

use std::path::Path;

use serde::Serialize;

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::metrics::MetricBlock;
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::vae::{self, ModelParams};

/// Per-row `Σ (x − x̂)²` of two `(b, d)` tensors.
pub fn squared_error<S: Scalar>(x: &Tensor<S>, xhat: &Tensor<S>) -> Result<Vec<f64>> {
    x.expect_same_shape(xhat, "score")?;
    let d = x.cols();
    if d == 0 {
        return Ok(vec![0.0; x.rows()]);
    }
    Ok(x.data()
        .chunks(d)
        .zip(xhat.data().chunks(d))
        .map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| (p - q).as_f64().powi(2)).sum())
        .collect())
}

/// Anomaly score of each window: squared error against the posterior-mean
/// reconstruction. `batch` must already be in the raw stream's normalisation.
pub fn score<S: Scalar>(params: &ModelParams<S>, batch: &WindowBatch<S>) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let x = batch.flat();
    let xhat = vae::reconstruct_mean(params, &x)?;
    squared_error(&x, &xhat)
}

/// The `q`-quantile of `scores`, interpolating linearly at index `(n−1)·q`.
pub fn threshold(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot threshold an empty score list"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("percentile {q} must be in (0, 1)")));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {bad}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn flag(scores: &[f64], eta: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > eta)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnomalyReport {
    pub offsets: Vec<usize>,
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub flags: Vec<u8>,
    pub labels: Vec<u8>,
    pub metrics: MetricBlock,
}

impl AnomalyReport {
    pub fn build(offsets: Vec<usize>, scores: Vec<f64>, labels: Vec<u8>, q: f64) -> Result<Self> {
        if scores.len() != labels.len() || offsets.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "anomaly report",
                left: vec![scores.len()],
                right: vec![labels.len()],
            });
        }
        let eta = threshold(&scores, q)?;
        let flags = flag(&scores, eta);
        let metrics = MetricBlock::compute(&scores, &flags, &labels)?;
        Ok(Self {
            offsets,
            scores,
            threshold: eta,
            flags,
            labels,
            metrics,
        })
    }

    /// Writes `offset,score,label,flag` rows.
    pub fn write_scores(&self, path: impl AsRef<Path>) -> Result<()> {
        write_scores(path, &self.offsets, &self.scores, &self.labels, Some(&self.flags))
    }
}

/// Score dump; without flags the column holds zeros.
pub fn write_scores(
    path: impl AsRef<Path>,
    offsets: &[usize],
    scores: &[f64],
    labels: &[u8],
    flags: Option<&[u8]>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["offset", "score", "label", "flag"])?;
    for i in 0..scores.len() {
        let f = flags.map_or(0, |f| f[i]);
        w.write_record([offsets[i].to_string(), format!("{:e}", scores[i]), labels[i].to_string(), f.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

//! Series containers, sliding windows and train/evaluation splits.

mod csv_io;
mod synth;

pub use csv_io::{load_csv, write_csv, ClassMap, CsvSchema};
pub use synth::{synth, AnomalyKind, SynthSpec};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// A multivariate series with point labels (`1` = anomaly).
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFrame<S> {
    /// `(T, c)` values, one row per timestamp.
    pub values: Tensor<S>,
    pub labels: Vec<u8>,
    pub timestamps: Option<Vec<String>>,
    pub feature_names: Vec<String>,
}

impl<S: Scalar> SeriesFrame<S> {
    pub fn new(values: Tensor<S>, labels: Vec<u8>, feature_names: Vec<String>) -> Result<Self> {
        if !values.is_matrix() || values.cols() == 0 {
            return Err(Error::invalid(format!("series values must be (T, c>=1), got {:?}", values.shape())));
        }
        if labels.len() != values.rows() {
            return Err(Error::ShapeMismatch {
                op: "series labels",
                left: vec![values.rows()],
                right: vec![labels.len()],
            });
        }
        if feature_names.len() != values.cols() {
            return Err(Error::ShapeMismatch {
                op: "series feature names",
                left: vec![values.cols()],
                right: vec![feature_names.len()],
            });
        }
        Ok(Self {
            values,
            labels,
            timestamps: None,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    /// Contiguous sub-series `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let idx: Vec<usize> = (start..end).collect();
        Self {
            values: self.values.select_rows(&idx),
            labels: self.labels[start..end].to_vec(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Splits into a training prefix and an evaluation suffix.
    ///
    /// The prefix holds `⌊fraction·T⌋` points; the suffix starts `gap` points
    /// later so no evaluation window touches training data.
    pub fn split(&self, fraction: f64, gap: usize) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
            return Err(Error::invalid(format!("train fraction {fraction} must be in (0, 1)")));
        }
        let cut = (fraction * self.len() as f64).floor() as usize;
        let eval_start = (cut + gap).min(self.len());
        Ok((self.slice(0, cut), self.slice(eval_start, self.len())))
    }
}

/// Windows of shape `(b, s, c)` with their labels and source offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch<S> {
    pub windows: Tensor<S>,
    pub labels: Vec<u8>,
    pub offsets: Vec<usize>,
}

impl<S: Scalar> WindowBatch<S> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.windows.shape().get(1).copied().unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.windows.shape().get(2).copied().unwrap_or(0)
    }

    /// Flattened `(b, s·c)` view fed to the encoder.
    pub fn flat(&self) -> Tensor<S> {
        let (b, d) = (self.len(), self.seq_len() * self.channels());
        self.windows.clone().reshape([b, d]).expect("window tensor is (b, s, c)")
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            windows: self.windows.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            offsets: indices.iter().map(|&i| self.offsets[i]).collect(),
        }
    }

    /// Consecutive batches of at most `size` windows in the given order.
    pub fn batches<'a>(&'a self, order: &'a [usize], size: usize) -> impl Iterator<Item = WindowBatch<S>> + 'a {
        order.chunks(size.max(1)).map(move |idx| self.select(idx))
    }
}

/// Sliding windows of length `s` at offsets `0, stride, 2·stride, …`.
///
/// A window is labelled anomalous when any of its points is.
pub fn window<S: Scalar>(series: &SeriesFrame<S>, s: usize, stride: usize) -> Result<WindowBatch<S>> {
    let t = series.len();
    if s == 0 || stride == 0 {
        return Err(Error::invalid(format!("window length {s} and stride {stride} must be >= 1")));
    }
    if s > t {
        return Err(Error::invalid(format!("window length {s} exceeds series length {t}")));
    }
    let c = series.channels();
    let count = (t - s) / stride + 1;
    let mut data = Vec::with_capacity(count * s * c);
    let mut labels = Vec::with_capacity(count);
    let mut offsets = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        data.extend_from_slice(&series.values.data()[start * c..(start + s) * c]);
        labels.push(series.labels[start..start + s].iter().copied().max().unwrap_or(0));
        offsets.push(start);
    }
    Ok(WindowBatch {
        windows: Tensor::new([count, s, c], data)?,
        labels,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: usize, anomalies: &[usize]) -> SeriesFrame<f64> {
        let values = Tensor::new([t, 1], (0..t).map(|i| i as f64).collect()).unwrap();
        let mut labels = vec![0; t];
        for &a in anomalies {
            labels[a] = 1;
        }
        SeriesFrame::new(values, labels, vec!["x".into()]).unwrap()
    }

    #[test]
    fn window_count_and_offsets() {
        let w = window(&frame(10, &[]), 4, 2).unwrap();
        assert_eq!(w.offsets, vec![0, 2, 4, 6]);
        assert_eq!(w.windows.shape(), &[4, 4, 1]);
        assert!(w.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn single_anomaly_coverage() {
        let w = window(&frame(10, &[5]), 4, 1).unwrap();
        let flagged: Vec<usize> = w.offsets.iter().zip(&w.labels).filter(|(_, &l)| l == 1).map(|(&o, _)| o).collect();
        assert_eq!(flagged, vec![2, 3, 4, 5]);
    }

    #[test]
    fn windows_are_contiguous_slices() {
        let w = window(&frame(9, &[]), 3, 3).unwrap();
        assert_eq!(w.windows.row(2), &[6.0, 7.0, 8.0]);
    }

    #[test]
    fn too_long_window_errors() {
        assert!(window(&frame(3, &[]), 4, 1).is_err());
        assert!(window(&frame(3, &[]), 2, 0).is_err());
    }

    #[test]
    fn split_skips_gap() {
        let f = frame(100, &[]);
        let (train, eval) = f.split(0.7, 31).unwrap();
        assert_eq!(train.len(), 70);
        assert_eq!(eval.len(), 0);
        let (_, eval) = f.split(0.7, 5).unwrap();
        assert_eq!(eval.values.data()[0], 75.0);
    }
}

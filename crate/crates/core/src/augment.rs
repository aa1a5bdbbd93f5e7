//! Weak augmentations: per-channel normalisations applied to windows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::Error;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Standardize,
    MinMax,
    Identity,
}

/// Which samples the normalisation statistics are taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    /// Each window, per channel, over its time axis.
    #[default]
    PerWindow,
    /// All windows of the batch being transformed, pooled per channel.
    PerSeries,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub kind: AugmentKind,
    /// Floor on the scale (σ or max−min) that guards constant channels.
    pub eps_norm: f64,
    pub scope: NormScope,
}

impl Augmentation {
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(kind: AugmentKind) -> Self {
        Self {
            kind,
            eps_norm: Self::DEFAULT_EPS,
            scope: NormScope::PerWindow,
        }
    }
}

/// Raw/augmented kind combinations, named raw-first: `ms` is MinMax on the
/// raw stream and Standardize on the augmented one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugPair {
    #[default]
    Mm,
    Ms,
    Sm,
    Ss,
    None,
}

impl AugPair {
    pub fn kinds(self) -> (AugmentKind, AugmentKind) {
        use AugmentKind::*;
        match self {
            AugPair::Mm => (MinMax, MinMax),
            AugPair::Ms => (MinMax, Standardize),
            AugPair::Sm => (Standardize, MinMax),
            AugPair::Ss => (Standardize, Standardize),
            AugPair::None => (Identity, Identity),
        }
    }
}

impl FromStr for AugPair {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mm" => Ok(AugPair::Mm),
            "ms" => Ok(AugPair::Ms),
            "sm" => Ok(AugPair::Sm),
            "ss" => Ok(AugPair::Ss),
            "none" => Ok(AugPair::None),
            other => Err(Error::Config(format!("unknown augmentation `{other}` (mm|ms|sm|ss|none)"))),
        }
    }
}

impl fmt::Display for AugPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AugPair::Mm => "mm",
            AugPair::Ms => "ms",
            AugPair::Sm => "sm",
            AugPair::Ss => "ss",
            AugPair::None => "none",
        };
        f.write_str(s)
    }
}

/// Column-wise statistics over a row-major `(rows, channels)` block.
fn channel_stats<S: Scalar>(data: &[S], channels: usize, kind: AugmentKind) -> Vec<(S, S)> {
    let rows = data.len() / channels;
    let n = S::from_usize_lossy(rows);
    (0..channels)
        .map(|ch| {
            let col = data.iter().skip(ch).step_by(channels).copied();
            match kind {
                AugmentKind::Standardize => {
                    let mean = col.clone().sum::<S>() / n;
                    let var = col.map(|x| (x - mean) * (x - mean)).sum::<S>() / n;
                    (mean, var.sqrt())
                }
                AugmentKind::MinMax => {
                    let (lo, hi) = col.fold((S::infinity(), S::neg_infinity()), |(lo, hi), x| {
                        (lo.min(x), hi.max(x))
                    });
                    (lo, hi - lo)
                }
                AugmentKind::Identity => (S::zero(), S::one()),
            }
        })
        .collect()
}

fn normalize_block<S: Scalar>(data: &mut [S], channels: usize, kind: AugmentKind, eps: S) {
    if kind == AugmentKind::Identity || data.is_empty() {
        return;
    }
    let stats = channel_stats(data, channels, kind);
    for (i, x) in data.iter_mut().enumerate() {
        let (shift, scale) = stats[i % channels];
        *x = (*x - shift) / scale.max(eps);
    }
}

/// `(x − μ) / max(σ, ε)` per channel of an `(s, c)` window, population σ.
pub fn standardize<S: Scalar>(window: &Tensor<S>, eps_norm: f64) -> Tensor<S> {
    let mut out = window.clone();
    normalize_block(out.data_mut(), window.cols().max(1), AugmentKind::Standardize, S::of(eps_norm));
    out
}

/// `(x − min) / max(max − min, ε)` per channel of an `(s, c)` window.
pub fn minmax<S: Scalar>(window: &Tensor<S>, eps_norm: f64) -> Tensor<S> {
    let mut out = window.clone();
    normalize_block(out.data_mut(), window.cols().max(1), AugmentKind::MinMax, S::of(eps_norm));
    out
}

/// Applies one augmentation to every window of a batch.
pub fn apply<S: Scalar>(batch: &WindowBatch<S>, aug: Augmentation) -> WindowBatch<S> {
    let mut out = batch.clone();
    let c = batch.channels();
    let eps = S::of(aug.eps_norm);
    match aug.scope {
        NormScope::PerWindow => {
            let stride = batch.seq_len() * c;
            if stride > 0 {
                for w in out.windows.data_mut().chunks_mut(stride) {
                    normalize_block(w, c, aug.kind, eps);
                }
            }
        }
        NormScope::PerSeries => normalize_block(out.windows.data_mut(), c, aug.kind, eps),
    }
    out
}

/// Builds the `(x_r', x_a)` streams: raw windows under `raw`, augmented under `aug`.
pub fn make_pair<S: Scalar>(
    batch: &WindowBatch<S>,
    raw: Augmentation,
    aug: Augmentation,
) -> (WindowBatch<S>, WindowBatch<S>) {
    (apply(batch, raw), apply(batch, aug))
}

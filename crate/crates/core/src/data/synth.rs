//! Seeded synthetic series: per-channel sinusoids plus Gaussian noise, with
//! injected anomalies.

use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};
use crate::numerics::{streams, Rng, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// One point of one channel offset by `magnitude·σ_n`.
    Spike,
    /// One channel offset by `±magnitude·σ_n` for a drawn duration.
    LevelShift,
    /// One channel reads zero for a drawn duration.
    Dropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub len: usize,
    pub channels: usize,
    /// Sine period per channel, in samples; cycled if shorter than `channels`.
    pub periods: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub noise_sigma: f64,
    pub kinds: Vec<AnomalyKind>,
    /// Fraction of points that are anomalous, in `[0, 0.5)`.
    pub contamination: f64,
    /// Anomaly size in units of `noise_sigma`.
    pub magnitude: f64,
    /// Inclusive duration range for level shifts and dropouts.
    pub duration: (usize, usize),
    /// No anomaly starts within this many points of either end.
    pub edge_margin: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            len: 2000,
            channels: 2,
            periods: vec![40.0, 64.0],
            amplitudes: vec![1.0, 0.8],
            noise_sigma: 0.05,
            kinds: vec![AnomalyKind::Spike],
            contamination: 0.02,
            magnitude: 5.0,
            duration: (5, 20),
            edge_margin: 16,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.len == 0 || self.channels == 0 {
            return Err(Error::invalid("synthetic series needs len >= 1 and channels >= 1"));
        }
        if !(0.0..0.5).contains(&self.contamination) {
            return Err(Error::invalid(format!("contamination {} must be in [0, 0.5)", self.contamination)));
        }
        if self.periods.is_empty() || self.amplitudes.is_empty() {
            return Err(Error::invalid("periods and amplitudes must be nonempty"));
        }
        if self.periods.iter().any(|&p| p <= 0.0) || self.noise_sigma < 0.0 {
            return Err(Error::invalid("periods must be positive and noise_sigma non-negative"));
        }
        let (lo, hi) = self.duration;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("duration range {lo}..={hi} is empty")));
        }
        Ok(())
    }

    /// Number of anomalous points the generator will place.
    pub fn anomaly_points(&self) -> usize {
        if self.kinds.is_empty() {
            return 0;
        }
        (self.contamination * self.len as f64).floor() as usize
    }
}

fn place(rng: &mut Rng, occupied: &mut [bool], dur: usize, margin: usize) -> Result<usize> {
    let t = occupied.len();
    if t < 2 * margin + dur {
        return Err(Error::invalid(format!("series of length {t} too short for anomalies")));
    }
    let hi = t - margin - dur + 1;
    for _ in 0..100_000 {
        let start = rng.below(margin, hi);
        // Keep a free point on either side so events never touch.
        let lo_check = start.saturating_sub(1);
        let hi_check = (start + dur + 1).min(t);
        if occupied[lo_check..hi_check].iter().all(|&o| !o) {
            occupied[start..start + dur].iter_mut().for_each(|o| *o = true);
            return Ok(start);
        }
    }
    Err(Error::invalid("could not place anomalies without overlap; lower contamination"))
}

/// Generates a labelled series; identical specs give identical frames.
pub fn synth<S: Scalar>(spec: &SynthSpec) -> Result<SeriesFrame<S>> {
    spec.validate()?;
    let (t, c) = (spec.len, spec.channels);
    let root = Rng::new(spec.seed).split(streams::SYNTH);
    let mut noise = root.split(streams::SYNTH);
    let mut events = root.split(streams::SYNTH + 100);

    let mut values = vec![0.0f64; t * c];
    for ch in 0..c {
        let period = spec.periods[ch % spec.periods.len()];
        let amp = spec.amplitudes[ch % spec.amplitudes.len()];
        let phase = events.uniform_range(0.0, std::f64::consts::TAU);
        for i in 0..t {
            let base = amp * (std::f64::consts::TAU * i as f64 / period + phase).sin();
            values[i * c + ch] = base;
        }
    }
    for v in values.iter_mut() {
        *v += spec.noise_sigma * noise.normal();
    }

    let mut labels = vec![0u8; t];
    let total = spec.anomaly_points();
    if total == 0 && !spec.kinds.is_empty() && spec.contamination > 0.0 {
        log::warn!(
            "contamination {} of {} points rounds to zero anomalies",
            spec.contamination,
            t
        );
    }
    let mut occupied = vec![false; t];
    let mut remaining = total;
    let delta = spec.magnitude * spec.noise_sigma;
    while remaining > 0 {
        let kind = spec.kinds[events.below(0, spec.kinds.len())];
        let dur = match kind {
            AnomalyKind::Spike => 1,
            _ => events.below(spec.duration.0, spec.duration.1 + 1).min(remaining),
        };
        let start = place(&mut events, &mut occupied, dur, spec.edge_margin)?;
        let ch = events.below(0, c);
        let sign = if events.uniform() < 0.5 { -1.0 } else { 1.0 };
        for i in start..start + dur {
            let v = &mut values[i * c + ch];
            match kind {
                AnomalyKind::Spike => *v += delta,
                AnomalyKind::LevelShift => *v += sign * delta,
                AnomalyKind::Dropout => *v = 0.0,
            }
            labels[i] = 1;
        }
        remaining -= dur;
    }

    let names = (0..c).map(|i| format!("x{i}")).collect();
    SeriesFrame::new(
        Tensor::new([t, c], values.into_iter().map(S::of).collect())?,
        labels,
        names,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_contamination_count() {
        let f: SeriesFrame<f64> = synth(&SynthSpec::default()).unwrap();
        assert_eq!(f.len(), 2000);
        assert_eq!(f.channels(), 2);
        assert_eq!(f.labels.iter().filter(|&&l| l == 1).count(), 40);
    }

    #[test]
    fn zero_contamination_is_clean() {
        let spec = SynthSpec {
            contamination: 0.0,
            ..SynthSpec::default()
        };
        let f: SeriesFrame<f64> = synth(&spec).unwrap();
        assert!(f.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec {
            seed: 9,
            kinds: vec![AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::Dropout],
            ..SynthSpec::default()
        };
        let a: SeriesFrame<f64> = synth(&spec).unwrap();
        let b: SeriesFrame<f64> = synth(&spec).unwrap();
        assert_eq!(a, b);
        let c: SeriesFrame<f64> = synth(&SynthSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mixed_kinds_hit_exact_count() {
        for seed in 0..5 {
            let spec = SynthSpec {
                seed,
                contamination: 0.05,
                kinds: vec![AnomalyKind::LevelShift, AnomalyKind::Dropout, AnomalyKind::Spike],
                ..SynthSpec::default()
            };
            let f: SeriesFrame<f64> = synth(&spec).unwrap();
            assert_eq!(f.labels.iter().filter(|&&l| l == 1).count(), 100);
            let margin = spec.edge_margin;
            assert!(f.labels[..margin].iter().chain(&f.labels[2000 - margin..]).all(|&l| l == 0));
        }
    }

    #[test]
    fn spikes_have_the_requested_size() {
        let clean = SynthSpec {
            contamination: 0.0,
            ..SynthSpec::default()
        };
        let dirty = SynthSpec::default();
        let a: SeriesFrame<f64> = synth(&clean).unwrap();
        let b: SeriesFrame<f64> = synth(&dirty).unwrap();
        let expected = dirty.magnitude * dirty.noise_sigma;
        for i in (0..2000).filter(|&i| b.labels[i] == 1) {
            let d: f64 = a.values.row(i).iter().zip(b.values.row(i)).map(|(x, y)| y - x).sum();
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_heavy_contamination() {
        let spec = SynthSpec {
            contamination: 0.5,
            ..SynthSpec::default()
        };
        assert!(synth::<f64>(&spec).is_err());
    }
}

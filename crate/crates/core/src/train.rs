//! Training loop, evaluation pipeline and one-factor-at-a-time sweeps.
//!
//! All randomness derives from `TrainConfig::seed` through fixed streams:
//! model init, discriminator init, batch shuffling and reparameterisation
//! noise each draw from their own split of the root generator.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{self, AugPair, Augmentation, NormScope};
use crate::data::{window, SeriesFrame, WindowBatch};
use crate::detect::{self, AnomalyReport};
use crate::error::{Error, Result};
use crate::metrics::MetricBlock;
use crate::numerics::{gaussian_sample, streams, AdamConfig, AdamState, Rng};
use crate::objective::{self, LossBreakdown, MiMode, ObjectiveConfig, StreamInputs};
use crate::scalar::Scalar;
use crate::ssl::{self, Discriminator, PseudoLabels};
use crate::vae::{ModelDims, ModelParams, ReconLossKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mi_mode: MiMode,
    pub recon: ReconLossKind,
    pub beta: f64,
    pub latent: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub stride: usize,
    /// Window stride on the evaluation split.
    pub eval_stride: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub tau: f64,
    pub mi_weight: f64,
    /// Linear layers per discriminator stack; 0 only when not adversarial.
    pub disc_layers: usize,
    pub disc_hidden: usize,
    pub disc_separate: bool,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
    pub aug: AugPair,
    pub norm_scope: NormScope,
    pub eps_norm: f64,
    pub seed: u64,
    pub percentile: f64,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mi_mode: MiMode::Contrast,
            recon: ReconLossKind::Mse,
            beta: 1e-3,
            latent: 16,
            hidden: 32,
            seq_len: 32,
            stride: 1,
            eval_stride: 1,
            batch: 64,
            lr: 1e-3,
            epochs: 50,
            tau: 0.1,
            mi_weight: 0.1,
            disc_layers: 3,
            disc_hidden: 32,
            disc_separate: false,
            disc_steps: 1,
            aug: AugPair::Mm,
            norm_scope: NormScope::PerWindow,
            eps_norm: Augmentation::DEFAULT_EPS,
            seed: 0,
            percentile: 0.99,
            train_fraction: 0.7,
        }
    }
}

/// Maps CLI spellings onto field names.
fn canonical_key(key: &str) -> String {
    let k = key.trim().replace('-', "_");
    match k.as_str() {
        "mi" => "mi_mode".into(),
        "zdim" | "z_dim" | "m" => "latent".into(),
        "h" => "hidden".into(),
        "seqlen" | "s" => "seq_len".into(),
        "b" | "batch_size" => "batch".into(),
        "q" => "percentile".into(),
        "lambda_mi" => "mi_weight".into(),
        _ => k,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent", self.latent),
            ("hidden", self.hidden),
            ("seq_len", self.seq_len),
            ("stride", self.stride),
            ("eval_stride", self.eval_stride),
            ("batch", self.batch),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) || !(self.tau > 0.0) || !(self.mi_weight >= 0.0) {
            return Err(Error::Config("lr and tau must be > 0; beta and mi_weight >= 0".into()));
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return Err(Error::Config(format!("percentile {} must be in (0, 1)", self.percentile)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} must be in (0, 1)", self.train_fraction)));
        }
        if self.mi_mode == MiMode::Adversarial && (self.disc_layers < 2 || self.disc_hidden == 0 || self.disc_steps == 0)
        {
            return Err(Error::Config(format!(
                "adversarial mode needs disc_layers >= 2, disc_hidden >= 1 and disc_steps >= 1 (got {} layers)",
                self.disc_layers
            )));
        }
        self.recon.validate()
    }

    /// Overrides one field from its textual value; `key` may be a field name
    /// or a CLI alias such as `zdim` or `seqlen`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let json = match key.as_str() {
            "recon" => serde_json::to_value(value.parse::<ReconLossKind>()?)?,
            "mi_mode" => serde_json::to_value(value.parse::<MiMode>()?)?,
            "aug" => serde_json::to_value(value.parse::<AugPair>()?)?,
            _ => serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string())),
        };
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("config serializes to an object");
        if !map.contains_key(&key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        map.insert(key.clone(), json);
        *self = serde_json::from_value(obj).map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))?;
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn dims(&self, channels: usize) -> ModelDims {
        ModelDims {
            input: self.seq_len * channels,
            hidden: self.hidden,
            latent: self.latent,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            beta: self.beta,
            recon: self.recon,
            mi_mode: self.mi_mode,
            tau: self.tau,
            mi_weight: self.mi_weight,
        }
    }

    /// `(raw, augmented)` normalisations.
    pub fn augmentations(&self) -> (Augmentation, Augmentation) {
        let (r, a) = self.aug.kinds();
        let mk = |kind| Augmentation {
            kind,
            eps_norm: self.eps_norm,
            scope: self.norm_scope,
        };
        (mk(r), mk(a))
    }

    /// Points skipped between the training prefix and evaluation suffix.
    pub fn split_gap(&self) -> usize {
        self.seq_len - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batches: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    /// Discriminator BCE after the epoch's last stage-two update.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disc_loss: Option<f64>,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Epoch losses only; timing is excluded.
    pub fn losses(&self) -> Vec<LossBreakdown> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for e in &self.epochs {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct Trained<S> {
    pub params: ModelParams<S>,
    pub disc: Option<Discriminator<S>>,
    pub report: TrainReport,
}

/// Draws the per-stream noise for one batch, raw first.
fn stream_inputs<S: Scalar>(
    batch: &WindowBatch<S>,
    cfg: &TrainConfig,
    noise: &mut Rng,
) -> StreamInputs<S> {
    let (raw_aug, aug_aug) = cfg.augmentations();
    let (raw, aug) = augment::make_pair(batch, raw_aug, aug_aug);
    let b = batch.len();
    StreamInputs {
        x_raw: raw.flat(),
        x_aug: aug.flat(),
        eps_raw: gaussian_sample(noise, [b, cfg.latent]),
        eps_aug: gaussian_sample(noise, [b, cfg.latent]),
    }
}

/// Trains on every window of `series`.
pub fn train<S: Scalar>(cfg: &TrainConfig, series: &SeriesFrame<S>) -> Result<Trained<S>> {
    cfg.validate()?;
    if series.len() < cfg.seq_len {
        return Err(Error::invalid(format!(
            "training series has {} points, fewer than one window of {}",
            series.len(),
            cfg.seq_len
        )));
    }
    let windows = window(series, cfg.seq_len, cfg.stride)?;
    let dims = cfg.dims(series.channels());
    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::init(dims, cfg.recon.output(), &mut root.split(streams::INIT));
    let mut disc = match cfg.mi_mode {
        MiMode::Adversarial => Some(Discriminator::new(
            cfg.latent,
            cfg.disc_hidden,
            cfg.disc_layers,
            cfg.disc_separate,
            &mut root.split(streams::DISC_INIT),
        )?),
        _ => None,
    };
    let mut shuffle = root.split(streams::SHUFFLE);
    let mut noise = root.split(streams::NOISE);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut gen_opt = AdamState::new(adam, params.tensors());
    let mut disc_opt = disc.as_ref().map(|d| AdamState::new(adam, d.tensors()));
    let obj = cfg.objective();
    let labels = PseudoLabels::default();

    let start = Instant::now();
    let mut report = TrainReport {
        seed: cfg.seed,
        ..TrainReport::default()
    };
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..cfg.epochs {
        shuffle.shuffle(&mut order);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        let mut disc_loss = None;
        for batch in windows.batches(&order, cfg.batch) {
            let inputs = stream_inputs(&batch, cfg, &mut noise);
            let loss = match (&mut disc, &mut disc_opt) {
                (Some(d), Some(dopt)) => {
                    let b = ssl::two_stage_schedule(
                        &inputs,
                        &mut params,
                        d,
                        &mut gen_opt,
                        dopt,
                        &obj,
                        labels,
                        cfg.disc_steps,
                    )?;
                    disc_loss = Some(b.1);
                    b.0
                }
                _ => objective::generator_step(&inputs, &mut params, None, &mut gen_opt, &obj)?.breakdown,
            };
            sum.accumulate(&loss);
            batches += 1;
        }
        let mean = sum.scaled(1.0 / batches as f64);
        log::debug!("epoch {epoch}: total {:.6}", mean.total);
        report.epochs.push(EpochRecord {
            epoch,
            batches,
            loss: mean,
            disc_loss,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(Trained { params, disc, report })
}

/// Windows `series` at the evaluation stride and applies the raw-stream
/// normalisation the model was trained on.
pub fn eval_windows<S: Scalar>(cfg: &TrainConfig, series: &SeriesFrame<S>) -> Result<WindowBatch<S>> {
    let w = window(series, cfg.seq_len, cfg.eval_stride)?;
    Ok(augment::apply(&w, cfg.augmentations().0))
}

pub fn evaluate<S: Scalar>(cfg: &TrainConfig, params: &ModelParams<S>, series: &SeriesFrame<S>) -> Result<AnomalyReport> {
    let w = eval_windows(cfg, series)?;
    let scores = detect::score(params, &w)?;
    AnomalyReport::build(w.offsets, scores, w.labels, cfg.percentile)
}

pub struct RunOutput<S> {
    pub trained: Trained<S>,
    pub report: AnomalyReport,
}

/// Splits, trains on the prefix and scores the suffix.
pub fn run<S: Scalar>(cfg: &TrainConfig, series: &SeriesFrame<S>) -> Result<RunOutput<S>> {
    cfg.validate()?;
    let (train_part, eval_part) = series.split(cfg.train_fraction, cfg.split_gap())?;
    let trained = train(cfg, &train_part)?;
    let report = evaluate(cfg, &trained.params, &eval_part)?;
    Ok(RunOutput { trained, report })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    #[serde(flatten)]
    pub metrics: MetricBlock,
}

/// Parses `key=v1,v2,…`.
pub fn parse_grid(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid `{spec}` must look like key=v1,v2")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("grid `{spec}` has no values")));
    }
    Ok((key.trim().to_string(), values))
}

/// Varies one parameter at a time around `base`; every run uses the base
/// seed. An empty grid yields one row for the base configuration.
pub fn sweep<S: Scalar>(base: &TrainConfig, grid: &[(String, Vec<String>)], series: &SeriesFrame<S>) -> Result<Vec<SweepRow>> {
    let mut settings = Vec::new();
    for (key, values) in grid {
        for v in values {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            cfg.validate()?;
            settings.push((canonical_key(key), v.clone(), cfg));
        }
    }
    if settings.is_empty() {
        settings.push(("default".into(), String::new(), base.clone()));
    }
    settings
        .into_par_iter()
        .map(|(parameter, value, cfg)| {
            let out = run(&cfg, series)?;
            Ok(SweepRow {
                parameter,
                value,
                metrics: out.report.metrics,
            })
        })
        .collect()
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "parameter", "value", "roc_auc", "pr_auc", "precision", "recall", "f1", "kappa", "tp", "fp", "fn", "tn",
    ])?;
    for r in rows {
        let m = &r.metrics;
        let c = &m.classification;
        w.write_record([
            r.parameter.clone(),
            r.value.clone(),
            m.roc_auc.to_string(),
            m.pr_auc.to_string(),
            c.precision.to_string(),
            c.recall.to_string(),
            c.f1.to_string(),
            c.kappa.to_string(),
            c.confusion.tp.to_string(),
            c.confusion.fp.to_string(),
            c.confusion.fn_.to_string(),
            c.confusion.tn.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

mod common;

use common::randn;
use wavae::checkpoint;
use wavae::data::{synth, SynthSpec};
use wavae::detect;
use wavae::numerics::{AdamConfig, AdamState, Rng, Tensor};
use wavae::objective::{self, MiMode, ObjectiveConfig, StreamInputs};
use wavae::ssl::{self, Discriminator, PseudoLabels, Role};
use wavae::train::{self, TrainConfig};
use wavae::vae::{ModelDims, ModelParams, OutputActivation, ReconLossKind};

fn disc_bce(d: &Discriminator<f64>, zr: &Tensor<f64>, za: &Tensor<f64>) -> f64 {
    let bce = |p: &[f64], y: f64| p.iter().map(|&p| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())).sum::<f64>() / p.len() as f64;
    let pr = d.predict(zr, Role::Raw).unwrap();
    let pa = d.predict(za, Role::Augmented).unwrap();
    0.5 * (bce(pr.data(), 1.0) + bce(pa.data(), 0.0))
}

#[test]
fn discriminator_separates_clusters() {
    let mut rng = Rng::new(5);
    let mut d = Discriminator::new(2, 8, 3, false, &mut rng).unwrap();
    let mut opt = AdamState::new(AdamConfig::with_lr(0.01), d.tensors());
    for _ in 0..400 {
        let zr = randn(&mut rng, &[32, 2], 1.0).map(|v| v + 3.0);
        let za = randn(&mut rng, &[32, 2], 1.0).map(|v| v - 3.0);
        ssl::discriminator_step(&zr, &za, &mut d, PseudoLabels::default(), &mut opt).unwrap();
    }
    let zr = randn(&mut rng, &[256, 2], 1.0).map(|v| v + 3.0);
    let za = randn(&mut rng, &[256, 2], 1.0).map(|v| v - 3.0);
    let loss = disc_bce(&d, &zr, &za);
    assert!(loss < 0.1, "held-out BCE {loss}");
}

#[test]
fn discriminator_cannot_split_identical_distributions() {
    let mut accs = Vec::new();
    for seed in 0..5 {
        let mut rng = Rng::new(100 + seed);
        let mut d = Discriminator::new(2, 8, 3, false, &mut rng).unwrap();
        let mut opt = AdamState::new(AdamConfig::with_lr(0.01), d.tensors());
        for _ in 0..200 {
            let zr = randn(&mut rng, &[32, 2], 1.0);
            let za = randn(&mut rng, &[32, 2], 1.0);
            ssl::discriminator_step(&zr, &za, &mut d, PseudoLabels::default(), &mut opt).unwrap();
        }
        let zr = randn(&mut rng, &[2000, 2], 1.0);
        let za = randn(&mut rng, &[2000, 2], 1.0);
        let hits = d.predict(&zr, Role::Raw).unwrap().data().iter().filter(|&&p| p > 0.5).count()
            + d.predict(&za, Role::Augmented).unwrap().data().iter().filter(|&&p| p <= 0.5).count();
        accs.push(hits as f64 / 4000.0);
    }
    let mean = accs.iter().sum::<f64>() / 5.0;
    assert!((mean - 0.5).abs() <= 0.05, "accuracy {mean} ({accs:?})");
}

#[test]
fn info_nce_bound_tracks_correlation() {
    let b = 128;
    let m = 4;
    let bound = |rho: f64| -> f64 {
        let mut total = 0.0;
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let zr = randn(&mut rng, &[b, m], 1.0);
            let n = randn(&mut rng, &[b, m], 1.0);
            let za = zr.zip_map(&n, "mix", |x, e| rho * x + (1.0 - rho * rho).sqrt() * e).unwrap();
            let nce: f64 = ssl::info_nce(&zr, &za, 1.0).unwrap();
            total += -nce + ((2 * b - 1) as f64).ln();
        }
        total / 5.0
    };
    let values: Vec<f64> = [0.0, 0.5, 0.9].map(bound).to_vec();
    assert!(values[0] < values[1] && values[1] < values[2], "{values:?}");
}

#[test]
fn identical_streams_share_elbo_bits() {
    let mut rng = Rng::new(8);
    let dims = ModelDims {
        input: 6,
        hidden: 4,
        latent: 3,
    };
    let params = ModelParams::init(dims, OutputActivation::Linear, &mut rng);
    let x = randn(&mut rng, &[5, 6], 1.0);
    let eps = randn(&mut rng, &[5, 3], 1.0);
    let inputs = StreamInputs {
        x_raw: x.clone(),
        x_aug: x,
        eps_raw: eps.clone(),
        eps_aug: eps,
    };
    let cfg = ObjectiveConfig {
        beta: 1e-3,
        recon: ReconLossKind::Mse,
        mi_mode: MiMode::Contrast,
        tau: 0.1,
        mi_weight: 0.1,
    };
    let b = objective::evaluate(&inputs, &params, None, &cfg).unwrap();
    assert_eq!(b.recon_raw.to_bits(), b.recon_aug.to_bits());
    assert_eq!(b.kl_raw.to_bits(), b.kl_aug.to_bits());
}

#[test]
fn generator_stage_leaves_discriminator_untouched() {
    let mut rng = Rng::new(9);
    let dims = ModelDims {
        input: 6,
        hidden: 4,
        latent: 3,
    };
    let mut params = ModelParams::init(dims, OutputActivation::Linear, &mut rng);
    let mut disc = Discriminator::new(3, 5, 2, true, &mut rng).unwrap();
    let inputs = StreamInputs {
        x_raw: randn(&mut rng, &[4, 6], 1.0),
        x_aug: randn(&mut rng, &[4, 6], 1.0),
        eps_raw: randn(&mut rng, &[4, 3], 1.0),
        eps_aug: randn(&mut rng, &[4, 3], 1.0),
    };
    let cfg = ObjectiveConfig {
        beta: 1e-3,
        recon: ReconLossKind::Mse,
        mi_mode: MiMode::Adversarial,
        tau: 0.1,
        mi_weight: 0.1,
    };
    let mut gen_opt = AdamState::new(AdamConfig::default(), params.tensors());
    let mut disc_opt = AdamState::new(AdamConfig::default(), disc.tensors());
    let disc_before = disc.clone();
    let params_before = params.clone();
    let out = objective::generator_step(&inputs, &mut params, Some(&disc), &mut gen_opt, &cfg).unwrap();
    assert_eq!(disc, disc_before);
    assert_ne!(params, params_before);

    let params_mid = params.clone();
    ssl::discriminator_step(&out.z_r, &out.z_a, &mut disc, PseudoLabels::default().swap(), &mut disc_opt).unwrap();
    assert_eq!(params, params_mid);
    assert_ne!(disc, disc_before);
}

#[test]
fn training_reduces_loss() {
    for seed in 0..5 {
        let series: wavae::SeriesFrame = synth(&SynthSpec {
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let t = train::train(&cfg, &series).unwrap();
        let e = &t.report.epochs;
        assert_eq!(e.len(), 50);
        assert!(e[49].loss.total < e[0].loss.total, "seed {seed}: {} -> {}", e[0].loss.total, e[49].loss.total);
    }
}

#[test]
fn adversarial_losses_stay_finite() {
    for seed in 0..5 {
        let series: wavae::SeriesFrame = synth(&SynthSpec {
            seed,
            len: 600,
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            seed,
            epochs: 5,
            mi_mode: MiMode::Adversarial,
            ..TrainConfig::default()
        };
        let t = train::train(&cfg, &series).unwrap();
        for e in &t.report.epochs {
            e.loss.check_finite().unwrap();
            assert!(e.disc_loss.is_some_and(f64::is_finite));
        }
    }
}

#[test]
fn loaded_checkpoint_scores_like_memory() {
    let series: wavae::SeriesFrame = synth(&SynthSpec {
        len: 500,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        mi_mode: MiMode::Adversarial,
        ..TrainConfig::default()
    };
    let t = train::train(&cfg, &series).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &t.params, t.disc.as_ref()).unwrap();
    let loaded: wavae::Checkpoint = checkpoint::load(&path).unwrap();
    loaded.check_dims(&cfg.dims(series.channels())).unwrap();
    assert_eq!(loaded.disc, t.disc);

    let w = train::eval_windows(&cfg, &series).unwrap();
    let a = detect::score(&t.params, &w).unwrap();
    let b = detect::score(&loaded.params, &w).unwrap();
    assert_eq!(a, b);

    let again = dir.path().join("again.ckpt");
    checkpoint::save(&again, &loaded.params, loaded.disc.as_ref()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn runs_on_single_precision() {
    let series: wavae::data::SeriesFrame<f32> = synth(&SynthSpec {
        len: 400,
        contamination: 0.05,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        seq_len: 16,
        ..TrainConfig::default()
    };
    let out = train::run(&cfg, &series).unwrap();
    assert!(out.trained.params.all_finite());
    assert!((0.0..=1.0).contains(&out.report.metrics.roc_auc));
}

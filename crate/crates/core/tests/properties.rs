mod common;

use std::rc::Rc;

use common::{grad_check, randn};
use proptest::prelude::*;
use wavae::augment::{self, AugmentKind, Augmentation};
use wavae::data::{window, SeriesFrame, WindowBatch};
use wavae::detect::{flag, threshold};
use wavae::metrics::{classification_block, pr_auc, roc_auc};
use wavae::numerics::{Graph, Rng, Tensor, Var};
use wavae::ssl::info_nce;
use wavae::vae::{kl_divergence, LatentGaussian};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(100)
}

fn shifted_away_from_zero(mut t: Tensor<f64>) -> Tensor<f64> {
    for x in t.data_mut() {
        if x.abs() < 1e-2 {
            *x += 0.1;
        }
    }
    t
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn unary_op_gradients(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (r, c) = (1 + rng.below(0, 4), 1 + rng.below(0, 4));
        let x = randn(&mut rng, &[r, c], 1.5);
        let pos = x.map(|v| v.abs() + 0.2);
        let kinked = shifted_away_from_zero(x.clone());
        let (lo, hi) = (-0.5, 0.7);
        let clamped = x.map(|v| if (v - lo).abs() < 1e-2 || (v - hi).abs() < 1e-2 { v + 0.05 } else { v });
        let cases: Vec<(&str, Tensor<f64>, Box<dyn Fn(&mut Graph<f64>, Var) -> Var>)> = vec![
            ("exp", x.clone(), Box::new(|g, v| g.exp(v))),
            ("log", pos, Box::new(|g, v| g.log(v))),
            ("tanh", x.clone(), Box::new(|g, v| g.tanh(v))),
            ("sigmoid", x.clone(), Box::new(|g, v| g.sigmoid(v))),
            ("log_sigmoid", x.clone(), Box::new(|g, v| g.log_sigmoid(v))),
            ("softplus", x.clone(), Box::new(|g, v| g.softplus(v))),
            ("square", x.clone(), Box::new(|g, v| g.square(v))),
            ("neg", x.clone(), Box::new(|g, v| g.neg(v))),
            ("scale", x.clone(), Box::new(|g, v| g.scale(v, -2.5))),
            ("add_scalar", x.clone(), Box::new(|g, v| g.add_scalar(v, 3.0))),
            ("relu", kinked.clone(), Box::new(|g, v| g.relu(v))),
            ("leaky_relu", kinked, Box::new(|g, v| g.leaky_relu(v, 0.2))),
            ("clamp", clamped, Box::new(move |g, v| g.clamp(v, lo, hi))),
            ("sum_rows", x.clone(), Box::new(|g, v| g.sum_rows(v))),
            ("transpose", x.clone(), Box::new(|g, v| g.transpose(v).unwrap())),
            ("lse_rows", x.clone(), Box::new(|g, v| g.log_sum_exp_rows(v, None).unwrap())),
        ];
        for (name, input, op) in cases {
            // A random linear readout makes the root scalar without symmetry.
            let w = randn(&mut rng, &[1, 64], 1.0);
            let res = grad_check(&[input], |g, v| {
                let y = op(g, v[0]);
                let shape = g.value(y).shape().to_vec();
                let n: usize = shape.iter().product();
                let wt = Tensor::new(shape, w.data()[..n].to_vec()).unwrap();
                let wv = g.constant(wt);
                let p = g.mul(y, wv).unwrap();
                g.sum(p)
            });
            prop_assert!(res.is_ok(), "{name}: {:?}", res);
        }
    }

    #[test]
    fn binary_op_gradients(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (n, k, m) = (1 + rng.below(0, 4), 1 + rng.below(0, 4), 1 + rng.below(0, 4));
        let a = randn(&mut rng, &[n, k], 1.0);
        let b = randn(&mut rng, &[k, m], 1.0);
        let a2 = randn(&mut rng, &[n, k], 1.0);
        let row = randn(&mut rng, &[1, k], 1.0);
        let mm = grad_check(&[a.clone(), b], |g, v| {
            let p = g.matmul(v[0], v[1]).unwrap();
            let t = g.tanh(p);
            g.sum(t)
        });
        prop_assert!(mm.is_ok(), "matmul: {:?}", mm);
        for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
            let r = grad_check(&[a.clone(), a2.clone()], |g, v| {
                let y = match op {
                    0 => g.add(v[0], v[1]).unwrap(),
                    1 => g.sub(v[0], v[1]).unwrap(),
                    _ => g.mul(v[0], v[1]).unwrap(),
                };
                let s = g.square(y);
                g.mean(s)
            });
            prop_assert!(r.is_ok(), "{name}: {:?}", r);
        }
        let ar = grad_check(&[a.clone(), row], |g, v| {
            let y = g.add_row(v[0], v[1]).unwrap();
            let e = g.exp(y);
            g.sum(e)
        });
        prop_assert!(ar.is_ok(), "add_row: {:?}", ar);
        let split = rng.below(0, k);
        let cat = grad_check(&[a.clone(), a2.clone()], |g, v| {
            let c = g.concat_cols(v[0], v[1]).unwrap();
            let s = g.slice_cols(c, split, k + 1).unwrap();
            let q = g.square(s);
            g.sum(q)
        });
        prop_assert!(cat.is_ok(), "concat/slice: {:?}", cat);
        let mask: Rc<[bool]> = (0..n * k).map(|i| i % k != 0 || k == 1).collect();
        let lse = grad_check(&[a], |g, v| {
            let l = g.log_sum_exp_rows(v[0], Some(mask.clone())).unwrap();
            g.sum(l)
        });
        prop_assert!(lse.is_ok(), "masked lse: {:?}", lse);
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (b, m) = (1 + rng.below(0, 5), 1 + rng.below(0, 6));
        let mu = randn(&mut rng, &[b, m], 2.0);
        let logvar = randn(&mut rng, &[b, m], 3.0);
        let post = LatentGaussian { mu: mu.clone(), logvar, z: mu, eps: Tensor::zeros([b, m]) };
        prop_assert!(kl_divergence(&post) >= 0.0);
    }

    #[test]
    fn minmax_range_and_affine_invariance(seed in any::<u64>(), slope in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = Rng::new(seed);
        let (s, c) = (2 + rng.below(0, 10), 1 + rng.below(0, 3));
        let x = randn(&mut rng, &[s, c], 1.0);
        let y = augment::minmax(&x, 1e-8);
        prop_assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let moved = augment::minmax(&x.map(|v| slope * v + shift), 1e-8);
        for (a, b) in y.data().iter().zip(moved.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_moments(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (s, c) = (2 + rng.below(0, 20), 1 + rng.below(0, 3));
        let x = randn(&mut rng, &[s, c], 3.0);
        let y = augment::standardize(&x, 1e-8);
        for ch in 0..c {
            let col: Vec<f64> = (0..s).map(|i| y.get(i, ch)).collect();
            let mean = col.iter().sum::<f64>() / s as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s as f64;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!((var - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn augmentation_keeps_shape_and_labels(seed in any::<u64>(), kind in 0usize..3) {
        let mut rng = Rng::new(seed);
        let (t, c, s) = (20 + rng.below(0, 30), 1 + rng.below(0, 3), 2 + rng.below(0, 8));
        let labels: Vec<u8> = (0..t).map(|_| u8::from(rng.uniform() < 0.1)).collect();
        let frame = SeriesFrame::new(randn(&mut rng, &[t, c], 1.0), labels, (0..c).map(|i| format!("x{i}")).collect()).unwrap();
        let w = window(&frame, s, 1 + rng.below(0, 3)).unwrap();
        let kind = [AugmentKind::Standardize, AugmentKind::MinMax, AugmentKind::Identity][kind];
        let out = augment::apply(&w, Augmentation::new(kind));
        prop_assert_eq!(out.windows.shape(), w.windows.shape());
        prop_assert_eq!(&out.labels, &w.labels);
        prop_assert_eq!(&out.offsets, &w.offsets);
        for (k, &o) in w.offsets.iter().enumerate() {
            let any = frame.labels[o..o + s].contains(&1);
            prop_assert_eq!(w.labels[k] == 1, any);
        }
    }

    #[test]
    fn info_nce_nonnegative_and_permutation_invariant(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (b, m) = (1 + rng.below(0, 8), 1 + rng.below(0, 5));
        let zr = randn(&mut rng, &[b, m], 1.0);
        let za = randn(&mut rng, &[b, m], 1.0);
        let tau = rng.uniform_range(0.05, 2.0);
        let base: f64 = info_nce(&zr, &za, tau).unwrap();
        prop_assert!(base.is_finite() && base >= 0.0);
        let mut perm: Vec<usize> = (0..b).collect();
        rng.shuffle(&mut perm);
        let permuted: f64 = info_nce(&zr.select_rows(&perm), &za.select_rows(&perm), tau).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-10 * base.abs().max(1.0));
    }

    #[test]
    fn ranking_metrics_invariant_under_increasing_maps(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n = 2 + rng.below(0, 150);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.3)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| (rng.normal() * 4.0).round() / 4.0).collect();
        let moved: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
        let roc = roc_auc(&scores, &labels).unwrap();
        prop_assert_eq!(roc, roc_auc(&moved, &labels).unwrap());
        prop_assert_eq!(pr_auc(&scores, &labels).unwrap(), pr_auc(&moved, &labels).unwrap());
        let inverted: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((roc_auc(&scores, &inverted).unwrap() - (1.0 - roc)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&roc));
    }

    #[test]
    fn thresholded_point_lies_on_roc_polyline(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let n = 2 + rng.below(0, 100);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.uniform() < 0.4)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| (rng.normal() * 3.0).round()).collect();
        let eta = scores[rng.below(0, n)];
        let c = classification_block(&flag(&scores, eta), &labels).unwrap().confusion;
        let (p, q) = ((c.tp + c.fn_) as f64, (c.fp + c.tn) as f64);
        let point = (c.fp as f64 / q, c.tp as f64 / p);
        // Vertices of the ROC polyline: one per distinct threshold.
        let mut vertices = vec![(0.0, 0.0)];
        let mut distinct = scores.clone();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        for t in distinct {
            let tp = scores.iter().zip(&labels).filter(|(&s, &l)| s >= t && l == 1).count() as f64;
            let fp = scores.iter().zip(&labels).filter(|(&s, &l)| s >= t && l == 0).count() as f64;
            vertices.push((fp / q, tp / p));
        }
        prop_assert!(vertices.contains(&point), "{point:?} not in {vertices:?}");
    }

    #[test]
    fn flag_fraction_bound_and_monotone_invariance(seed in any::<u64>(), q in 0.5f64..0.999) {
        let mut rng = Rng::new(seed);
        let n = 1 + rng.below(0, 300);
        let scores: Vec<f64> = (0..n).map(|i| i as f64 + rng.uniform() * 0.5).collect();
        let flags = flag(&scores, threshold(&scores, q).unwrap());
        let count = flags.iter().filter(|&&f| f == 1).count();
        prop_assert!(count as f64 / n as f64 <= 1.0 - q + 1.0 / n as f64 + 1e-12);
        let moved: Vec<f64> = scores.iter().map(|s| s.exp().ln_1p()).collect();
        prop_assert_eq!(flags, flag(&moved, threshold(&moved, q).unwrap()));
    }

    #[test]
    fn scoring_is_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let (b, s, c) = (1 + rng.below(0, 6), 2 + rng.below(0, 4), 1 + rng.below(0, 2));
        let dims = wavae::vae::ModelDims { input: s * c, hidden: 3, latent: 2 };
        let params = wavae::vae::ModelParams::<f64>::init(dims, wavae::vae::OutputActivation::Linear, &mut rng);
        let batch = WindowBatch {
            windows: randn(&mut rng, &[b, s, c], 1.0),
            labels: vec![0; b],
            offsets: (0..b).collect(),
        };
        let base = wavae::detect::score(&params, &batch).unwrap();
        let mut perm: Vec<usize> = (0..b).collect();
        rng.shuffle(&mut perm);
        let permuted = wavae::detect::score(&params, &batch.select(&perm)).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(permuted[k], base[i]);
        }
    }
}

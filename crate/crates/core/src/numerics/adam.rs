use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<S>>) -> Self {
        let first: Vec<_> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place. `names` label errors only.
    ///
    /// Every gradient is checked before any parameter is touched, so a
    /// rejected step leaves parameters and moments unchanged.
    pub fn step(&mut self, names: &[&str], params: &mut [&mut Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: {} moment slots, {} params, {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape(g, "adam_step")?;
            p.expect_same_shape(&self.first[i], "adam_step")?;
            if !g.all_finite() {
                let name = names.get(i).copied().unwrap_or("?");
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = S::of(1.0 - beta1.powi(t));
        let bc2 = S::of(1.0 - beta2.powi(t));
        let (b1, b2, lr, eps) = (S::of(beta1), S::of(beta2), S::of(lr), S::of(eps));

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (S::one() - b1) * gi;
                *vi = b2 * *vi + (S::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_update_is_lr_sized() {
        // m̂ = g, v̂ = g² on step one, so Δ = -lr·g/(|g| + ε).
        let mut w = Tensor::scalar(0.0f64);
        let mut opt = AdamState::new(AdamConfig::with_lr(0.1), [&w]);
        opt.step(&["w"], &mut [&mut w], &[Tensor::scalar(1.0)]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((w.item() - expected).abs() < 1e-12);
        assert!((w.item() + 0.1).abs() < 1e-6);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Tensor::column(vec![1.0f64, -2.0, 3.5]);
        let before = w.clone();
        let mut opt = AdamState::new(AdamConfig::default(), [&w]);
        for _ in 0..5 {
            opt.step(&["w"], &mut [&mut w], &[Tensor::zeros([3, 1])]).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut w = Tensor::scalar(0.0f64);
        let mut opt = AdamState::new(AdamConfig::default(), [&w]);
        let err = opt
            .step(&["enc_w1"], &mut [&mut w], &[Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert!(err.to_string().contains("enc_w1"));
        assert_eq!(opt.step_count(), 0);
        assert_eq!(w.item(), 0.0);
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut w = Tensor::column(vec![0.3f64, -0.7]);
            let mut opt = AdamState::new(AdamConfig::with_lr(0.05), [&w]);
            for k in 0..50 {
                let g = w.map(|x| 2.0 * x + (k as f64).sin());
                opt.step(&["w"], &mut [&mut w], &[g]).unwrap();
            }
            w
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}

//! Mutual-information couplers between the raw and augmented latents.
//!
//! * contrastive: temperature-scaled infoNCE with in-batch negatives drawn
//!   from both the augmented latents and the other raw latents;
//! * adversarial: a discriminator whose log-odds on `z_r` and `z_a` form the
//!   surrogate the generator maximises, trained in a second stage on swapped
//!   pseudo-labels.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Graph, Rng, Tensor, Var};
use crate::objective::{self, LossBreakdown, ObjectiveConfig, StreamInputs};
use crate::scalar::Scalar;
use crate::vae::{glorot, ModelParams};

/// Discriminator logits are clamped to `±LOGIT_CLAMP` before use.
pub const LOGIT_CLAMP: f64 = 15.0;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoNceConfig {
    pub tau: f64,
    pub weight: f64,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self { tau: 0.1, weight: 0.1 }
    }
}

impl InfoNceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.weight >= 0.0) {
            return Err(Error::invalid(format!(
                "infoNCE needs tau > 0 and weight >= 0, got tau={} weight={}",
                self.tau, self.weight
            )));
        }
        Ok(())
    }
}

/// infoNCE on a graph; returns the batch-mean loss (≥ 0).
pub fn info_nce_graph<S: Scalar>(g: &mut Graph<S>, z_r: Var, z_a: Var, tau: f64) -> Result<Var> {
    let (zr, za) = (g.value(z_r), g.value(z_a));
    if zr.shape() != za.shape() {
        return Err(Error::ShapeMismatch {
            op: "info_nce",
            left: zr.shape().to_vec(),
            right: za.shape().to_vec(),
        });
    }
    let b = zr.rows();
    if b == 0 {
        return Err(Error::invalid("info_nce needs a nonempty batch"));
    }
    let inv_tau = S::of(1.0 / tau);
    let za_t = g.transpose(z_a)?;
    let zr_t = g.transpose(z_r)?;
    let cross = g.matmul(z_r, za_t)?;
    let cross = g.scale(cross, inv_tau);
    let within = g.matmul(z_r, zr_t)?;
    let within = g.scale(within, inv_tau);
    let logits = g.concat_cols(cross, within)?;

    // Row u keeps every cross term and every within term except v = u.
    let mask: Rc<[bool]> = (0..b)
        .flat_map(|u| (0..2 * b).map(move |j| j < b || j - b != u))
        .collect();
    let lse = g.log_sum_exp_rows(logits, Some(mask))?;
    let eye = g.constant(Tensor::eye(b));
    let diag = g.mul(cross, eye)?;
    let positive = g.sum_rows(diag);
    let per_row = g.sub(lse, positive)?;
    Ok(g.mean(per_row))
}

pub fn info_nce<S: Scalar>(z_r: &Tensor<S>, z_a: &Tensor<S>, tau: f64) -> Result<S> {
    let mut g = Graph::new();
    let a = g.constant(z_r.clone());
    let b = g.constant(z_a.clone());
    let l = info_nce_graph(&mut g, a, b, tau)?;
    Ok(g.value(l).item())
}

/// Fully connected stack `m → h → … → h → 1` with leaky-ReLU hidden units.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscStack<S> {
    layers: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> DiscStack<S> {
    fn init(latent: usize, hidden: usize, layers: usize, rng: &mut Rng) -> Self {
        let mut dims = vec![latent];
        dims.extend(std::iter::repeat_n(hidden, layers - 1));
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| (glorot(rng, w[0], w[1]), Tensor::zeros([1, w[1]])))
            .collect();
        Self { layers }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.layers.iter().flat_map(|(w, b)| [w, b])
    }
}

/// Which latent a discriminator call scores; selects the stack when the two
/// roles use separate networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Raw,
    Augmented,
}

/// Ψ (raw role) and Ψ_a (augmented role). `aug` is `None` when one stack
/// serves both roles.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<S> {
    raw: DiscStack<S>,
    aug: Option<DiscStack<S>>,
}

#[derive(Clone, Debug)]
pub struct DiscVars {
    raw: Vec<(Var, Var)>,
    aug: Option<Vec<(Var, Var)>>,
}

impl DiscVars {
    /// Groups graph handles laid out in [`Discriminator::tensors`] order.
    pub fn from_flat(vars: &[Var], separate: bool) -> Result<Self> {
        let stacks = if separate { 2 } else { 1 };
        if vars.is_empty() || !vars.len().is_multiple_of(2 * stacks) {
            return Err(Error::invalid(format!("{} handles cannot form {stacks} stacks", vars.len())));
        }
        let pairs: Vec<(Var, Var)> = vars.chunks(2).map(|c| (c[0], c[1])).collect();
        let per = pairs.len() / stacks;
        let raw = pairs[..per].to_vec();
        let aug = separate.then(|| pairs[per..].to_vec());
        Ok(Self { raw, aug })
    }
}

impl<S: Scalar> Discriminator<S> {
    pub fn new(latent: usize, hidden: usize, layers: usize, separate: bool, rng: &mut Rng) -> Result<Self> {
        if layers < 2 || hidden == 0 {
            return Err(Error::invalid(format!(
                "discriminator needs at least 2 layers and hidden >= 1, got {layers} layers, hidden {hidden}"
            )));
        }
        let raw = DiscStack::init(latent, hidden, layers, rng);
        let aug = separate.then(|| DiscStack::init(latent, hidden, layers, rng));
        Ok(Self { raw, aug })
    }

    pub fn is_separate(&self) -> bool {
        self.aug.is_some()
    }

    pub fn depth(&self) -> usize {
        self.raw.depth()
    }

    /// Input and hidden widths.
    pub fn widths(&self) -> (usize, usize) {
        let first = &self.raw.layers[0].0;
        (first.rows(), first.cols())
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        self.raw.tensors().chain(self.aug.iter().flat_map(|s| s.tensors())).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for stack in std::iter::once(&mut self.raw).chain(self.aug.as_mut()) {
            for (w, b) in stack.layers.iter_mut() {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, stack) in std::iter::once(("disc", &self.raw)).chain(self.aug.as_ref().map(|s| ("disc_aug", s))) {
            for i in 0..stack.depth() {
                names.push(format!("{prefix}_w{i}"));
                names.push(format!("{prefix}_b{i}"));
            }
        }
        names
    }

    /// Rebuilds a discriminator from tensors in [`Self::tensors`] order.
    pub fn from_tensors(layers: usize, separate: bool, tensors: Vec<Tensor<S>>) -> Result<Self> {
        let stacks = if separate { 2 } else { 1 };
        if layers < 2 || tensors.len() != 2 * layers * stacks {
            return Err(Error::invalid(format!(
                "discriminator with {layers} layers x {stacks} stacks cannot take {} tensors",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut take = || -> Result<DiscStack<S>> {
            let mut layers_v = Vec::with_capacity(layers);
            let mut prev: Option<usize> = None;
            for _ in 0..layers {
                let w = it.next().expect("counted");
                let b = it.next().expect("counted");
                if !w.is_matrix() || b.shape() != [1, w.cols()] || prev.is_some_and(|p| p != w.rows()) {
                    return Err(Error::ShapeMismatch {
                        op: "discriminator layer",
                        left: w.shape().to_vec(),
                        right: b.shape().to_vec(),
                    });
                }
                prev = Some(w.cols());
                layers_v.push((w, b));
            }
            if prev != Some(1) {
                return Err(Error::invalid("discriminator must end in one logit"));
            }
            Ok(DiscStack { layers: layers_v })
        };
        let raw = take()?;
        let aug = if separate { Some(take()?) } else { None };
        Ok(Self { raw, aug })
    }

    pub fn register(&self, g: &mut Graph<S>, trainable: bool) -> DiscVars {
        let mut reg = |stack: &DiscStack<S>| -> Vec<(Var, Var)> {
            stack
                .layers
                .iter()
                .map(|(w, b)| {
                    if trainable {
                        (g.param(w.clone()), g.param(b.clone()))
                    } else {
                        (g.constant(w.clone()), g.constant(b.clone()))
                    }
                })
                .collect()
        };
        let raw = reg(&self.raw);
        let aug = self.aug.as_ref().map(reg);
        DiscVars { raw, aug }
    }

    /// Probabilities Ψ(z) for plain latents (clamped logits).
    pub fn predict(&self, z: &Tensor<S>, role: Role) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let zv = g.constant(z.clone());
        let l = disc_logits(&mut g, &vars, zv, role)?;
        let l = g.clamp(l, S::of(-LOGIT_CLAMP), S::of(LOGIT_CLAMP));
        let p = g.sigmoid(l);
        Ok(g.value(p).clone())
    }
}

/// Raw (unclamped) discriminator logits, shape `(b, 1)`.
pub fn disc_logits<S: Scalar>(g: &mut Graph<S>, vars: &DiscVars, z: Var, role: Role) -> Result<Var> {
    let stack = match (role, &vars.aug) {
        (Role::Augmented, Some(aug)) => aug,
        _ => &vars.raw,
    };
    let mut h = z;
    for (i, &(w, b)) in stack.iter().enumerate() {
        let hw = g.matmul(h, w)?;
        h = g.add_row(hw, b)?;
        if i + 1 < stack.len() {
            h = g.leaky_relu(h, S::of(LEAKY_SLOPE));
        }
    }
    Ok(h)
}

/// Batch mean of `log(Ψ(z_r)/(1−Ψ(z_r))) + log(Ψ_a(z_a)/(1−Ψ_a(z_a)))`.
///
/// With `Ψ = sigmoid(clamp(logit))` each log-odds is the clamped logit itself.
pub fn adversarial_mi_graph<S: Scalar>(g: &mut Graph<S>, vars: &DiscVars, z_r: Var, z_a: Var) -> Result<Var> {
    let bound = S::of(LOGIT_CLAMP);
    let lr = disc_logits(g, vars, z_r, Role::Raw)?;
    let lr = g.clamp(lr, -bound, bound);
    let la = disc_logits(g, vars, z_a, Role::Augmented)?;
    let la = g.clamp(la, -bound, bound);
    let mr = g.mean(lr);
    let ma = g.mean(la);
    g.add(mr, ma)
}

pub fn adversarial_mi<S: Scalar>(z_r: &Tensor<S>, z_a: &Tensor<S>, disc: &Discriminator<S>) -> Result<S> {
    let mut g = Graph::new();
    let vars = disc.register(&mut g, false);
    let a = g.constant(z_r.clone());
    let b = g.constant(z_a.clone());
    let v = adversarial_mi_graph(&mut g, &vars, a, b)?;
    Ok(g.value(v).item())
}

/// The log-odds surrogate from given probabilities; each must lie in (0, 1).
pub fn log_odds_sum<S: Scalar>(psi_r: &[S], psi_a: &[S]) -> Result<S> {
    let mean_logit = |ps: &[S]| -> Result<S> {
        if ps.is_empty() {
            return Err(Error::invalid("empty discriminator output"));
        }
        let mut acc = S::zero();
        for &p in ps {
            if !(p > S::zero() && p < S::one()) {
                return Err(Error::OutOfUnitInterval(p.as_f64()));
            }
            acc += (p / (S::one() - p)).ln();
        }
        Ok(acc / S::from_usize_lossy(ps.len()))
    };
    Ok(mean_logit(psi_r)? + mean_logit(psi_a)?)
}

/// Targets for the discriminator: which label each stream's latents receive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PseudoLabels {
    pub raw: u8,
    pub aug: u8,
    pub swapped: bool,
}

impl Default for PseudoLabels {
    fn default() -> Self {
        Self {
            raw: 1,
            aug: 0,
            swapped: false,
        }
    }
}

impl PseudoLabels {
    pub fn swap(self) -> Self {
        Self {
            raw: self.aug,
            aug: self.raw,
            swapped: !self.swapped,
        }
    }
}

/// Mean binary cross-entropy of the discriminator over both streams.
pub fn disc_bce_graph<S: Scalar>(
    g: &mut Graph<S>,
    vars: &DiscVars,
    z_r: Var,
    z_a: Var,
    labels: PseudoLabels,
) -> Result<Var> {
    let mut stream = |z: Var, role: Role, y: u8| -> Result<Var> {
        let l = disc_logits(g, vars, z, role)?;
        let sp = g.softplus(l);
        // softplus(l) − y·l
        let per = if y == 1 { g.sub(sp, l)? } else { sp };
        Ok(g.mean(per))
    };
    let r = stream(z_r, Role::Raw, labels.raw)?;
    let a = stream(z_a, Role::Augmented, labels.aug)?;
    let s = g.add(r, a)?;
    Ok(g.scale(s, S::of(0.5)))
}

/// One Adam step on the discriminator BCE. The latents are plain tensors,
/// so nothing upstream of them can change. Returns the pre-step loss.
pub fn discriminator_step<S: Scalar>(
    z_r: &Tensor<S>,
    z_a: &Tensor<S>,
    disc: &mut Discriminator<S>,
    labels: PseudoLabels,
    optimizer: &mut AdamState<S>,
) -> Result<S> {
    let mut g = Graph::new();
    let vars = disc.register(&mut g, true);
    let a = g.constant(z_r.clone());
    let b = g.constant(z_a.clone());
    let loss = disc_bce_graph(&mut g, &vars, a, b, labels)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("disc_bce".into()));
    }
    let grads = g.backward(loss)?;
    let leaves: Vec<Var> = vars
        .raw
        .iter()
        .chain(vars.aug.iter().flatten())
        .flat_map(|&(w, b)| [w, b])
        .collect();
    let grad_t: Vec<Tensor<S>> = leaves.iter().map(|&v| grads.get_or_zeros(v, g.value(v))).collect();
    let names = disc.names();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    optimizer.step(&names, &mut disc.tensors_mut(), &grad_t)?;
    Ok(value)
}

/// One adversarial batch.
///
/// Stage one updates the encoder/decoder on the WAVAE objective with the
/// discriminator frozen. Stage two freezes the generator, swaps the
/// pseudo-labels and takes `disc_steps` discriminator updates on the stage-one
/// latents. Returns the generator terms and the last discriminator loss.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_schedule<S: Scalar>(
    inputs: &StreamInputs<S>,
    params: &mut ModelParams<S>,
    disc: &mut Discriminator<S>,
    gen_opt: &mut AdamState<S>,
    disc_opt: &mut AdamState<S>,
    cfg: &ObjectiveConfig,
    labels: PseudoLabels,
    disc_steps: usize,
) -> Result<(LossBreakdown, f64)> {
    let stage1 = objective::generator_step(inputs, params, Some(&*disc), gen_opt, cfg)?;
    let swapped = labels.swap();
    let mut disc_loss = f64::NAN;
    for _ in 0..disc_steps {
        disc_loss = discriminator_step(&stage1.z_r, &stage1.z_a, disc, swapped, disc_opt)?.as_f64();
    }
    Ok((stage1.breakdown, disc_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, AdamConfig};

    #[test]
    fn single_row_infonce_is_zero() {
        let z = Tensor::new([1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        for tau in [0.05, 0.1, 1.0, 7.0] {
            assert_eq!(info_nce(&z, &z, tau).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_row_infonce_value() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let v: f64 = info_nce(&z, &z, 1.0).unwrap();
        let expected = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn infonce_rejects_bad_batches() {
        let a = Tensor::<f64>::zeros([0, 2]);
        assert!(info_nce(&a, &a, 0.1).is_err());
        let b = Tensor::<f64>::zeros([2, 2]);
        let c = Tensor::<f64>::zeros([3, 2]);
        assert!(info_nce(&b, &c, 0.1).is_err());
    }

    #[test]
    fn log_odds_values() {
        assert_eq!(log_odds_sum(&[0.5, 0.5], &[0.5]).unwrap(), 0.0);
        let v: f64 = log_odds_sum(&[0.9], &[0.9]).unwrap();
        assert!((v - 2.0 * 9f64.ln()).abs() < 1e-12);
        let flipped: f64 = log_odds_sum(&[0.1], &[0.1]).unwrap();
        assert!((flipped + v).abs() < 1e-12);
        assert!(log_odds_sum(&[1.0], &[0.5]).is_err());
    }

    #[test]
    fn constant_half_discriminator_gives_zero() {
        let mut rng = Rng::new(1);
        let d = Discriminator::<f64>::new(3, 4, 3, false, &mut rng).unwrap();
        let mut tensors: Vec<Tensor<f64>> = d.tensors().into_iter().cloned().collect();
        for t in tensors.iter_mut() {
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let d = Discriminator::from_tensors(3, false, tensors).unwrap();
        let z: Tensor<f64> = gaussian_sample(&mut rng, [5, 3]);
        assert_eq!(adversarial_mi(&z, &z, &d).unwrap(), 0.0);
        assert!(d.predict(&z, Role::Raw).unwrap().data().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn predictions_stay_inside_unit_interval() {
        let mut rng = Rng::new(2);
        let d = Discriminator::<f64>::new(2, 8, 2, true, &mut rng).unwrap();
        let z = Tensor::new([2, 2], vec![1e6, -1e6, -1e6, 1e6]).unwrap();
        for role in [Role::Raw, Role::Augmented] {
            for &p in d.predict(&z, role).unwrap().data() {
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }

    #[test]
    fn shallow_discriminators_are_rejected() {
        assert!(Discriminator::<f64>::new(2, 4, 1, false, &mut Rng::new(0)).is_err());
        assert!(Discriminator::<f64>::new(2, 4, 0, false, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn label_swap() {
        let l = PseudoLabels::default();
        assert_eq!((l.raw, l.aug), (1, 0));
        let s = l.swap();
        assert_eq!((s.raw, s.aug, s.swapped), (0, 1, true));
        assert_eq!(s.swap(), l);
    }

    #[test]
    fn discriminator_step_moves_only_discriminator() {
        let mut rng = Rng::new(4);
        let mut d = Discriminator::<f64>::new(2, 6, 3, false, &mut rng).unwrap();
        let before = d.clone();
        let mut opt = AdamState::new(AdamConfig::with_lr(0.01), d.tensors());
        let zr: Tensor<f64> = gaussian_sample(&mut rng, [8, 2]);
        let za: Tensor<f64> = gaussian_sample(&mut rng, [8, 2]);
        let zr_copy = zr.clone();
        discriminator_step(&zr, &za, &mut d, PseudoLabels::default(), &mut opt).unwrap();
        assert_ne!(d, before);
        assert_eq!(zr, zr_copy);
    }
}

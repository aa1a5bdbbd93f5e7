//! Fully connected VAE: encoder q(z|x), decoder p(x|z), the closed-form KL to
//! a standard normal prior, and the four reconstruction log-likelihoods.
//!
//! One [`ModelParams`] instance serves both the raw and the augmented stream.
//! Every loss is built on a [`Graph`] so values and gradients share one code
//! path; the plain-tensor functions at the bottom wrap the graph versions.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, sigmoid, Graph, Rng, Tensor, Var};
use crate::scalar::Scalar;

/// Bernoulli reconstructions are clamped to `[CLAMP, 1 − CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

fn logit_bound() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

/// Reconstruction likelihood. All variants are log-likelihood surrogates:
/// larger means a better fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReconLossKind {
    Mse,
    Bce,
    Robust1 { alpha: f64 },
    Robust2 { alpha: f64, sigma: f64 },
}

impl ReconLossKind {
    pub fn output(self) -> OutputActivation {
        match self {
            ReconLossKind::Bce | ReconLossKind::Robust1 { .. } => OutputActivation::Sigmoid,
            ReconLossKind::Mse | ReconLossKind::Robust2 { .. } => OutputActivation::Linear,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            ReconLossKind::Robust1 { alpha } if alpha <= 0.0 => {
                Err(Error::invalid(format!("robust1 alpha {alpha} must be > 0")))
            }
            ReconLossKind::Robust2 { alpha, sigma } if alpha <= 0.0 || sigma <= 0.0 => Err(Error::invalid(format!(
                "robust2 alpha {alpha} and sigma {sigma} must be > 0"
            ))),
            _ => Ok(()),
        }
    }
}

/// Parses `mse`, `bce`, `robust1[:alpha]` or `robust2[:alpha,sigma]`.
impl FromStr for ReconLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = args
            .split(',')
            .filter(|a| !a.trim().is_empty())
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("bad recon parameters in `{s}`")))?;
        let kind = match (name.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("mse", []) => ReconLossKind::Mse,
            ("bce", []) => ReconLossKind::Bce,
            ("robust1", []) => ReconLossKind::Robust1 { alpha: 0.1 },
            ("robust1", [alpha]) => ReconLossKind::Robust1 { alpha: *alpha },
            ("robust2", []) => ReconLossKind::Robust2 { alpha: 0.1, sigma: 1.0 },
            ("robust2", [alpha, sigma]) => ReconLossKind::Robust2 {
                alpha: *alpha,
                sigma: *sigma,
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown recon `{s}` (mse|bce|robust1[:alpha]|robust2[:alpha,sigma])"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelDims {
    /// Flattened window size `s·c`.
    pub input: usize,
    pub hidden: usize,
    pub latent: usize,
}

pub const PARAM_NAMES: [&str; 10] = [
    "enc_w", "enc_b", "mu_w", "mu_b", "logvar_w", "logvar_b", "dec_w1", "dec_b1", "dec_w2", "dec_b2",
];

/// Encoder trunk, the μ and log σ² heads, and the decoder trunk.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub dims: ModelDims,
    pub output: OutputActivation,
    tensors: [Tensor<S>; 10],
}

/// Glorot-uniform `(fan_in, fan_out)` matrix.
pub(crate) fn glorot<S: Scalar>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| S::of(rng.uniform_range(-bound, bound))).collect();
    Tensor::new([fan_in, fan_out], data).expect("shape matches")
}

impl<S: Scalar> ModelParams<S> {
    fn shapes(dims: ModelDims) -> [[usize; 2]; 10] {
        let ModelDims {
            input: d,
            hidden: h,
            latent: m,
        } = dims;
        [[d, h], [1, h], [h, m], [1, m], [h, m], [1, m], [m, h], [1, h], [h, d], [1, d]]
    }

    pub fn zeros(dims: ModelDims, output: OutputActivation) -> Self {
        Self {
            dims,
            output,
            tensors: Self::shapes(dims).map(Tensor::zeros),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: ModelDims, output: OutputActivation, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(dims, output);
        for (t, shape) in p.tensors.iter_mut().zip(Self::shapes(dims)) {
            if shape[0] != 1 {
                *t = glorot(rng, shape[0], shape[1]);
            }
        }
        p
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order.
    pub fn from_tensors(dims: ModelDims, output: OutputActivation, tensors: Vec<Tensor<S>>) -> Result<Self> {
        let shapes = Self::shapes(dims);
        if tensors.len() != shapes.len() {
            return Err(Error::invalid(format!("expected {} tensors, got {}", shapes.len(), tensors.len())));
        }
        for ((t, shape), name) in tensors.iter().zip(shapes).zip(PARAM_NAMES) {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: name,
                    left: shape.to_vec(),
                    right: t.shape().to_vec(),
                });
            }
        }
        let tensors: [Tensor<S>; 10] = tensors.try_into().expect("length checked");
        Ok(Self { dims, output, tensors })
    }

    pub fn tensors(&self) -> &[Tensor<S>; 10] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.tensors.iter_mut().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Hash of the exact bit patterns of every weight.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.tensors {
            t.shape().hash(&mut h);
            for x in t.data() {
                x.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Adds every tensor to `g`, as differentiable leaves when `trainable`.
    pub fn register(&self, g: &mut Graph<S>, trainable: bool) -> ParamVars {
        ParamVars(self.tensors.clone().map(|t| if trainable { g.param(t) } else { g.constant(t) }))
    }
}

/// Graph handles for a [`ModelParams`] in [`PARAM_NAMES`] order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars(pub [Var; 10]);

/// Diagonal Gaussian posterior with its reparameterised sample
/// `z = μ + exp(½·logvar) ⊙ ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGaussian<S> {
    pub mu: Tensor<S>,
    pub logvar: Tensor<S>,
    pub z: Tensor<S>,
    pub eps: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// `pre` is the last affine output: logits under a sigmoid head, and equal
/// to `out` under a linear one.
#[derive(Clone, Copy, Debug)]
pub struct DecodedVars {
    pub pre: Var,
    pub out: Var,
    pub activation: OutputActivation,
}

#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub value: Var,
    pub recon: Var,
    pub kl: Var,
    pub latent: EncodedVars,
    pub decoded: DecodedVars,
}

fn dense<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

/// Encoder. With `eps = None` the posterior mean is used as `z`.
pub fn encode_graph<S: Scalar>(g: &mut Graph<S>, p: &ParamVars, x: Var, eps: Option<Var>) -> Result<EncodedVars> {
    let [ew, eb, mw, mb, lw, lb, ..] = p.0;
    let pre = dense(g, x, ew, eb)?;
    let h = g.tanh(pre);
    let mu = dense(g, h, mw, mb)?;
    let raw_lv = dense(g, h, lw, lb)?;
    let logvar = g.clamp(raw_lv, S::of(LOGVAR_MIN), S::of(LOGVAR_MAX));
    let z = match eps {
        Some(eps) => {
            let half = g.scale(logvar, S::of(0.5));
            let sigma = g.exp(half);
            let noise = g.mul(sigma, eps)?;
            g.add(mu, noise)?
        }
        None => mu,
    };
    Ok(EncodedVars { mu, logvar, z })
}

pub fn decode_graph<S: Scalar>(
    g: &mut Graph<S>,
    p: &ParamVars,
    z: Var,
    activation: OutputActivation,
) -> Result<DecodedVars> {
    let [.., w1, b1, w2, b2] = p.0;
    let pre_h = dense(g, z, w1, b1)?;
    let h = g.tanh(pre_h);
    let pre = dense(g, h, w2, b2)?;
    let out = match activation {
        OutputActivation::Sigmoid => g.sigmoid(pre),
        OutputActivation::Linear => pre,
    };
    Ok(DecodedVars { pre, out, activation })
}

/// Batch mean of `½ Σ_j (μ_j² + e^{logvar_j} − 1 − logvar_j)`.
pub fn kl_graph<S: Scalar>(g: &mut Graph<S>, mu: Var, logvar: Var) -> Result<Var> {
    let b = g.value(mu).rows();
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let t = g.add(mu2, var)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -S::one());
    let s = g.sum(t);
    Ok(g.scale(s, S::of(0.5) / S::from_usize_lossy(b)))
}

/// Per-row `Σ_d log(x_d p_d^α + (1−x_d)(1−p_d)^α)` style terms need both
/// `log p` and `log(1−p)`; from clamped logits these are log-sigmoids.
fn bernoulli_logs<S: Scalar>(g: &mut Graph<S>, pre: Var) -> (Var, Var) {
    let bound = S::of(logit_bound());
    let l = g.clamp(pre, -bound, bound);
    let log_p = g.log_sigmoid(l);
    let neg = g.neg(l);
    let log_q = g.log_sigmoid(neg);
    (log_p, log_q)
}

/// Reconstruction log-likelihood surrogate averaged over the batch.
pub fn recon_graph<S: Scalar>(g: &mut Graph<S>, kind: ReconLossKind, x: Var, dec: &DecodedVars) -> Result<Var> {
    let xv = g.value(x).clone();
    let (b, d) = (xv.rows(), xv.cols());
    let inv_b = S::one() / S::from_usize_lossy(b);
    let needs_sigmoid = kind.output() == OutputActivation::Sigmoid;
    if needs_sigmoid != (dec.activation == OutputActivation::Sigmoid) {
        return Err(Error::invalid(format!(
            "{kind:?} needs a {:?} decoder head, got {:?}",
            kind.output(),
            dec.activation
        )));
    }
    match kind {
        ReconLossKind::Mse => {
            let diff = g.sub(x, dec.out)?;
            let sq = g.square(diff);
            let s = g.sum(sq);
            Ok(g.scale(s, -inv_b / S::from_usize_lossy(d)))
        }
        ReconLossKind::Bce => {
            let (log_p, log_q) = bernoulli_logs(g, dec.pre);
            let one_minus_x = g.constant(xv.map(|v| S::one() - v));
            let a = g.mul(x, log_p)?;
            let c = g.mul(one_minus_x, log_q)?;
            let t = g.add(a, c)?;
            let s = g.sum(t);
            Ok(g.scale(s, inv_b))
        }
        ReconLossKind::Robust1 { alpha } => {
            let al = S::of(alpha);
            let (log_p, log_q) = bernoulli_logs(g, dec.pre);
            let one_minus_x = g.constant(xv.map(|v| S::one() - v));
            let ap = g.scale(log_p, al);
            let p_alpha = g.exp(ap);
            let aq = g.scale(log_q, al);
            let q_alpha = g.exp(aq);
            let a = g.mul(x, p_alpha)?;
            let c = g.mul(one_minus_x, q_alpha)?;
            let inner = g.add(a, c)?;
            let logs = g.log(inner);
            // Π_d over a row as exp(Σ_d log).
            let row_log = g.sum_rows(logs);
            let prod = g.exp(row_log);
            let centered = g.add_scalar(prod, -S::one());
            let m = g.mean(centered);
            Ok(g.scale(m, (al + S::one()) / al))
        }
        ReconLossKind::Robust2 { alpha, sigma } => {
            let al = S::of(alpha);
            let var = sigma * sigma;
            let log_prefactor = -alpha * d as f64 / 2.0 * (std::f64::consts::TAU * var).ln();
            let diff = g.sub(dec.out, x)?;
            let sq = g.square(diff);
            let rs = g.sum_rows(sq);
            let t = g.scale(rs, S::of(-alpha / (2.0 * var)));
            let t = g.add_scalar(t, S::of(log_prefactor));
            let e = g.exp(t);
            let centered = g.add_scalar(e, -S::one());
            let m = g.mean(centered);
            Ok(g.scale(m, (al + S::one()) / al))
        }
    }
}

/// `recon − β·KL` on one stream, with the reparameterisation noise given.
pub fn elbo_graph<S: Scalar>(
    g: &mut Graph<S>,
    p: &ParamVars,
    x: Var,
    eps: Var,
    beta: f64,
    kind: ReconLossKind,
) -> Result<ElboVars> {
    let latent = encode_graph(g, p, x, Some(eps))?;
    let decoded = decode_graph(g, p, latent.z, kind.output())?;
    let recon = recon_graph(g, kind, x, &decoded)?;
    let kl = kl_graph(g, latent.mu, latent.logvar)?;
    let weighted = g.scale(kl, S::of(beta));
    let value = g.sub(recon, weighted)?;
    Ok(ElboVars {
        value,
        recon,
        kl,
        latent,
        decoded,
    })
}

fn check_input<S: Scalar>(params: &ModelParams<S>, x: &Tensor<S>) -> Result<()> {
    if !x.is_matrix() || x.cols() != params.dims.input {
        return Err(Error::ShapeMismatch {
            op: "encode",
            left: vec![x.rows(), params.dims.input],
            right: x.shape().to_vec(),
        });
    }
    Ok(())
}

/// Posterior parameters and one reparameterised sample per row of `x`.
pub fn encode<S: Scalar>(params: &ModelParams<S>, x: &Tensor<S>, rng: &mut Rng) -> Result<LatentGaussian<S>> {
    check_input(params, x)?;
    let eps_t: Tensor<S> = gaussian_sample(rng, [x.rows(), params.dims.latent]);
    encode_with_noise(params, x, eps_t)
}

pub fn encode_with_noise<S: Scalar>(params: &ModelParams<S>, x: &Tensor<S>, eps: Tensor<S>) -> Result<LatentGaussian<S>> {
    check_input(params, x)?;
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let xv = g.constant(x.clone());
    let ev = g.constant(eps.clone());
    let enc = encode_graph(&mut g, &p, xv, Some(ev))?;
    Ok(LatentGaussian {
        mu: g.value(enc.mu).clone(),
        logvar: g.value(enc.logvar).clone(),
        z: g.value(enc.z).clone(),
        eps,
    })
}

/// Decoder mean `x̂` for latent rows `z`, with the parameters' output head.
pub fn decode<S: Scalar>(params: &ModelParams<S>, z: &Tensor<S>) -> Result<Tensor<S>> {
    if !z.is_matrix() || z.cols() != params.dims.latent {
        return Err(Error::ShapeMismatch {
            op: "decode",
            left: vec![z.rows(), params.dims.latent],
            right: z.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let zv = g.constant(z.clone());
    let dec = decode_graph(&mut g, &p, zv, params.output)?;
    Ok(g.value(dec.out).clone())
}

/// Reconstruction from the posterior mean; no sampling.
pub fn reconstruct_mean<S: Scalar>(params: &ModelParams<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    check_input(params, x)?;
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let xv = g.constant(x.clone());
    let enc = encode_graph(&mut g, &p, xv, None)?;
    let dec = decode_graph(&mut g, &p, enc.z, params.output)?;
    Ok(g.value(dec.out).clone())
}

pub fn kl_divergence<S: Scalar>(post: &LatentGaussian<S>) -> S {
    let b = S::from_usize_lossy(post.mu.rows());
    let total: S = post
        .mu
        .data()
        .iter()
        .zip(post.logvar.data())
        .map(|(&m, &lv)| m * m + lv.exp() - S::one() - lv)
        .sum();
    S::of(0.5) * total / b
}

/// Reconstruction log-likelihood for a plain `x̂`.
///
/// Bernoulli kinds require `x̂ ∈ [0, 1]`; endpoints are clamped.
pub fn recon_loss<S: Scalar>(kind: ReconLossKind, x: &Tensor<S>, xhat: &Tensor<S>) -> Result<S> {
    kind.validate()?;
    x.expect_same_shape(xhat, "recon_loss")?;
    let x2 = x.clone().reshape([x.rows(), x.cols()])?;
    let xhat2 = xhat.clone().reshape([x.rows(), x.cols()])?;
    let mut g = Graph::new();
    let xv = g.constant(x2);
    let dec = match kind.output() {
        OutputActivation::Linear => {
            let out = g.constant(xhat2);
            DecodedVars {
                pre: out,
                out,
                activation: OutputActivation::Linear,
            }
        }
        OutputActivation::Sigmoid => {
            if let Some(&bad) = xhat2.data().iter().find(|p| !(**p >= S::zero() && **p <= S::one())) {
                return Err(Error::OutOfUnitInterval(bad.as_f64()));
            }
            let lo = S::of(PROB_CLAMP);
            let logits = xhat2.map(|p| {
                let p = p.max(lo).min(S::one() - lo);
                (p / (S::one() - p)).ln()
            });
            let out = g.constant(xhat2);
            let pre = g.constant(logits);
            DecodedVars {
                pre,
                out,
                activation: OutputActivation::Sigmoid,
            }
        }
    };
    let r = recon_graph(&mut g, kind, xv, &dec)?;
    Ok(g.value(r).item())
}

/// ELBO of one stream: `(value, posterior, x̂)`.
pub fn elbo<S: Scalar>(
    params: &ModelParams<S>,
    x: &Tensor<S>,
    beta: f64,
    kind: ReconLossKind,
    rng: &mut Rng,
) -> Result<(S, LatentGaussian<S>, Tensor<S>)> {
    check_input(params, x)?;
    if beta < 0.0 {
        return Err(Error::invalid(format!("beta {beta} must be >= 0")));
    }
    kind.validate()?;
    if kind.output() != params.output {
        return Err(Error::invalid(format!(
            "{kind:?} needs a {:?} decoder head, parameters have {:?}",
            kind.output(),
            params.output
        )));
    }
    let eps: Tensor<S> = gaussian_sample(rng, [x.rows(), params.dims.latent]);
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let xv = g.constant(x.clone());
    let ev = g.constant(eps.clone());
    let out = elbo_graph(&mut g, &p, xv, ev, beta, kind)?;
    let post = LatentGaussian {
        mu: g.value(out.latent.mu).clone(),
        logvar: g.value(out.latent.logvar).clone(),
        z: g.value(out.latent.z).clone(),
        eps,
    };
    Ok((g.value(out.value).item(), post, g.value(out.decoded.out).clone()))
}

/// Elementwise sigmoid of a plain tensor.
pub fn sigmoid_tensor<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(sigmoid)
}

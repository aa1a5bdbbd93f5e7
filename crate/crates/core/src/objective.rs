//! The composite WAVAE objective on one batch of paired windows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamState, Graph, Tensor, Var};
use crate::scalar::Scalar;
use crate::ssl::{self, Discriminator};
use crate::vae::{self, ModelParams, ReconLossKind, PARAM_NAMES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MiMode {
    #[default]
    Contrast,
    Adversarial,
    None,
}

impl FromStr for MiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "contrast" => Ok(MiMode::Contrast),
            "adversarial" => Ok(MiMode::Adversarial),
            "none" => Ok(MiMode::None),
            other => Err(Error::Config(format!("unknown mi mode `{other}` (contrast|adversarial|none)"))),
        }
    }
}

impl fmt::Display for MiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiMode::Contrast => "contrast",
            MiMode::Adversarial => "adversarial",
            MiMode::None => "none",
        })
    }
}

/// Per-term values of one objective evaluation.
///
/// `recon_*` are log-likelihood surrogates and `kl_*` the KL terms of each
/// stream; `total` is the minimised loss `−(ELBO_r + ELBO_a) − λ·mi_term`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_raw: f64,
    pub kl_raw: f64,
    pub recon_aug: f64,
    pub kl_aug: f64,
    pub mi_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("recon_raw", self.recon_raw),
            ("kl_raw", self.kl_raw),
            ("recon_aug", self.recon_aug),
            ("kl_aug", self.kl_aug),
            ("mi_term", self.mi_term),
            ("total", self.total),
        ]
    }

    /// Errors with the first non-finite term's name.
    pub fn check_finite(&self) -> Result<()> {
        match self.terms().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::NonFinite(format!("{name} = {v}"))),
            None => Ok(()),
        }
    }

    /// Running sum, for epoch means.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.recon_raw += other.recon_raw;
        self.kl_raw += other.kl_raw;
        self.recon_aug += other.recon_aug;
        self.kl_aug += other.kl_aug;
        self.mi_term += other.mi_term;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            recon_raw: self.recon_raw * k,
            kl_raw: self.kl_raw * k,
            recon_aug: self.recon_aug * k,
            kl_aug: self.kl_aug * k,
            mi_term: self.mi_term * k,
            total: self.total * k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub recon: ReconLossKind,
    pub mi_mode: MiMode,
    pub tau: f64,
    pub mi_weight: f64,
}

/// Flattened raw and augmented windows with their reparameterisation noise.
#[derive(Clone, Debug)]
pub struct StreamInputs<S> {
    pub x_raw: Tensor<S>,
    pub x_aug: Tensor<S>,
    pub eps_raw: Tensor<S>,
    pub eps_aug: Tensor<S>,
}

pub struct ObjectiveVars {
    pub total: Var,
    pub recon: [Var; 2],
    pub kl: [Var; 2],
    pub mi_term: Option<Var>,
    pub z_r: Var,
    pub z_a: Var,
}

/// Builds `L_min` on `g`. Both streams read the same parameter leaves.
///
/// `disc` must be registered when the mode is adversarial.
pub fn objective_graph<S: Scalar>(
    g: &mut Graph<S>,
    params: &vae::ParamVars,
    disc: Option<&ssl::DiscVars>,
    inputs: &StreamInputs<S>,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveVars> {
    let xr = g.constant(inputs.x_raw.clone());
    let xa = g.constant(inputs.x_aug.clone());
    let er = g.constant(inputs.eps_raw.clone());
    let ea = g.constant(inputs.eps_aug.clone());
    let raw = vae::elbo_graph(g, params, xr, er, cfg.beta, cfg.recon)?;
    let aug = vae::elbo_graph(g, params, xa, ea, cfg.beta, cfg.recon)?;
    let elbo_sum = g.add(raw.value, aug.value)?;
    let mut total = g.neg(elbo_sum);

    let (z_r, z_a) = (raw.latent.z, aug.latent.z);
    let mi_term = match cfg.mi_mode {
        MiMode::None => None,
        MiMode::Contrast => {
            let nce = ssl::info_nce_graph(g, z_r, z_a, cfg.tau)?;
            Some(g.neg(nce))
        }
        MiMode::Adversarial => {
            let vars = disc.ok_or_else(|| Error::invalid("adversarial objective needs a discriminator"))?;
            Some(ssl::adversarial_mi_graph(g, vars, z_r, z_a)?)
        }
    };
    if let Some(mi) = mi_term {
        let weighted = g.scale(mi, S::of(cfg.mi_weight));
        total = g.sub(total, weighted)?;
    }
    Ok(ObjectiveVars {
        total,
        recon: [raw.recon, aug.recon],
        kl: [raw.kl, aug.kl],
        mi_term,
        z_r,
        z_a,
    })
}

pub struct GeneratorOutput<S> {
    pub breakdown: LossBreakdown,
    /// Sampled latents of this step, detached from the graph.
    pub z_r: Tensor<S>,
    pub z_a: Tensor<S>,
}

fn breakdown<S: Scalar>(g: &Graph<S>, vars: &ObjectiveVars) -> LossBreakdown {
    let v = |x: Var| g.value(x).item().as_f64();
    LossBreakdown {
        recon_raw: v(vars.recon[0]),
        kl_raw: v(vars.kl[0]),
        recon_aug: v(vars.recon[1]),
        kl_aug: v(vars.kl[1]),
        mi_term: vars.mi_term.map(v).unwrap_or(0.0),
        total: v(vars.total),
    }
}

/// Evaluates the objective without touching any parameters.
pub fn evaluate<S: Scalar>(
    inputs: &StreamInputs<S>,
    params: &ModelParams<S>,
    disc: Option<&Discriminator<S>>,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let p = params.register(&mut g, false);
    let d = disc.map(|d| d.register(&mut g, false));
    let vars = objective_graph(&mut g, &p, d.as_ref(), inputs, cfg)?;
    Ok(breakdown(&g, &vars))
}

/// One Adam step on the shared encoder/decoder; the discriminator is frozen.
pub fn generator_step<S: Scalar>(
    inputs: &StreamInputs<S>,
    params: &mut ModelParams<S>,
    disc: Option<&Discriminator<S>>,
    optimizer: &mut AdamState<S>,
    cfg: &ObjectiveConfig,
) -> Result<GeneratorOutput<S>> {
    let mut g = Graph::new();
    let p = params.register(&mut g, true);
    let d = disc.map(|d| d.register(&mut g, false));
    let vars = objective_graph(&mut g, &p, d.as_ref(), inputs, cfg)?;
    let out = breakdown(&g, &vars);
    out.check_finite()?;

    let grads = g.backward(vars.total)?;
    let grad_t: Vec<Tensor<S>> = p.0.iter().map(|&v| grads.get_or_zeros(v, g.value(v))).collect();
    optimizer.step(&PARAM_NAMES, &mut params.tensors_mut(), &grad_t)?;
    if !params.all_finite() {
        return Err(Error::NonFinite("model weights after update".into()));
    }
    Ok(GeneratorOutput {
        breakdown: out,
        z_r: g.value(vars.z_r).clone(),
        z_a: g.value(vars.z_a).clone(),
    })
}

//! Classifier guidance and classifier-free guidance on top of the samplers.
//!
//! Classifier guidance shifts the DDPM step mean by `s·β̃_t·∇_x log p(y|x)`
//! evaluated at the unguided mean; the step variance is untouched.
//! Classifier-free guidance replaces the noise estimate with
//! `ε̂(x,y,t) + s·(ε̂(x,y,t) − ε̂(x,∅,t))` inside either sampler.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forward::Trajectory;
use crate::losses::mu_tilde_from_eps;
use crate::model::{Classifier, EpsModel, NoisePredictor};
use crate::rng::{RngState, SimRng};
use crate::samplers::{add_noise, run_chains, sample_reverse, SamplerConfig, SamplerKind};
use crate::schedules::Schedule;

/// Source of `∇_x log p(y | x, t)`.
pub trait LabelScore {
    fn classes(&self) -> usize;
    fn grad_log_prob(&self, x: &[f64], t: usize, y: usize, sched: &Schedule) -> Result<Vec<f64>>;
}

impl LabelScore for Classifier {
    fn classes(&self) -> usize {
        Classifier::classes(self)
    }

    fn grad_log_prob(&self, x: &[f64], t: usize, y: usize, sched: &Schedule) -> Result<Vec<f64>> {
        self.grad_x(x, t, y, sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    None,
    Classifier,
    ClassifierFree,
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GuidanceMode::None => "none",
            GuidanceMode::Classifier => "classifier",
            GuidanceMode::ClassifierFree => "classifier-free",
        })
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GuidanceMode::None),
            "classifier" => Ok(GuidanceMode::Classifier),
            "classifier-free" | "cfg" => Ok(GuidanceMode::ClassifierFree),
            other => Err(Error::invalid("guidance", format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub scale: f64,
    pub label: Option<usize>,
}

impl GuidanceConfig {
    pub fn none() -> Self {
        Self {
            mode: GuidanceMode::None,
            scale: 0.0,
            label: None,
        }
    }
}

fn check_scale(s: f64) -> Result<()> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::invalid("scale", format!("must be finite and >= 0, got {s}")));
    }
    Ok(())
}

/// Mean of the classifier-guided step: `μ̂ + s·β̃_t·∇_x log p(y|x)|_{x=μ̂}`.
pub fn guided_mean<M, C>(
    model: &M,
    classifier: &C,
    xt: &[f64],
    t: usize,
    y: usize,
    scale: f64,
    sched: &Schedule,
) -> Result<Vec<f64>>
where
    M: EpsModel + ?Sized,
    C: LabelScore + ?Sized,
{
    sched.check_t(t, 1)?;
    check_scale(scale)?;
    if y >= classifier.classes() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: classifier.classes(),
        });
    }
    let eps = model.eps(xt, t, None, sched)?;
    let mut mu = mu_tilde_from_eps(xt, &eps, t, sched)?;
    let grad = classifier.grad_log_prob(&mu, t, y, sched)?;
    let k = scale * sched.beta_tilde(t);
    for (m, g) in mu.iter_mut().zip(&grad) {
        *m += k * g;
    }
    Ok(mu)
}

/// Classifier-guided DDPM step; noise `√β̃_t·z` only for `t > 1`.
#[allow(clippy::too_many_arguments)]
pub fn guided_ddpm_step<M, C>(
    model: &M,
    classifier: &C,
    xt: &[f64],
    t: usize,
    y: usize,
    scale: f64,
    sched: &Schedule,
    rng: &mut SimRng,
) -> Result<Vec<f64>>
where
    M: EpsModel + ?Sized,
    C: LabelScore + ?Sized,
{
    let mut x = guided_mean(model, classifier, xt, t, y, scale, sched)?;
    if t > 1 {
        add_noise(&mut x, sched.beta_tilde(t).sqrt(), rng);
    }
    Ok(x)
}

/// `ε̃ = ε̂(x,y,t) + s·(ε̂(x,y,t) − ε̂(x,∅,t))`; `y = None` routes both terms
/// through the null label.
pub fn cfg_eps(
    model: &NoisePredictor,
    x: &[f64],
    t: usize,
    y: Option<usize>,
    scale: f64,
    sched: &Schedule,
) -> Result<Vec<f64>> {
    if !model.is_conditional() {
        return Err(Error::Conditioning(
            "classifier-free guidance needs a conditional model".into(),
        ));
    }
    check_scale(scale)?;
    let cond = model.predict_eps(x, t, y, sched)?;
    let uncond = model.predict_eps(x, t, None, sched)?;
    Ok(cond
        .iter()
        .zip(&uncond)
        .map(|(c, u)| c + scale * (c - u))
        .collect())
}

/// A conditional model whose predictions are replaced by [`cfg_eps`].
#[derive(Debug, Clone, Copy)]
pub struct CfgModel<'a> {
    pub model: &'a NoisePredictor,
    pub scale: f64,
}

impl EpsModel for CfgModel<'_> {
    fn dim(&self) -> usize {
        self.model.arch().data_dim
    }

    fn eps(&self, x: &[f64], t: usize, label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        cfg_eps(self.model, x, t, label, self.scale, sched)
    }
}

/// Sample with the configured guidance. Classifier guidance is defined for
/// the DDPM sampler only.
pub fn guided_sample<C: LabelScore + ?Sized>(
    model: &NoisePredictor,
    cfg: &SamplerConfig,
    guidance: &GuidanceConfig,
    classifier: Option<&C>,
    sched: &Schedule,
    rng: RngState,
) -> Result<Vec<Trajectory>> {
    check_scale(guidance.scale)?;
    match guidance.mode {
        GuidanceMode::None => sample_reverse(model, cfg, sched, guidance.label, rng),
        GuidanceMode::Classifier => {
            let c = classifier.ok_or_else(|| {
                Error::Conditioning("classifier guidance needs a classifier".into())
            })?;
            let y = guidance.label.ok_or_else(|| {
                Error::Conditioning("classifier guidance needs a target label".into())
            })?;
            if cfg.kind != SamplerKind::Ddpm {
                return Err(Error::Conditioning(
                    "classifier guidance is only defined for the DDPM sampler".into(),
                ));
            }
            if model.is_conditional() {
                return Err(Error::Conditioning(
                    "classifier guidance expects an unconditional noise model".into(),
                ));
            }
            run_chains(model.arch().data_dim, cfg, sched, rng, |x, t, r| {
                guided_ddpm_step(model, c, x, t, y, guidance.scale, sched, r)
            })
        }
        GuidanceMode::ClassifierFree => {
            if !model.is_conditional() {
                return Err(Error::Conditioning(
                    "classifier-free guidance needs a conditional model".into(),
                ));
            }
            let wrapped = CfgModel {
                model,
                scale: guidance.scale,
            };
            sample_reverse(&wrapped, cfg, sched, guidance.label, rng)
        }
    }
}

//! Reverse-process samplers: stochastic DDPM steps and the σ-parameterised
//! DDIM family, plus a multi-chain driver.
//!
//! Chain `i` of a run seeded with `RngState` `r` draws from `r.fork(i)`, so
//! chains are reproducible independently of how many run alongside them.

use crate::error::{check_dim, Error, Result};
use crate::forward::Trajectory;
use crate::losses::mu_tilde_from_eps;
use crate::model::EpsModel;
use crate::rng::{RngState, SimRng};
use crate::schedules::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaPolicy {
    /// σ_t = 0: deterministic after the initial draw.
    Zero,
    /// σ_t chosen so the step reproduces DDPM.
    DdpmEquivalent,
    /// Explicit σ_t, indexed `t − 1`.
    Explicit(Vec<f64>),
}

impl SigmaPolicy {
    pub fn sigma(&self, t: usize, sched: &Schedule) -> Result<f64> {
        match self {
            SigmaPolicy::Zero => Ok(0.0),
            SigmaPolicy::DdpmEquivalent => ddim_sigma_ddpm_equiv(t, sched),
            SigmaPolicy::Explicit(v) => v
                .get(t - 1)
                .copied()
                .ok_or_else(|| Error::invalid("sigma", format!("no value for t = {t}"))),
        }
    }

    fn validate(&self, sched: &Schedule) -> Result<()> {
        if let SigmaPolicy::Explicit(v) = self {
            check_dim(sched.steps(), v.len())?;
            for (i, s) in v.iter().enumerate() {
                check_sigma(i + 1, *s, sched)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SamplerKind {
    Ddpm,
    Ddim(SigmaPolicy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Keep every intermediate state, not just `x_0`.
    pub record: bool,
    pub chains: usize,
    /// Fixed starting point `x_T` shared by all chains; drawn per chain when absent.
    pub initial: Option<Vec<f64>>,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, chains: usize) -> Self {
        Self {
            kind,
            record: false,
            chains,
            initial: None,
        }
    }

    pub fn validate(&self, sched: &Schedule) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::invalid("chains", "must be >= 1"));
        }
        if let SamplerKind::Ddim(p) = &self.kind {
            p.validate(sched)?;
        }
        Ok(())
    }
}

/// DDPM step mean `(x_t − (β_t/√(1 − ᾱ_t))·ε̂)/√α_t`.
pub fn ddpm_mean(xt: &[f64], eps: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    mu_tilde_from_eps(xt, eps, t, sched)
}

/// One reverse DDPM step. Noise `√β̃_t·z` is added only for `t > 1`.
pub fn ddpm_step<M: EpsModel + ?Sized>(
    model: &M,
    xt: &[f64],
    t: usize,
    sched: &Schedule,
    label: Option<usize>,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    sched.check_t(t, 1)?;
    let eps = model.eps(xt, t, label, sched)?;
    let mut x = ddpm_mean(xt, &eps, t, sched)?;
    if t > 1 {
        add_noise(&mut x, sched.beta_tilde(t).sqrt(), rng);
    }
    Ok(x)
}

pub(crate) fn add_noise(x: &mut [f64], scale: f64, rng: &mut SimRng) {
    for v in x.iter_mut() {
        *v += scale * rng.normal();
    }
}

/// `σ_t = √((1 − ᾱ_{t−1})/(1 − ᾱ_t))·√(1 − ᾱ_t/ᾱ_{t−1})`; zero at `t = 1`.
pub fn ddim_sigma_ddpm_equiv(t: usize, sched: &Schedule) -> Result<f64> {
    sched.check_t(t, 1)?;
    if t == 1 {
        return Ok(0.0);
    }
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    Ok(((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt())
}

fn check_sigma(t: usize, sigma: f64, sched: &Schedule) -> Result<f64> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    let limit = 1.0 - sched.alpha_bar(t - 1);
    let sigma_sq = sigma * sigma;
    if sigma_sq > limit + 1e-12 * limit.max(f64::MIN_POSITIVE) {
        return Err(Error::SigmaTooLarge { t, sigma_sq, limit });
    }
    Ok((limit - sigma_sq).max(0.0).sqrt())
}

/// DDIM step mean: predicted-x₀ part plus the direction-of-`x_t` part.
pub fn ddim_mean(xt: &[f64], eps: &[f64], t: usize, sigma: f64, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_t(t, 1)?;
    check_dim(xt.len(), eps.len())?;
    let dir = check_sigma(t, sigma, sched)?;
    let a = sched.alpha(t).sqrt();
    let b = (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(xt
        .iter()
        .zip(eps)
        .map(|(x, e)| (x - b * e) / a + dir * e)
        .collect())
}

/// One DDIM step with noise scale `sigma`. Draws noise only when `σ_t > 0`
/// and `t > 1`.
pub fn ddim_step<M: EpsModel + ?Sized>(
    model: &M,
    xt: &[f64],
    t: usize,
    sigma: f64,
    sched: &Schedule,
    label: Option<usize>,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    sched.check_t(t, 1)?;
    check_sigma(t, sigma, sched)?;
    let eps = model.eps(xt, t, label, sched)?;
    let mut x = ddim_mean(xt, &eps, t, sigma, sched)?;
    if sigma > 0.0 && t > 1 {
        add_noise(&mut x, sigma, rng);
    }
    Ok(x)
}

/// Run `cfg.chains` reverse chains from `T` down to 0 with a caller-supplied
/// step `(x_t, t, rng) → x_{t−1}`.
pub fn run_chains<F>(
    dim: usize,
    cfg: &SamplerConfig,
    sched: &Schedule,
    rng: RngState,
    mut step: F,
) -> Result<Vec<Trajectory>>
where
    F: FnMut(&[f64], usize, &mut SimRng) -> Result<Vec<f64>>,
{
    cfg.validate(sched)?;
    if let Some(x) = &cfg.initial {
        check_dim(dim, x.len())?;
    }
    let steps = sched.steps();
    (0..cfg.chains)
        .map(|chain| {
            let mut r = rng.fork(chain as u64).rng();
            let mut x = match &cfg.initial {
                Some(x) => x.clone(),
                None => r.normal_vec(dim),
            };
            let mut traj = Trajectory::new();
            if cfg.record {
                traj.push(steps, x.clone());
            }
            for t in (1..=steps).rev() {
                x = step(&x, t, &mut r)?;
                if cfg.record {
                    traj.push(t - 1, x.clone());
                }
            }
            if !cfg.record {
                traj.push(0, x);
            }
            Ok(traj)
        })
        .collect()
}

/// Generate samples with the configured sampler. Returns one trajectory per
/// chain; unrecorded trajectories hold only `(0, x_0)`.
pub fn sample_reverse<M: EpsModel + ?Sized>(
    model: &M,
    cfg: &SamplerConfig,
    sched: &Schedule,
    label: Option<usize>,
    rng: RngState,
) -> Result<Vec<Trajectory>> {
    match &cfg.kind {
        SamplerKind::Ddpm => run_chains(model.dim(), cfg, sched, rng, |x, t, r| {
            ddpm_step(model, x, t, sched, label, r)
        }),
        SamplerKind::Ddim(policy) => run_chains(model.dim(), cfg, sched, rng, |x, t, r| {
            let sigma = policy.sigma(t, sched)?;
            ddim_step(model, x, t, sigma, sched, label, r)
        }),
    }
}

/// Final states `x_0` of every chain.
pub fn final_states(trajs: &[Trajectory]) -> Vec<Vec<f64>> {
    trajs
        .iter()
        .map(|t| t.last().expect("nonempty trajectory").to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::posterior_q;
    use crate::stubs::{OracleEps, ZeroEps};

    fn sched() -> Schedule {
        Schedule::linear(30, 1e-3, 0.08).unwrap()
    }

    #[test]
    fn ddpm_last_step_is_deterministic() {
        let s = sched();
        let m = OracleEps { x0: vec![0.5] };
        let a = ddpm_step(&m, &[0.3], 1, &s, None, &mut RngState::new(1, 0).rng()).unwrap();
        let b = ddpm_step(&m, &[0.3], 1, &s, None, &mut RngState::new(2, 0).rng()).unwrap();
        assert_eq!(a, b);
        let mut r = RngState::new(1, 0).rng();
        ddpm_step(&m, &[0.3], 1, &s, None, &mut r).unwrap();
        assert_eq!(r.normals_drawn(), 0);
    }

    #[test]
    fn zero_eps_collapses_mean() {
        let s = sched();
        let m = ZeroEps { dim: 2 };
        let x = [0.4, -1.0];
        let mean = ddpm_mean(&x, &[0.0, 0.0], 7, &s).unwrap();
        for (a, b) in mean.iter().zip(&x) {
            assert!((a - b / s.alpha(7).sqrt()).abs() < 1e-15);
        }
        let sigma = 0.05;
        let mut r1 = RngState::new(3, 0).rng();
        let mut r2 = RngState::new(3, 0).rng();
        let out = ddim_step(&m, &x, 7, sigma, &s, None, &mut r1).unwrap();
        for (i, o) in out.iter().enumerate() {
            let expect = x[i] / s.alpha(7).sqrt() + sigma * r2.normal();
            assert!((o - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn ddpm_step_with_oracle_matches_posterior() {
        let s = sched();
        let x0 = vec![1.2];
        let m = OracleEps { x0: x0.clone() };
        let (xt, t) = ([0.4], 12);
        let post = posterior_q(&xt, &x0, t, &s).unwrap();
        let eps = crate::model::EpsModel::eps(&m, &xt, t, None, &s).unwrap();
        let mean = ddpm_mean(&xt, &eps, t, &s).unwrap();
        assert!((mean[0] - post.mean()[0]).abs() < 1e-12);
        let mut r = RngState::new(9, 0).rng();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| ddpm_step(&m, &xt, t, &s, None, &mut r).unwrap()[0]).collect();
        let mu = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        let v = s.beta_tilde(t);
        assert!((mu - post.mean()[0]).abs() < 3.0 * (v / n as f64).sqrt());
        assert!((var - v).abs() < 3.0 * v * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn sigma_equivalence_values() {
        let s = Schedule::linear(2, 0.1, 0.2).unwrap();
        assert_eq!(ddim_sigma_ddpm_equiv(1, &s).unwrap(), 0.0);
        let s2 = ddim_sigma_ddpm_equiv(2, &s).unwrap();
        assert!((s2 - 0.267_261).abs() < 1e-6);
        assert!((s2 * s2 - s.beta_tilde(2)).abs() < 1e-12);
        assert!(ddim_sigma_ddpm_equiv(3, &s).is_err());
    }

    #[test]
    fn oversized_sigma_rejected() {
        let s = sched();
        let m = ZeroEps { dim: 1 };
        let limit = (1.0 - s.alpha_bar(4)).sqrt();
        let mut r = RngState::new(0, 0).rng();
        assert!(matches!(
            ddim_step(&m, &[0.0], 5, limit * 1.01, &s, None, &mut r),
            Err(Error::SigmaTooLarge { t: 5, .. })
        ));
        assert!(ddim_step(&m, &[0.0], 5, limit, &s, None, &mut r).is_ok());
        assert!(ddim_step(&m, &[0.0], 1, 0.1, &s, None, &mut r).is_err());
        assert!(ddim_step(&m, &[0.0], 5, -0.1, &s, None, &mut r).is_err());
        let bad = SamplerConfig::new(SamplerKind::Ddim(SigmaPolicy::Explicit(vec![0.0; 3])), 1);
        assert!(sample_reverse(&m, &bad, &s, None, RngState::new(0, 0)).is_err());
    }

    #[test]
    fn deterministic_ddim_ignores_rng() {
        let s = sched();
        let m = OracleEps { x0: vec![0.7, -0.2] };
        let a = ddim_step(&m, &[0.1, 0.2], 9, 0.0, &s, None, &mut RngState::new(1, 0).rng()).unwrap();
        let b = ddim_step(&m, &[0.1, 0.2], 9, 0.0, &s, None, &mut RngState::new(2, 7).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trajectory_shape() {
        let s = sched();
        let m = ZeroEps { dim: 2 };
        let mut cfg = SamplerConfig::new(SamplerKind::Ddpm, 3);
        cfg.record = true;
        let trajs = sample_reverse(&m, &cfg, &s, None, RngState::new(4, 0)).unwrap();
        assert_eq!(trajs.len(), 3);
        for tr in &trajs {
            assert_eq!(tr.len(), 31);
            assert!(tr.is_well_formed());
            assert_eq!(tr.states[0].0, 30);
            assert_eq!(tr.states[30].0, 0);
        }
        cfg.record = false;
        let finals = sample_reverse(&m, &cfg, &s, None, RngState::new(4, 0)).unwrap();
        assert_eq!(final_states(&finals), final_states(&trajs));
    }

    #[test]
    fn ddpm_from_fixed_start_spreads() {
        let s = sched();
        let m = ZeroEps { dim: 1 };
        let mut cfg = SamplerConfig::new(SamplerKind::Ddpm, 4);
        cfg.initial = Some(vec![0.3]);
        let out = final_states(&sample_reverse(&m, &cfg, &s, None, RngState::new(4, 0)).unwrap());
        assert!(out.windows(2).all(|w| w[0] != w[1]));
    }
}

//! ε ↔ x₀ conversions, the weighted and simple denoising losses, and a
//! Monte-Carlo estimate of the variational bound.
//!
//! The bound is reported as `L0 + Σ_{t=2..T} L_{t−1} + L_T`, each term in nats.

use crate::error::{check_dim, Error, Result};
use crate::forward::{marginal_q, posterior_q, sample_xt};
use crate::gaussian::{kl_closed_form, DiagGaussian};
use crate::model::EpsModel;
use crate::rng::SimRng;
use crate::schedules::Schedule;

/// `x_0 = (x_t − √(1 − ᾱ_t)·ε)/√ᾱ_t`.
pub fn x0_from_eps(xt: &[f64], eps: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_t(t, 1)?;
    check_dim(xt.len(), eps.len())?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(xt.iter().zip(eps).map(|(x, e)| (x - b * e) / a).collect())
}

/// `μ̃ = (x_t − ((1 − α_t)/√(1 − ᾱ_t))·ε)/√α_t`.
pub fn mu_tilde_from_eps(xt: &[f64], eps: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_t(t, 1)?;
    check_dim(xt.len(), eps.len())?;
    let c = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let s = sched.alpha(t).sqrt();
    Ok(xt.iter().zip(eps).map(|(x, e)| (x - c * e) / s).collect())
}

fn check_weighted_t(t: usize, sched: &Schedule) -> Result<()> {
    sched.check_t(t, 1)?;
    if t == 1 {
        return Err(Error::invalid("t", "weighted losses are undefined at t = 1 (beta_tilde_1 = 0)"));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

/// Weight `(1/2β̃_t)·ᾱ_{t−1}β_t²/(1 − ᾱ_t)²` of the x₀-prediction loss.
pub fn x0_loss_weight(t: usize, sched: &Schedule) -> Result<f64> {
    check_weighted_t(t, sched)?;
    let denom = 1.0 - sched.alpha_bar(t);
    Ok(sched.alpha_bar(t - 1) * sched.beta(t).powi(2) / (denom * denom) / (2.0 * sched.beta_tilde(t)))
}

/// Weight `(1/2β̃_t)·(1 − α_t)²/(α_t(1 − ᾱ_t))` of the ε-prediction loss.
pub fn eps_loss_weight(t: usize, sched: &Schedule) -> Result<f64> {
    check_weighted_t(t, sched)?;
    let one_minus_alpha = 1.0 - sched.alpha(t);
    Ok(one_minus_alpha * one_minus_alpha
        / (sched.alpha(t) * (1.0 - sched.alpha_bar(t)))
        / (2.0 * sched.beta_tilde(t)))
}

pub fn loss_x0_weighted(x0_hat: &[f64], x0: &[f64], t: usize, sched: &Schedule) -> Result<f64> {
    Ok(x0_loss_weight(t, sched)? * sq_dist(x0_hat, x0)?)
}

pub fn loss_eps_weighted(eps_hat: &[f64], eps: &[f64], t: usize, sched: &Schedule) -> Result<f64> {
    Ok(eps_loss_weight(t, sched)? * sq_dist(eps_hat, eps)?)
}

/// `‖ε̂ − ε‖²`.
pub fn loss_simple(eps_hat: &[f64], eps: &[f64]) -> Result<f64> {
    sq_dist(eps_hat, eps)
}

/// Terms of the variational bound, in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct VlbReport {
    /// Reconstruction term.
    pub l0: f64,
    /// `lt[i]` is `L_{t−1}` for `t = i + 2`.
    pub lt: Vec<f64>,
    /// Prior-matching term.
    pub l_t: f64,
    pub total: f64,
}

impl VlbReport {
    fn new(l0: f64, lt: Vec<f64>, l_t: f64) -> Self {
        let total = l0 + lt.iter().sum::<f64>() + l_t;
        Self { l0, lt, l_t, total }
    }

    /// Rows `(term, t, nats)` as written to CSV.
    pub fn rows(&self) -> Vec<(String, usize, f64)> {
        let steps = self.lt.len() + 1;
        let mut rows = vec![("L0".to_string(), 1, self.l0)];
        rows.extend(self.lt.iter().enumerate().map(|(i, v)| ("Lt".to_string(), i + 2, *v)));
        rows.push(("LT".to_string(), steps, self.l_t));
        rows.push(("total".to_string(), 0, self.total));
        rows
    }
}

/// Monte-Carlo estimate of the bound for one data point.
///
/// For `t ≥ 2` each term averages `KL(q(x_{t−1}|x_t,x_0) ‖ N(μ̂_θ(x_t,t), β̃_t·I))`
/// over `samples` draws of `x_t ~ q(x_t|x_0)`. `L0` averages
/// `−log N(x_0; x̂_0(x_1), β_1·I)` over `x_1 ~ q(x_1|x_0)`. `L_T` is the exact
/// `KL(q(x_T|x_0) ‖ N(0, I))`.
pub fn vlb_estimate<M: EpsModel + ?Sized>(
    model: &M,
    x0: &[f64],
    sched: &Schedule,
    samples: usize,
    rng: &mut SimRng,
) -> Result<VlbReport> {
    if samples < 1 {
        return Err(Error::invalid("M", "need at least one sample"));
    }
    check_dim(model.dim(), x0.len())?;
    let steps = sched.steps();
    let d = x0.len();

    let decoder_var = sched.beta(1);
    let mut l0 = 0.0;
    for _ in 0..samples {
        let (x1, _) = sample_xt(x0, 1, sched, rng)?;
        let eps_hat = model.eps(&x1, 1, None, sched)?;
        let mean = mu_tilde_from_eps(&x1, &eps_hat, 1, sched)?;
        let decoder = DiagGaussian::isotropic(mean, decoder_var)?;
        l0 -= decoder.log_pdf(x0)? / samples as f64;
    }

    let mut lt = Vec::with_capacity(steps.saturating_sub(1));
    for t in 2..=steps {
        let var = sched.beta_tilde(t);
        let mut acc = 0.0;
        for _ in 0..samples {
            let (xt, _) = sample_xt(x0, t, sched, rng)?;
            let q = posterior_q(&xt, x0, t, sched)?;
            let eps_hat = model.eps(&xt, t, None, sched)?;
            let p = DiagGaussian::isotropic(mu_tilde_from_eps(&xt, &eps_hat, t, sched)?, var)?;
            acc += kl_closed_form(&q, &p)?;
        }
        lt.push(acc / samples as f64);
    }

    let l_t = kl_closed_form(&marginal_q(x0, steps, sched)?, &DiagGaussian::standard(d))?;
    Ok(VlbReport::new(l0, lt, l_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::stubs::OracleEps;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn x0_round_trip() {
        let s = Schedule::linear(100, 1e-4, 0.02).unwrap();
        let mut rng = RngState::new(1, 0).rng();
        let x0 = vec![0.3, -1.7];
        for t in [1, 10, 50, 100] {
            let (xt, eps) = sample_xt(&x0, t, &s, &mut rng).unwrap();
            let back = x0_from_eps(&xt, &eps, t, &s).unwrap();
            for (a, b) in back.iter().zip(&x0) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn x0_from_eps_values() {
        let s = Schedule::linear(1, 0.75, 0.75).unwrap(); // alpha_bar_1 = 0.25
        let x = x0_from_eps(&[1.0], &[1.0], 1, &s).unwrap();
        assert!((x[0] - (1.0 - 0.75f64.sqrt()) / 0.5).abs() < 1e-15);
        assert!((x[0] - 0.267_949).abs() < 1e-6);
        assert_eq!(x0_from_eps(&[1.0], &[0.0], 1, &s).unwrap(), vec![2.0]);
        assert!(x0_from_eps(&[1.0], &[0.0], 2, &s).is_err());
    }

    #[test]
    fn mu_tilde_special_cases() {
        let s = Schedule::linear(10, 0.01, 0.2).unwrap();
        let m = mu_tilde_from_eps(&[0.8], &[0.0], 4, &s).unwrap();
        assert!((m[0] - 0.8 / s.alpha(4).sqrt()).abs() < 1e-15);
        let (xt, eps) = ([0.4, -0.2], [1.1, 0.3]);
        let a = mu_tilde_from_eps(&xt, &eps, 1, &s).unwrap();
        let b = x0_from_eps(&xt, &eps, 1, &s).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn mu_tilde_equals_posterior_mean_under_substitution() {
        let s = Schedule::linear(50, 1e-3, 0.05).unwrap();
        let mut rng = RngState::new(2, 0).rng();
        for _ in 0..200 {
            let t = 1 + rng.below(50);
            let xt = rng.normal_vec(2);
            let eps = rng.normal_vec(2);
            let x0 = x0_from_eps(&xt, &eps, t, &s).unwrap();
            let post = posterior_q(&xt, &x0, t, &s).unwrap();
            let mu = mu_tilde_from_eps(&xt, &eps, t, &s).unwrap();
            for (a, b) in mu.iter().zip(post.mean()) {
                assert!((a - b).abs() < 1e-12, "t={t}");
            }
        }
    }

    #[test]
    fn weighted_losses() {
        let s = Schedule::linear(30, 1e-3, 0.1).unwrap();
        assert_eq!(loss_x0_weighted(&[1.0], &[1.0], 5, &s).unwrap(), 0.0);
        assert_eq!(loss_eps_weighted(&[1.0], &[1.0], 5, &s).unwrap(), 0.0);
        let one = loss_x0_weighted(&[1.5], &[1.0], 5, &s).unwrap();
        let two = loss_x0_weighted(&[2.0], &[1.0], 5, &s).unwrap();
        assert!(rel(two, 4.0 * one) < 1e-14);
        for t in 2..=30 {
            assert!(eps_loss_weight(t, &s).unwrap() > 0.0);
        }
        assert!(loss_x0_weighted(&[1.0], &[1.0], 1, &s).is_err());
        assert!(loss_eps_weighted(&[1.0], &[1.0], 1, &s).is_err());
    }

    #[test]
    fn weighted_losses_agree_under_substitution() {
        let s = Schedule::linear(40, 1e-4, 0.05).unwrap();
        let mut rng = RngState::new(3, 0).rng();
        for _ in 0..200 {
            let t = 2 + rng.below(39);
            let xt = rng.normal_vec(3);
            let eps = rng.normal_vec(3);
            let eps_hat = rng.normal_vec(3);
            let x0 = x0_from_eps(&xt, &eps, t, &s).unwrap();
            let x0_hat = x0_from_eps(&xt, &eps_hat, t, &s).unwrap();
            let a = loss_x0_weighted(&x0_hat, &x0, t, &s).unwrap();
            let b = loss_eps_weighted(&eps_hat, &eps, t, &s).unwrap();
            assert!(rel(a, b) < 1e-10, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn simple_loss() {
        assert_eq!(loss_simple(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 0.0);
        assert_eq!(loss_simple(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(
            loss_simple(&[0.5, -0.25], &[0.0, 0.0]).unwrap(),
            loss_simple(&[-0.5, 0.25], &[0.0, 0.0]).unwrap()
        );
        assert!(loss_simple(&[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn oracle_predictor_has_zero_consistency_terms() {
        let s = Schedule::linear(20, 1e-3, 0.1).unwrap();
        let x0 = vec![0.8, -0.3];
        let oracle = OracleEps { x0: x0.clone() };
        let r = vlb_estimate(&oracle, &x0, &s, 16, &mut RngState::new(4, 0).rng()).unwrap();
        assert_eq!(r.lt.len(), 19);
        assert!(r.lt.iter().all(|v| *v < 1e-18), "{:?}", r.lt);
        let sum = r.l0 + r.lt.iter().sum::<f64>() + r.l_t;
        assert!((r.total - sum).abs() < 1e-12);
        assert!(r.l_t >= 0.0);
        // oracle decoder mean is x0 exactly, so L0 is the decoder's entropy term
        let expect = 0.5 * 2.0 * (2.0 * std::f64::consts::PI * s.beta(1)).ln();
        assert!((r.l0 - expect).abs() < 1e-9);
    }

    #[test]
    fn prior_term_small_on_long_schedule() {
        let s = Schedule::linear(1000, 1e-4, 0.02).unwrap();
        for x0 in [[3.0], [-3.0], [0.0], [1.7]] {
            let lt = kl_closed_form(&marginal_q(&x0, 1000, &s).unwrap(), &DiagGaussian::standard(1)).unwrap();
            assert!(lt < 0.01, "{lt}");
        }
    }

    #[test]
    fn rows_layout() {
        let r = VlbReport::new(1.0, vec![0.5, 0.25], 0.125);
        let rows = r.rows();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[1], ("Lt".to_string(), 2, 0.5));
        assert_eq!(rows[3], ("LT".to_string(), 3, 0.125));
        assert_eq!(rows[4].2, 1.875);
    }
}

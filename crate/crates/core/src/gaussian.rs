//! Diagonal Gaussians: density, affine sampling, and KL divergence.

use std::f64::consts::PI;

use crate::error::{check_dim, Error, Result};
use crate::rng::SimRng;

/// Gaussian with diagonal covariance. A zero variance marks a point mass in
/// that coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), var.len())?;
        if let Some(v) = var.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("var", format!("must be finite and >= 0, got {v}")));
        }
        Ok(Self { mean, var })
    }

    /// `N(mean, var·I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, vec![var; d])
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            var: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn is_point_mass(&self) -> bool {
        self.var.iter().all(|v| *v == 0.0)
    }

    /// `−½·Σ [log(2π·var_i) + (x_i − mean_i)²/var_i]`.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.var) {
            let r = xi - m;
            acc += (2.0 * PI * v).ln() + r * r / v;
        }
        Ok(-0.5 * acc)
    }

    /// `mean + sqrt(var) ⊙ z`, one standard normal per coordinate.
    pub fn sample(&self, rng: &mut SimRng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(m, v)| {
                let z = rng.normal();
                if *v == 0.0 {
                    *m
                } else {
                    m + v.sqrt() * z
                }
            })
            .collect()
    }

    /// Closed-form `KL(self ‖ p)`.
    pub fn kl(&self, p: &DiagGaussian) -> Result<f64> {
        kl_closed_form(self, p)
    }
}

/// `½·[Σ log(var_p/var_q) − d + Σ var_q/var_p + Σ (μ_q − μ_p)²/var_p]`.
pub fn kl_closed_form(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    check_dim(q.dim(), p.dim())?;
    if q.var.iter().chain(&p.var).any(|v| *v <= 0.0) {
        return Err(Error::invalid("var", "KL requires strictly positive variances"));
    }
    let mut acc = 0.0;
    for i in 0..q.dim() {
        let (vq, vp) = (q.var[i], p.var[i]);
        let dm = q.mean[i] - p.mean[i];
        let ratio = vq / vp;
        // log(vp/vq) - 1 + vq/vp, written to stay exact at vq == vp
        acc += (ratio - 1.0) - ratio.ln() + dm * dm / vp;
    }
    Ok((0.5 * acc).max(0.0))
}

/// Monte-Carlo estimate `(1/M)·Σ [log q(x_m) − log p(x_m)]`, `x_m ~ q`.
pub fn kl_mc(q: &DiagGaussian, p: &DiagGaussian, samples: usize, rng: &mut SimRng) -> Result<f64> {
    Ok(kl_mc_with_error(q, p, samples, rng)?.0)
}

/// As [`kl_mc`], also returning the standard error of the estimate
/// (0 when `samples == 1`).
pub fn kl_mc_with_error(
    q: &DiagGaussian,
    p: &DiagGaussian,
    samples: usize,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    check_dim(q.dim(), p.dim())?;
    if samples < 1 {
        return Err(Error::invalid("M", "need at least one sample"));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..samples {
        let x = q.sample(rng);
        let v = q.log_pdf(&x)? - p.log_pdf(&x)?;
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let se = if samples > 1 {
        (m2 / (samples - 1) as f64 / samples as f64).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn g(mean: &[f64], var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), var.to_vec()).unwrap()
    }

    /// Trapezoid quadrature of q·log(q/p) in 1-D.
    fn kl_quadrature_1d(q: (f64, f64), p: (f64, f64), lo: f64, hi: f64, n: usize) -> f64 {
        let lp = |x: f64, (m, v): (f64, f64)| -0.5 * ((2.0 * PI * v).ln() + (x - m).powi(2) / v);
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let x = lo + h * i as f64;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let lq = lp(x, q);
                w * lq.exp() * (lq - lp(x, p))
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn log_pdf_values() {
        let sn = DiagGaussian::standard(1);
        assert!((sn.log_pdf(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let a = g(&[1.0], &[1.0]);
        assert!((a.log_pdf(&[0.0]).unwrap() + 1.418_938_533_204_672_7).abs() < 1e-12);
        let b = g(&[0.3, -2.0], &[0.5, 3.0]);
        let expect = -0.5 * ((2.0 * PI * 0.5f64).ln() + (2.0 * PI * 3.0f64).ln());
        assert!((b.log_pdf(&[0.3, -2.0]).unwrap() - expect).abs() < 1e-14);
        assert!(matches!(
            b.log_pdf(&[0.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rejects_negative_variance() {
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn point_mass_sample_is_mean() {
        let p = g(&[1.5, -2.25], &[0.0, 0.0]);
        let mut rng = RngState::new(3, 0).rng();
        for _ in 0..10 {
            assert_eq!(p.sample(&mut rng), vec![1.5, -2.25]);
        }
    }

    #[test]
    fn standard_normal_moments() {
        let n = 1_000_000;
        let sn = DiagGaussian::standard(1);
        let mut rng = RngState::new(11, 0).rng();
        let xs: Vec<f64> = (0..n).map(|_| sn.sample(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn affine_construction_bitwise() {
        let (mu, sigma) = (0.75, 1.5);
        let wide = g(&[mu], &[sigma * sigma]);
        let sn = DiagGaussian::standard(1);
        let mut r1 = RngState::new(5, 2).rng();
        let mut r2 = RngState::new(5, 2).rng();
        for _ in 0..1000 {
            let a = wide.sample(&mut r1)[0];
            let b = mu + sigma * sn.sample(&mut r2)[0];
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn kl_identical_is_zero() {
        let q = g(&[0.3, -1.0, 2.0], &[0.5, 1.0, 4.0]);
        assert_eq!(kl_closed_form(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_reference_pair_matches_quadrature() {
        let q = g(&[1.0], &[1.0]);
        let p = g(&[0.0], &[4.0]);
        let oracle = kl_quadrature_1d((1.0, 1.0), (0.0, 4.0), -12.0, 12.0, 200_000);
        assert!((oracle - 0.443_147).abs() < 1e-6, "oracle {oracle}");
        let kl = kl_closed_form(&q, &p).unwrap();
        assert!((kl - oracle).abs() < 1e-9, "{kl} vs {oracle}");
    }

    #[test]
    fn kl_equal_variance_reduces_to_scaled_distance() {
        let v = 0.7;
        let q = g(&[1.0, 2.0], &[v, v]);
        let p = g(&[-0.5, 2.5], &[v, v]);
        let d2 = 1.5f64.powi(2) + 0.5f64.powi(2);
        assert!((kl_closed_form(&q, &p).unwrap() - d2 / (2.0 * v)).abs() < 1e-14);
    }

    #[test]
    fn kl_rejects_zero_variance() {
        let q = g(&[0.0], &[0.0]);
        let p = g(&[0.0], &[1.0]);
        assert!(kl_closed_form(&q, &p).is_err());
    }

    #[test]
    fn kl_mc_identical_is_exactly_zero() {
        let q = g(&[0.2, 1.0], &[0.3, 2.0]);
        let mut rng = RngState::new(1, 0).rng();
        assert_eq!(kl_mc(&q, &q, 1000, &mut rng).unwrap(), 0.0);
        assert!(kl_mc(&q, &q, 0, &mut rng).is_err());
    }

    #[test]
    fn kl_mc_single_sample_is_unbiased() {
        let q = g(&[1.0], &[1.0]);
        let p = g(&[0.0], &[4.0]);
        let exact = kl_closed_form(&q, &p).unwrap();
        let mut rng = RngState::new(21, 0).rng();
        let n = 100_000;
        let ests: Vec<f64> = (0..n).map(|_| kl_mc(&q, &p, 1, &mut rng).unwrap()).collect();
        let mean = ests.iter().sum::<f64>() / n as f64;
        let sd = (ests.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn sum_of_two_gaussians_lemma() {
        let mut rng = RngState::new(99, 0).rng();
        for _ in 0..3 {
            let a = 0.05 + 0.9 * rng.uniform();
            let b = 0.05 + 0.9 * rng.uniform();
            let n = 1_000_000;
            let (c1, c2) = ((a * (1.0 - b)).sqrt(), (1.0 - a).sqrt());
            let xs: Vec<f64> = (0..n).map(|_| c1 * rng.normal() + c2 * rng.normal()).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let target = 1.0 - a * b;
            // SE of a normal sample variance: target * sqrt(2/(n-1))
            let se = target * (2.0 / (n - 1) as f64).sqrt();
            assert!((var - target).abs() < 3.0 * se, "a={a} b={b} var={var} target={target}");
        }
    }

    proptest::proptest! {
        #[test]
        fn kl_nonnegative(
            mq in proptest::collection::vec(-5.0f64..5.0, 1..5),
            seed in 0u64..1000,
        ) {
            let d = mq.len();
            let mut rng = RngState::new(seed, 0).rng();
            let vq: Vec<f64> = (0..d).map(|_| 0.05 + 4.0 * rng.uniform()).collect();
            let mp: Vec<f64> = (0..d).map(|_| 4.0 * rng.uniform() - 2.0).collect();
            let vp: Vec<f64> = (0..d).map(|_| 0.05 + 4.0 * rng.uniform()).collect();
            let q = DiagGaussian::new(mq, vq).unwrap();
            let p = DiagGaussian::new(mp, vp).unwrap();
            proptest::prop_assert!(kl_closed_form(&q, &p).unwrap() >= 0.0);
            proptest::prop_assert!(kl_closed_form(&q, &q).unwrap() < 1e-12);
        }
    }

    #[test]
    fn kl_mc_agrees_with_closed_form_randomized() {
        let mut meta = RngState::new(1234, 9).rng();
        for case in 0..10 {
            let d = 1 + meta.below(4);
            let rand_vec = |r: &mut SimRng, lo: f64, hi: f64| -> Vec<f64> {
                (0..d).map(|_| lo + (hi - lo) * r.uniform()).collect()
            };
            let q = DiagGaussian::new(rand_vec(&mut meta, -1.0, 1.0), rand_vec(&mut meta, 0.3, 2.0)).unwrap();
            let p = DiagGaussian::new(rand_vec(&mut meta, -1.0, 1.0), rand_vec(&mut meta, 0.3, 2.0)).unwrap();
            let mut rng = RngState::new(77, case).rng();
            let (est, se) = kl_mc_with_error(&q, &p, 100_000, &mut rng).unwrap();
            let exact = kl_closed_form(&q, &p).unwrap();
            assert!((est - exact).abs() < 4.0 * se, "case {case}: {est} vs {exact} (se {se})");
        }
    }
}

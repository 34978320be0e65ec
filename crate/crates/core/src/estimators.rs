//! Monte-Carlo expectation and reparameterization-gradient estimators for
//! scalar Gaussian probes.
//!
//! These are standalone utilities; training computes its gradients through
//! [`crate::model`] directly.

use crate::error::{Error, Result};
use crate::rng::{RngState, SimRng};

/// A scalar test function `f` together with its derivative.
pub trait ScalarFunctionProbe {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
}

/// `f(x) = x²/2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HalfSquare;

impl ScalarFunctionProbe for HalfSquare {
    fn value(&self, x: f64) -> f64 {
        0.5 * x * x
    }

    fn derivative(&self, x: f64) -> f64 {
        x
    }
}

/// Sample mean of `f(x_m)` over `m` draws and its standard error
/// (sample standard deviation over `√m`).
pub fn mc_expectation<S, F>(mut sampler: S, f: F, m: usize, rng: RngState) -> Result<(f64, f64)>
where
    S: FnMut(&mut SimRng) -> f64,
    F: Fn(f64) -> f64,
{
    if m < 2 {
        return Err(Error::invalid("samples", format!("need at least 2, got {m}")));
    }
    let mut r = rng.rng();
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..m {
        let v = f(sampler(&mut r));
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    let var = m2 / (m - 1) as f64;
    Ok((mean, (var / m as f64).sqrt()))
}

/// Reparameterized gradient of `E[f(X)]`, `X = θ₁ + θ₂·Y`, `Y ~ N(0,1)`:
/// the average of `f'(x_m)·(1, y_m)`.
pub fn reparam_grad_with<P: ScalarFunctionProbe + ?Sized>(
    probe: &P,
    theta: [f64; 2],
    m: usize,
    rng: RngState,
) -> Result<[f64; 2]> {
    if m < 1 {
        return Err(Error::invalid("samples", "need at least 1"));
    }
    if !theta.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("theta", "must be finite"));
    }
    let mut r = rng.rng();
    let (mut g0, mut g1) = (0.0, 0.0);
    for _ in 0..m {
        let y = r.normal();
        let d = probe.derivative(theta[0] + theta[1] * y);
        g0 += d;
        g1 += d * y;
    }
    let n = m as f64;
    Ok([g0 / n, g1 / n])
}

/// Reparameterized gradient for `f(x) = x²/2`: the average of
/// `(θ₁ + θ₂y_m, y_m(θ₁ + θ₂y_m))`, whose expectation is `θ`.
pub fn reparam_grad(theta: [f64; 2], m: usize, rng: RngState) -> Result<[f64; 2]> {
    reparam_grad_with(&HalfSquare, theta, m, rng)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("points", "need two or more paired values"));
    }
    if x.iter().chain(y).any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::invalid("points", "log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

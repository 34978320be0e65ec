//! Forward (noising) process, its closed-form marginals and posterior, and
//! the toy data distribution it starts from.

use crate::error::{check_dim, Error, Result};
use crate::gaussian::DiagGaussian;
use crate::rng::SimRng;
use crate::schedules::Schedule;

/// One forward or reverse chain: `(t, x_t)` pairs with strictly monotone `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<(usize, Vec<f64>)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self { states: Vec::new() }
    }

    pub fn push(&mut self, t: usize, x: Vec<f64>) {
        debug_assert!(self.states.last().is_none_or(|(_, p)| p.len() == x.len()));
        self.states.push((t, x));
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Last recorded state.
    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(|(_, x)| x.as_slice())
    }

    /// State recorded at time `t`, if any.
    pub fn at(&self, t: usize) -> Option<&[f64]> {
        self.states
            .iter()
            .find(|(s, _)| *s == t)
            .map(|(_, x)| x.as_slice())
    }

    /// True when times are strictly monotone and all states share a dimension.
    pub fn is_well_formed(&self) -> bool {
        let dims_ok = self
            .states
            .windows(2)
            .all(|w| w[0].1.len() == w[1].1.len());
        let inc = self.states.windows(2).all(|w| w[0].0 < w[1].0);
        let dec = self.states.windows(2).all(|w| w[0].0 > w[1].0);
        dims_ok && (inc || dec)
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

/// Gaussian mixture used as the data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
    labels: Option<Vec<usize>>,
}

impl GmmSpec {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        vars: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weights", "need at least one component"));
        }
        check_dim(weights.len(), means.len())?;
        check_dim(weights.len(), vars.len())?;
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::invalid("weights", "must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("must sum to 1, sum is {total}")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::invalid("means", "dimension must be >= 1"));
        }
        let mut components = Vec::with_capacity(means.len());
        for (m, v) in means.into_iter().zip(vars) {
            check_dim(d, m.len())?;
            if v.iter().any(|x| *x <= 0.0) {
                return Err(Error::invalid("vars", "component variances must be > 0"));
            }
            components.push(DiagGaussian::new(m, v)?);
        }
        if let Some(l) = &labels {
            check_dim(components.len(), l.len())?;
        }
        Ok(Self {
            weights,
            components,
            labels,
        })
    }

    /// 1-D mixture `0.6·N(−2, 0.25) + 0.4·N(2, 0.25)` labelled `{0, 1}`.
    pub fn default_bimodal() -> Self {
        Self::new(
            vec![0.6, 0.4],
            vec![vec![-2.0], vec![2.0]],
            vec![vec![0.25], vec![0.25]],
            Some(vec![0, 1]),
        )
        .expect("default mixture is valid")
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Number of distinct classes (0 when unlabeled).
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Draw a component index by weight, then a point from it. The returned
    /// label is the component's class, or the component index when unlabeled.
    pub fn sample(&self, rng: &mut SimRng) -> (Vec<f64>, usize) {
        let k = self.pick_component(rng);
        let x = self.components[k].sample(rng);
        let label = self.labels.as_ref().map_or(k, |l| l[k]);
        (x, label)
    }

    fn pick_component(&self, rng: &mut SimRng) -> usize {
        if self.weights.len() == 1 {
            return 0;
        }
        let u = rng.uniform();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    /// `log Σ_k w_k·N(x; μ_k, v_k)` via log-sum-exp.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| Ok(w.ln() + c.log_pdf(x)?))
            .collect::<Result<_>>()?;
        Ok(log_sum_exp(&terms))
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| Ok(w.ln() + c.log_pdf(x)?))
            .collect::<Result<_>>()?;
        let lse = log_sum_exp(&terms);
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Draw from `q(x_t | x_{t−1}) = N(√α_t·x_{t−1}, β_t·I)`.
pub fn forward_step(x_prev: &[f64], t: usize, sched: &Schedule, rng: &mut SimRng) -> Result<Vec<f64>> {
    sched.check_t(t, 1)?;
    let (a, b) = (sched.alpha(t).sqrt(), sched.beta(t).sqrt());
    Ok(x_prev.iter().map(|x| a * x + b * rng.normal()).collect())
}

/// `q(x_t | x_0) = N(√ᾱ_t·x_0, (1 − ᾱ_t)·I)`; `t = 0` is the point mass at `x_0`.
pub fn marginal_q(x0: &[f64], t: usize, sched: &Schedule) -> Result<DiagGaussian> {
    sched.check_t(t, 0)?;
    let ab = sched.alpha_bar(t);
    let s = ab.sqrt();
    DiagGaussian::isotropic(x0.iter().map(|x| s * x).collect(), 1.0 - ab)
}

/// Direct draw `x_t = √ᾱ_t·x_0 + √(1 − ᾱ_t)·ε`, returning `(x_t, ε)`.
pub fn sample_xt(x0: &[f64], t: usize, sched: &Schedule, rng: &mut SimRng) -> Result<(Vec<f64>, Vec<f64>)> {
    sched.check_t(t, 1)?;
    let eps = rng.normal_vec(x0.len());
    let xt = noisy_from_eps(x0, &eps, t, sched);
    Ok((xt, eps))
}

pub(crate) fn noisy_from_eps(x0: &[f64], eps: &[f64], t: usize, sched: &Schedule) -> Vec<f64> {
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

/// Bayes posterior `q(x_{t−1} | x_t, x_0) = N(μ̃_t, β̃_t·I)`.
pub fn posterior_q(xt: &[f64], x0: &[f64], t: usize, sched: &Schedule) -> Result<DiagGaussian> {
    sched.check_t(t, 1)?;
    check_dim(xt.len(), x0.len())?;
    let (c0, ct) = posterior_coefficients(t, sched);
    let mean = x0.iter().zip(xt).map(|(a, b)| c0 * a + ct * b).collect();
    DiagGaussian::isotropic(mean, sched.beta_tilde(t))
}

/// Coefficients of `x_0` and `x_t` in the posterior mean μ̃_t.
pub fn posterior_coefficients(t: usize, sched: &Schedule) -> (f64, f64) {
    if t == 1 {
        // ᾱ₀ = 1: the posterior collapses onto x_0
        return (1.0, 0.0);
    }
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let denom = 1.0 - ab;
    (
        ab_prev.sqrt() * sched.beta(t) / denom,
        sched.alpha(t).sqrt() * (1.0 - ab_prev) / denom,
    )
}

/// Chain of `T` forward steps from `(0, x_0)`.
pub fn simulate_forward(x0: &[f64], sched: &Schedule, rng: &mut SimRng) -> Trajectory {
    let mut traj = Trajectory::new();
    traj.push(0, x0.to_vec());
    let mut x = x0.to_vec();
    for t in 1..=sched.steps() {
        x = forward_step(&x, t, sched, rng).expect("t in range");
        traj.push(t, x.clone());
    }
    traj
}

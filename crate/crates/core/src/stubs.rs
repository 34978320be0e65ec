//! Fixed ε-predictors for verification: they stand in for a trained network
//! when a test needs the exact answer.

use crate::error::{check_dim, Error, Result};
use crate::forward::{log_sum_exp, GmmSpec};
use crate::model::EpsModel;
use crate::schedules::Schedule;

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy)]
pub struct ZeroEps {
    pub dim: usize,
}

impl EpsModel for ZeroEps {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eps(&self, x: &[f64], t: usize, _label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        sched.check_t(t, 1)?;
        Ok(vec![0.0; self.dim])
    }
}

/// Returns the exact composite noise `(x_t − √ᾱ_t·x_0)/√(1 − ᾱ_t)` for a
/// known origin `x_0`.
#[derive(Debug, Clone)]
pub struct OracleEps {
    pub x0: Vec<f64>,
}

impl EpsModel for OracleEps {
    fn dim(&self) -> usize {
        self.x0.len()
    }

    fn eps(&self, x: &[f64], t: usize, _label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        check_dim(self.x0.len(), x.len())?;
        sched.check_t(t, 1)?;
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x.iter().zip(&self.x0).map(|(xt, x0)| (xt - a * x0) / b).collect())
    }
}

/// Returns a fixed vector regardless of input.
#[derive(Debug, Clone)]
pub struct ConstEps {
    pub value: Vec<f64>,
}

impl EpsModel for ConstEps {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eps(&self, x: &[f64], t: usize, _label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        check_dim(self.value.len(), x.len())?;
        sched.check_t(t, 1)?;
        Ok(self.value.clone())
    }
}

/// Bayes-optimal noise prediction for data drawn from a Gaussian mixture:
/// `ε* = −√(1 − ᾱ_t)·∇ log q_t(x_t)` with `q_t` the exact noisy marginal.
/// A label restricts the mixture to that class's components.
#[derive(Debug, Clone)]
pub struct MixtureEps {
    pub spec: GmmSpec,
}

impl EpsModel for MixtureEps {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eps(&self, x: &[f64], t: usize, label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        check_dim(self.spec.dim(), x.len())?;
        sched.check_t(t, 1)?;
        let ab = sched.alpha_bar(t);
        let a = ab.sqrt();
        let mut logw = Vec::new();
        let mut pulls = Vec::new();
        for (k, (c, w)) in self.spec.components().iter().zip(self.spec.weights()).enumerate() {
            if let (Some(y), Some(labels)) = (label, self.spec.labels()) {
                if labels[k] != y {
                    continue;
                }
            }
            let mut lw = w.ln();
            let mut pull = Vec::with_capacity(x.len());
            for ((xi, m), v) in x.iter().zip(c.mean()).zip(c.var()) {
                let var = ab * v + (1.0 - ab);
                let d = xi - a * m;
                lw -= 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
                pull.push(d / var);
            }
            logw.push(lw);
            pulls.push(pull);
        }
        if logw.is_empty() {
            return Err(Error::LabelOutOfRange {
                label: label.unwrap_or(0),
                classes: self.spec.num_classes(),
            });
        }
        let norm = log_sum_exp(&logw);
        let scale = (1.0 - ab).sqrt();
        let mut eps = vec![0.0; x.len()];
        for (lw, pull) in logw.iter().zip(&pulls) {
            let r = (lw - norm).exp();
            for (e, p) in eps.iter_mut().zip(pull) {
                *e += scale * r * p;
            }
        }
        Ok(eps)
    }
}

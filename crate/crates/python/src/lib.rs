//! Python bindings. Seeds map onto the same RNG streams the command-line tool
//! uses, so a model initialised, trained and sampled here matches the CLI run
//! with the same seed bit for bit.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use difflab::estimators;
use difflab::evaluation;
use difflab::forward as fwd;
use difflab::gaussian::{kl_closed_form, kl_mc_with_error};
use difflab::persistence::{self, Checkpoint, Provenance, StoredModel};
use difflab::samplers::final_states;
use difflab::training::{self, LossVariant, LrSchedule, Optimizer};
use difflab::{
    Arch, Conditioning, DiagGaussian, GmmSpec, GuidanceConfig, GuidanceMode, RngState, SamplerConfig,
    SamplerKind, SigmaPolicy, TrainConfig,
};

fn err(e: difflab::Error) -> PyErr {
    match e {
        difflab::Error::Io(_) | difflab::Error::File { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for difflab::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(name = "Schedule", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchedule(difflab::Schedule);

#[pymethods]
impl PySchedule {
    #[staticmethod]
    #[pyo3(signature = (steps=1000, beta_start=1e-4, beta_end=0.02))]
    fn linear(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        difflab::Schedule::linear(steps, beta_start, beta_end).py().map(Self)
    }

    #[staticmethod]
    #[pyo3(signature = (steps=1000, offset=0.008))]
    fn cosine(steps: usize, offset: f64) -> PyResult<Self> {
        difflab::Schedule::cosine(steps, offset).py().map(Self)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        self.0.check_t(t, 1).py()?;
        Ok(self.0.beta(t))
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.0.check_t(t, 0).py()?;
        Ok(self.0.alpha_bar(t))
    }

    fn beta_tilde(&self, t: usize) -> PyResult<f64> {
        self.0.check_t(t, 1).py()?;
        Ok(self.0.beta_tilde(t))
    }

    /// `[β_1, …, β_T]`.
    fn betas(&self) -> Vec<f64> {
        self.0.betas().to_vec()
    }

    /// `[ᾱ_0, …, ᾱ_T]` with `ᾱ_0 = 1`.
    fn alpha_bars(&self) -> Vec<f64> {
        self.0.alpha_bars().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Schedule({}, T={})", self.0.kind(), self.0.steps())
    }
}

#[pyclass(name = "GaussianMixture", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMixture(GmmSpec);

#[pymethods]
impl PyMixture {
    #[new]
    #[pyo3(signature = (weights, means, variances, labels=None))]
    fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> PyResult<Self> {
        GmmSpec::new(weights, means, variances, labels).py().map(Self)
    }

    /// `0.6·N(−2, 0.25) + 0.4·N(+2, 0.25)`, labelled by component.
    #[staticmethod]
    fn bimodal() -> Self {
        Self(GmmSpec::default_bimodal())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = RngState::new(seed, 7).rng();
        (0..n).map(|_| self.0.sample(&mut r).0).collect()
    }

    fn log_pdf(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.log_pdf(&x).py()
    }
}

fn mixture_or_default(data: Option<&PyMixture>) -> GmmSpec {
    data.map(|d| d.0.clone()).unwrap_or_else(GmmSpec::default_bimodal)
}

#[allow(clippy::too_many_arguments)]
fn train_config(
    steps: usize,
    batch: usize,
    lr: f64,
    optimizer: &str,
    lr_schedule: &str,
    loss: &str,
    p_drop: f64,
    eval_interval: usize,
) -> PyResult<TrainConfig> {
    let bad = |what: &str, v: &str| PyValueError::new_err(format!("unknown {what} {v:?}"));
    Ok(TrainConfig {
        steps,
        batch_size: batch,
        lr,
        p_drop,
        eval_interval,
        loss: match loss {
            "simple" => LossVariant::Simple,
            "weighted" => LossVariant::Weighted,
            v => return Err(bad("loss", v)),
        },
        optimizer: match optimizer {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            "momentum" => Optimizer::Momentum(0.9),
            v => return Err(bad("optimizer", v)),
        },
        lr_schedule: match lr_schedule {
            "cosine" => LrSchedule::Cosine,
            "constant" => LrSchedule::Constant,
            v => return Err(bad("lr schedule", v)),
        },
    })
}

#[pyclass(name = "NoisePredictor", skip_from_py_object)]
#[derive(Clone)]
struct PyNoisePredictor(difflab::NoisePredictor);

#[pymethods]
impl PyNoisePredictor {
    /// Fresh network; `classes` makes it label-conditional.
    #[new]
    #[pyo3(signature = (data_dim, seed, hidden=vec![64, 64], classes=None))]
    fn new(data_dim: usize, seed: u64, hidden: Vec<usize>, classes: Option<usize>) -> PyResult<Self> {
        let cond = classes.map_or(Conditioning::None, Conditioning::Classes);
        let arch = Arch::new(data_dim, hidden);
        difflab::NoisePredictor::init(arch, cond, &mut RngState::new(seed, 0).rng())
            .py()
            .map(Self)
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.0.params().to_vec()
    }

    #[getter]
    fn conditional(&self) -> bool {
        self.0.is_conditional()
    }

    #[pyo3(signature = (x, t, schedule, label=None))]
    fn predict_eps(&self, x: Vec<f64>, t: usize, schedule: &PySchedule, label: Option<usize>) -> PyResult<Vec<f64>> {
        self.0.predict_eps(&x, t, label, &schedule.0).py()
    }

    /// Train in place and return the loss curve as `(step, loss)` pairs.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (schedule, seed, data=None, steps=20000, batch=64, lr=0.01, optimizer="adam",
                        lr_schedule="cosine", loss="simple", p_drop=0.1, eval_interval=500))]
    fn train(
        &mut self,
        py: Python<'_>,
        schedule: &PySchedule,
        seed: u64,
        data: Option<&PyMixture>,
        steps: usize,
        batch: usize,
        lr: f64,
        optimizer: &str,
        lr_schedule: &str,
        loss: &str,
        p_drop: f64,
        eval_interval: usize,
    ) -> PyResult<Vec<(usize, f64)>> {
        let cfg = train_config(steps, batch, lr, optimizer, lr_schedule, loss, p_drop, eval_interval)?;
        let data = mixture_or_default(data);
        let model = &mut self.0;
        let rep = py
            .detach(|| training::train(model, &data, &schedule.0, &cfg, RngState::new(seed, 1)))
            .py()?;
        Ok(rep.curve)
    }

    /// Draw final samples `x_0`. `sampler` is `"ddpm"` or `"ddim"`; `sigma`
    /// (DDIM only) is `"zero"`, `"ddpm"` or an explicit list of length `T`.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (schedule, seed, chains=1000, sampler="ddpm", sigma=None, x_t=None,
                        guidance="none", scale=0.0, label=None, classifier=None))]
    fn sample(
        &self,
        py: Python<'_>,
        schedule: &PySchedule,
        seed: u64,
        chains: usize,
        sampler: &str,
        sigma: Option<Bound<'_, PyAny>>,
        x_t: Option<Vec<f64>>,
        guidance: &str,
        scale: f64,
        label: Option<usize>,
        classifier: Option<&PyClassifier>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let policy = match &sigma {
            None => SigmaPolicy::Zero,
            Some(s) => match s.extract::<String>() {
                Ok(name) if name == "zero" => SigmaPolicy::Zero,
                Ok(name) if name == "ddpm" => SigmaPolicy::DdpmEquivalent,
                Ok(name) => return Err(PyValueError::new_err(format!("unknown sigma {name:?}"))),
                Err(_) => SigmaPolicy::Explicit(s.extract::<Vec<f64>>()?),
            },
        };
        let kind = match sampler {
            "ddpm" => SamplerKind::Ddpm,
            "ddim" => SamplerKind::Ddim(policy),
            v => return Err(PyValueError::new_err(format!("unknown sampler {v:?}"))),
        };
        let mode: GuidanceMode = guidance.parse().map_err(|e: difflab::Error| PyValueError::new_err(e.to_string()))?;
        let cfg = SamplerConfig {
            kind,
            record: false,
            chains,
            initial: x_t,
        };
        let g = GuidanceConfig { mode, scale, label };
        let c = classifier.map(|c| &c.0);
        let model = &self.0;
        let sched = &schedule.0;
        let trajs = py
            .detach(|| difflab::guidance::guided_sample(model, &cfg, &g, c, sched, RngState::new(seed, 2)))
            .py()?;
        Ok(final_states(&trajs))
    }

    /// Variational bound terms `(name, t, nats)` for one data point.
    #[pyo3(signature = (schedule, x0, seed, samples=100))]
    fn vlb(&self, schedule: &PySchedule, x0: Vec<f64>, seed: u64, samples: usize) -> PyResult<Vec<(String, usize, f64)>> {
        let rep = difflab::losses::vlb_estimate(&self.0, &x0, &schedule.0, samples, &mut RngState::new(seed, 4).rng()).py()?;
        Ok(rep.rows())
    }

    #[pyo3(signature = (path, schedule, seed=0, train_steps=0))]
    fn save(&self, path: PathBuf, schedule: &PySchedule, seed: u64, train_steps: usize) -> PyResult<()> {
        save(StoredModel::Eps(self.0.clone()), path, schedule, seed, train_steps)
    }

    /// Load `(model, schedule)` from a checkpoint.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, PySchedule)> {
        let ck = persistence::load_checkpoint(&path).py()?;
        match ck.model {
            StoredModel::Eps(m) => Ok((Self(m), PySchedule(ck.schedule))),
            StoredModel::Classifier(_) => Err(PyValueError::new_err(format!("{}: holds a classifier", path.display()))),
        }
    }
}

#[pyclass(name = "Classifier", skip_from_py_object)]
#[derive(Clone)]
struct PyClassifier(difflab::Classifier);

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (data_dim, classes, seed, hidden=vec![64, 64]))]
    fn new(data_dim: usize, classes: usize, seed: u64, hidden: Vec<usize>) -> PyResult<Self> {
        difflab::Classifier::init(Arch::new(data_dim, hidden), classes, &mut RngState::new(seed, 0).rng())
            .py()
            .map(Self)
    }

    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (schedule, seed, data=None, steps=20000, batch=64, lr=0.01, optimizer="adam",
                        lr_schedule="cosine", eval_interval=500))]
    fn train(
        &mut self,
        py: Python<'_>,
        schedule: &PySchedule,
        seed: u64,
        data: Option<&PyMixture>,
        steps: usize,
        batch: usize,
        lr: f64,
        optimizer: &str,
        lr_schedule: &str,
        eval_interval: usize,
    ) -> PyResult<Vec<(usize, f64)>> {
        let cfg = train_config(steps, batch, lr, optimizer, lr_schedule, "simple", 0.0, eval_interval)?;
        let data = mixture_or_default(data);
        let c = &mut self.0;
        let rep = py
            .detach(|| training::train_classifier(c, &data, &schedule.0, &cfg, RngState::new(seed, 1)))
            .py()?;
        Ok(rep.curve)
    }

    fn log_probs(&self, x: Vec<f64>, t: usize, schedule: &PySchedule) -> PyResult<Vec<f64>> {
        self.0.log_probs(&x, t, &schedule.0).py()
    }

    fn grad_x(&self, x: Vec<f64>, t: usize, y: usize, schedule: &PySchedule) -> PyResult<Vec<f64>> {
        self.0.grad_x(&x, t, y, &schedule.0).py()
    }

    #[pyo3(signature = (path, schedule, seed=0, train_steps=0))]
    fn save(&self, path: PathBuf, schedule: &PySchedule, seed: u64, train_steps: usize) -> PyResult<()> {
        save(StoredModel::Classifier(self.0.clone()), path, schedule, seed, train_steps)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, PySchedule)> {
        let ck = persistence::load_checkpoint(&path).py()?;
        match ck.model {
            StoredModel::Classifier(c) => Ok((Self(c), PySchedule(ck.schedule))),
            StoredModel::Eps(_) => Err(PyValueError::new_err(format!("{}: holds a noise predictor", path.display()))),
        }
    }
}

fn save(model: StoredModel, path: PathBuf, schedule: &PySchedule, seed: u64, train_steps: usize) -> PyResult<()> {
    let ck = Checkpoint {
        model,
        schedule: schedule.0.clone(),
        provenance: Provenance { seed, train_steps },
        comments: vec!["written from python".into()],
    };
    persistence::save_checkpoint(&ck, &path).py()
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
#[pyfunction]
fn kl(q_mean: Vec<f64>, q_var: Vec<f64>, p_mean: Vec<f64>, p_var: Vec<f64>) -> PyResult<f64> {
    let q = DiagGaussian::new(q_mean, q_var).py()?;
    let p = DiagGaussian::new(p_mean, p_var).py()?;
    kl_closed_form(&q, &p).py()
}

/// Monte-Carlo `KL(q ‖ p)` with its standard error.
#[pyfunction]
fn kl_mc(q_mean: Vec<f64>, q_var: Vec<f64>, p_mean: Vec<f64>, p_var: Vec<f64>, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let q = DiagGaussian::new(q_mean, q_var).py()?;
    let p = DiagGaussian::new(p_mean, p_var).py()?;
    kl_mc_with_error(&q, &p, samples, &mut RngState::new(seed, 5).rng()).py()
}

/// Draw `(x_t, ε)` from `q(x_t | x_0)`.
#[pyfunction]
fn sample_xt(x0: Vec<f64>, t: usize, schedule: &PySchedule, seed: u64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    fwd::sample_xt(&x0, t, &schedule.0, &mut RngState::new(seed, 3).rng()).py()
}

/// Mean and variance of `q(x_t | x_0)`.
#[pyfunction]
fn marginal(x0: Vec<f64>, t: usize, schedule: &PySchedule) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = fwd::marginal_q(&x0, t, &schedule.0).py()?;
    Ok((g.mean().to_vec(), g.var().to_vec()))
}

/// Mean and variance of `q(x_{t−1} | x_t, x_0)`.
#[pyfunction]
fn posterior(xt: Vec<f64>, x0: Vec<f64>, t: usize, schedule: &PySchedule) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = fwd::posterior_q(&xt, &x0, t, &schedule.0).py()?;
    Ok((g.mean().to_vec(), g.var().to_vec()))
}

/// Run the forward chain from `x0`; returns `x_0 … x_T`.
#[pyfunction]
fn simulate_forward(x0: Vec<f64>, schedule: &PySchedule, seed: u64) -> Vec<Vec<f64>> {
    let traj = fwd::simulate_forward(&x0, &schedule.0, &mut RngState::new(seed, 3).fork(0).rng());
    (0..=schedule.0.steps())
        .map(|t| traj.at(t).expect("full trajectory").to_vec())
        .collect()
}

/// Reparameterised gradient of `E[x²/2]` under `N(θ₁, θ₂²)`.
#[pyfunction]
fn reparam_grad(theta: [f64; 2], samples: usize, seed: u64) -> PyResult<[f64; 2]> {
    estimators::reparam_grad(theta, samples, RngState::new(seed, 6)).py()
}

#[pyfunction]
fn loglog_slope(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    estimators::loglog_slope(&x, &y).py()
}

#[pyfunction]
fn wasserstein1(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    evaluation::wasserstein1_1d(&a, &b).py()
}

/// Fraction of samples whose nearest component mean is each component.
#[pyfunction]
fn mode_masses(samples: Vec<Vec<f64>>, data: &PyMixture) -> PyResult<Vec<f64>> {
    evaluation::mode_masses(&samples, &data.0).py()
}

#[pymodule]
fn difflab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyMixture>()?;
    m.add_class::<PyNoisePredictor>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(kl, m)?)?;
    m.add_function(wrap_pyfunction!(kl_mc, m)?)?;
    m.add_function(wrap_pyfunction!(sample_xt, m)?)?;
    m.add_function(wrap_pyfunction!(marginal, m)?)?;
    m.add_function(wrap_pyfunction!(posterior, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_forward, m)?)?;
    m.add_function(wrap_pyfunction!(reparam_grad, m)?)?;
    m.add_function(wrap_pyfunction!(loglog_slope, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(mode_masses, m)?)?;
    Ok(())
}

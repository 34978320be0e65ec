//! Small fully connected networks with hand-written backpropagation.
//!
//! [`NoisePredictor`] maps `(x_t, t[, y])` to a noise estimate; [`Classifier`]
//! maps `(x_t, t)` to class log-probabilities. Both share [`Mlp`]: tanh hidden
//! layers, a linear output layer, parameters in one flat array laid out layer
//! by layer as `W` (row-major, `out × in`) followed by `b`.

use std::f64::consts::TAU;

use crate::error::{check_dim, Error, Result};
use crate::rng::SimRng;
use crate::schedules::Schedule;

/// Number of time-encoding features appended to every input.
pub const TIME_FEATURES: usize = 4;

/// Default hidden widths.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// Hidden-layer nonlinearity. Only tanh is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// `(t/T, sin(2πt/T), cos(2πt/T), √(1 − ᾱ_t))`.
pub fn time_encoding(t: usize, sched: &Schedule) -> [f64; TIME_FEATURES] {
    let u = t as f64 / sched.steps() as f64;
    [
        u,
        (TAU * u).sin(),
        (TAU * u).cos(),
        (1.0 - sched.alpha_bar(t)).sqrt(),
    ]
}

/// Multilayer perceptron over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Parameter count for full layer widths `[in, h1, ..., out]`.
    pub fn param_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid("arch", format!("widths must be >= 1 with at least input and output, got {widths:?}")));
        }
        let n = Self::param_count(&widths);
        Ok(Self {
            widths,
            params: vec![0.0; n],
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(widths: Vec<usize>, rng: &mut SimRng) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        let mut off = 0;
        for w in m.widths.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            for p in &mut m.params[off..off + fan_in * fan_out] {
                *p = scale * (2.0 * rng.uniform() - 1.0);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(m)
    }

    pub fn from_params(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        check_dim(m.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("params", "must be finite"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        self.forward_traced(input, &mut trace);
        trace.acts.pop().unwrap()
    }

    /// Forward pass keeping every layer's activation; the output is the last.
    pub fn forward_traced<'a>(&self, input: &[f64], trace: &'a mut Trace) -> &'a [f64] {
        debug_assert_eq!(input.len(), self.input_dim());
        trace.acts.clear();
        trace.acts.push(input.to_vec());
        let layers = self.widths.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let a = &trace.acts[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            trace.acts.push(z);
            off += n_in * n_out + n_out;
        }
        trace.acts.last().unwrap()
    }

    /// Backpropagate `grad_out = ∂L/∂output` through the traced pass.
    /// Parameter gradients are added into `grad_params`; returns `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad_params.len(), self.params.len());
        let layers = self.widths.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.widths[l] * self.widths[l + 1] + self.widths[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = offsets[l];
            let a = &trace.acts[l];
            {
                let (gw, gb) = grad_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] += d;
                    for (g, ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                        *g += d * ai;
                    }
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                // a = tanh(z) for hidden layers
                for (p, ai) in prev.iter_mut().zip(a) {
                    *p *= 1.0 - ai * ai;
                }
            }
            delta = prev;
        }
        delta
    }
}

/// Whether the noise predictor takes a class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    None,
    /// `K` classes plus a reserved null slot at index `K`.
    Classes(usize),
}

impl Conditioning {
    fn extra_inputs(&self) -> usize {
        match self {
            Conditioning::None => 0,
            Conditioning::Classes(k) => k + 1,
        }
    }
}

/// Architecture descriptor shared by both model kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Arch {
    pub fn new(data_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            data_dim,
            hidden,
            activation: Activation::Tanh,
        }
    }

    fn widths(&self, extra_in: usize, out: usize) -> Vec<usize> {
        let mut w = vec![self.data_dim + TIME_FEATURES + extra_in];
        w.extend(&self.hidden);
        w.push(out);
        w
    }
}

/// Anything that predicts ε from `(x_t, t, y)`.
pub trait EpsModel {
    fn dim(&self) -> usize;
    fn eps(&self, x: &[f64], t: usize, label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>>;
}

/// Noise predictor ε̂_θ(x_t, t[, y]).
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor {
    arch: Arch,
    conditioning: Conditioning,
    net: Mlp,
}

/// One training example for [`NoisePredictor::loss_and_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub label: Option<usize>,
    pub target: Vec<f64>,
    /// Per-item loss weight; 1 for the unweighted objective.
    pub weight: f64,
}

impl NoisePredictor {
    pub fn init(arch: Arch, conditioning: Conditioning, rng: &mut SimRng) -> Result<Self> {
        Self::validate(&arch, conditioning)?;
        let widths = arch.widths(conditioning.extra_inputs(), arch.data_dim);
        let net = Mlp::init(widths, rng)?;
        Ok(Self {
            arch,
            conditioning,
            net,
        })
    }

    pub fn from_params(arch: Arch, conditioning: Conditioning, params: Vec<f64>) -> Result<Self> {
        Self::validate(&arch, conditioning)?;
        let widths = arch.widths(conditioning.extra_inputs(), arch.data_dim);
        let net = Mlp::from_params(widths, params)?;
        Ok(Self {
            arch,
            conditioning,
            net,
        })
    }

    fn validate(arch: &Arch, conditioning: Conditioning) -> Result<()> {
        if arch.data_dim == 0 {
            return Err(Error::invalid("arch", "data dimension must be >= 1"));
        }
        if let Conditioning::Classes(0) = conditioning {
            return Err(Error::invalid("conditioning", "class count must be >= 1"));
        }
        Ok(())
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self.conditioning, Conditioning::Classes(_))
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn features(&self, x: &[f64], t: usize, label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        check_dim(self.arch.data_dim, x.len())?;
        sched.check_t(t, 1)?;
        let mut f = Vec::with_capacity(self.net.input_dim());
        f.extend_from_slice(x);
        f.extend_from_slice(&time_encoding(t, sched));
        match (self.conditioning, label) {
            (Conditioning::None, None) => {}
            (Conditioning::None, Some(_)) => {
                return Err(Error::Conditioning(
                    "unconditional model was given a class label".into(),
                ))
            }
            (Conditioning::Classes(k), label) => {
                let slot = match label {
                    Some(y) if y >= k => return Err(Error::LabelOutOfRange { label: y, classes: k }),
                    Some(y) => y,
                    None => k,
                };
                let start = f.len();
                f.resize(start + k + 1, 0.0);
                f[start + slot] = 1.0;
            }
        }
        Ok(f)
    }

    /// Deterministic forward pass ε̂_θ(x, t, y). `label = None` on a
    /// conditional model selects the null slot.
    pub fn predict_eps(&self, x: &[f64], t: usize, label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.features(x, t, label, sched)?))
    }

    /// Batch mean of `weight·‖ε̂ − ε‖²` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_grad(&self, batch: &[TrainItem], sched: &Schedule) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must not be empty"));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.net.params().len()];
        let mut loss = 0.0;
        let mut trace = Trace::default();
        for item in batch {
            check_dim(self.arch.data_dim, item.target.len())?;
            let input = self.features(&item.x_t, item.t, item.label, sched)?;
            let out = self.net.forward_traced(&input, &mut trace);
            let mut g = Vec::with_capacity(out.len());
            for (o, e) in out.iter().zip(&item.target) {
                let r = o - e;
                loss += item.weight * r * r / n;
                g.push(2.0 * item.weight * r / n);
            }
            self.net.backward(&trace, &g, &mut grad);
        }
        Ok((loss, grad))
    }
}

impl EpsModel for NoisePredictor {
    fn dim(&self) -> usize {
        self.arch.data_dim
    }

    fn eps(&self, x: &[f64], t: usize, label: Option<usize>, sched: &Schedule) -> Result<Vec<f64>> {
        self.predict_eps(x, t, label, sched)
    }
}

/// Noisy-input classifier p_ξ(y | x_t, t) with a log-softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: Arch,
    classes: usize,
    net: Mlp,
}

impl Classifier {
    pub fn init(arch: Arch, classes: usize, rng: &mut SimRng) -> Result<Self> {
        Self::validate(&arch, classes)?;
        let net = Mlp::init(arch.widths(0, classes), rng)?;
        Ok(Self { arch, classes, net })
    }

    pub fn from_params(arch: Arch, classes: usize, params: Vec<f64>) -> Result<Self> {
        Self::validate(&arch, classes)?;
        let net = Mlp::from_params(arch.widths(0, classes), params)?;
        Ok(Self { arch, classes, net })
    }

    fn validate(arch: &Arch, classes: usize) -> Result<()> {
        if arch.data_dim == 0 {
            return Err(Error::invalid("arch", "data dimension must be >= 1"));
        }
        if classes < 1 {
            return Err(Error::invalid("classes", "must be >= 1"));
        }
        Ok(())
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn features(&self, x: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
        check_dim(self.arch.data_dim, x.len())?;
        sched.check_t(t, 1)?;
        let mut f = x.to_vec();
        f.extend_from_slice(&time_encoding(t, sched));
        Ok(f)
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// `log p_ξ(· | x, t)` for every class.
    pub fn log_probs(&self, x: &[f64], t: usize, sched: &Schedule) -> Result<Vec<f64>> {
        let logits = self.net.forward(&self.features(x, t, sched)?);
        Ok(log_softmax(&logits))
    }

    /// `∇_x log p_ξ(y | x, t)`.
    pub fn grad_x(&self, x: &[f64], t: usize, y: usize, sched: &Schedule) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let input = self.features(x, t, sched)?;
        let mut trace = Trace::default();
        let logits = self.net.forward_traced(&input, &mut trace).to_vec();
        let probs: Vec<f64> = log_softmax(&logits).iter().map(|l| l.exp()).collect();
        let g: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, p)| if k == y { 1.0 - p } else { -p })
            .collect();
        let mut scratch = vec![0.0; self.net.params().len()];
        let gin = self.net.backward(&trace, &g, &mut scratch);
        Ok(gin[..self.arch.data_dim].to_vec())
    }

    /// Mean negative log-likelihood over `(x_t, t, y)` examples and its
    /// parameter gradient.
    pub fn nll_and_grad(&self, batch: &[(Vec<f64>, usize, usize)], sched: &Schedule) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must not be empty"));
        }
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.net.params().len()];
        let mut loss = 0.0;
        let mut trace = Trace::default();
        for (x, t, y) in batch {
            self.check_label(*y)?;
            let input = self.features(x, *t, sched)?;
            let logits = self.net.forward_traced(&input, &mut trace);
            let lp = log_softmax(logits);
            loss -= lp[*y] / n;
            let g: Vec<f64> = lp
                .iter()
                .enumerate()
                .map(|(k, l)| (l.exp() - if k == *y { 1.0 } else { 0.0 }) / n)
                .collect();
            self.net.backward(&trace, &g, &mut grad);
        }
        Ok((loss, grad))
    }
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = crate::forward::log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

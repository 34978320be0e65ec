//! Stochastic-gradient training of noise predictors and noisy classifiers.
//!
//! Each step draws `x_0 ~ p_data`, `t ~ U{1..T}` and `(x_t, ε)` from the
//! forward marginal, then moves the parameters against the gradient of the
//! batch-mean squared noise error.

use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{sample_xt, GmmSpec};
use crate::losses::eps_loss_weight;
use crate::model::{Classifier, Conditioning, NoisePredictor, TrainItem};
use crate::rng::{RngState, SimRng};
use crate::schedules::Schedule;

pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_P_DROP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Unweighted `‖ε̂ − ε‖²` over `t ∈ 1..=T`.
    Simple,
    /// ε-loss with its bound weight; `t` drawn from `2..=T`.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Momentum(f64),
    /// Adam with the usual `(β₁, β₂, ε) = (0.9, 0.999, 1e-8)`.
    Adam,
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from 1 at the first step to 0 after the last.
    Cosine,
}

impl LrSchedule {
    fn factor(&self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let frac = (step - 1) as f64 / steps as f64;
                0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing a label with the null label.
    pub p_drop: f64,
    pub eval_interval: usize,
    pub loss: LossVariant,
    pub optimizer: Optimizer,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: DEFAULT_BATCH,
            lr: 0.01,
            p_drop: DEFAULT_P_DROP,
            eval_interval: 500,
            loss: LossVariant::Simple,
            optimizer: Optimizer::Adam,
            lr_schedule: LrSchedule::Cosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::invalid("batch", "must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", format!("must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::invalid("p_drop", format!("must lie in [0, 1], got {}", self.p_drop)));
        }
        if self.eval_interval < 1 {
            return Err(Error::invalid("eval_interval", "must be >= 1"));
        }
        if let Optimizer::Momentum(m) = self.optimizer {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::invalid("momentum", format!("must lie in [0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(step, mean loss since the previous entry)`; step 0 is the loss of a
    /// probe batch before any update.
    pub curve: Vec<(usize, f64)>,
    /// SHA-256 of the final parameters' little-endian bytes.
    pub checksum: String,
    pub wall_seconds: f64,
}

/// Hex SHA-256 of a parameter vector.
pub fn params_checksum(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn draw_t(sched: &Schedule, loss: LossVariant, rng: &mut SimRng) -> usize {
    let steps = sched.steps();
    match loss {
        LossVariant::Weighted if steps >= 2 => 2 + rng.below(steps - 1),
        _ => 1 + rng.below(steps),
    }
}

/// Draw one training batch exactly as [`train`] does.
pub fn draw_batch(
    conditioning: Conditioning,
    data: &GmmSpec,
    sched: &Schedule,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<Vec<TrainItem>> {
    (0..cfg.batch_size)
        .map(|_| {
            let (x0, label) = data.sample(rng);
            let t = draw_t(sched, cfg.loss, rng);
            let (x_t, target) = sample_xt(&x0, t, sched, rng)?;
            let label = match conditioning {
                Conditioning::None => None,
                Conditioning::Classes(_) => {
                    let drop = rng.uniform() < cfg.p_drop;
                    (!drop).then_some(label)
                }
            };
            let weight = match cfg.loss {
                LossVariant::Simple => 1.0,
                LossVariant::Weighted if t >= 2 => eps_loss_weight(t, sched)?,
                LossVariant::Weighted => 1.0,
            };
            Ok(TrainItem {
                x_t,
                t,
                label,
                target,
                weight,
            })
        })
        .collect()
}

/// Parameter update rule with its state.
enum Stepper {
    Sgd { lr: f64 },
    Momentum { lr: f64, m: f64, v: Vec<f64> },
    Adam { lr: f64, t: i32, m: Vec<f64>, v: Vec<f64> },
}

impl Stepper {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        let lr = cfg.lr;
        match cfg.optimizer {
            Optimizer::Sgd => Stepper::Sgd { lr },
            Optimizer::Momentum(m) => Stepper::Momentum { lr, m, v: vec![0.0; n] },
            Optimizer::Adam => Stepper::Adam { lr, t: 0, m: vec![0.0; n], v: vec![0.0; n] },
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], factor: f64) {
        match self {
            Stepper::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= factor * *lr * g;
                }
            }
            Stepper::Momentum { lr, m, v } => {
                for ((p, g), vi) in params.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *vi = *m * *vi + g;
                    *p -= factor * *lr * *vi;
                }
            }
            Stepper::Adam { lr, t, m, v } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for (((p, g), mi), vi) in params.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = B1 * *mi + (1.0 - B1) * g;
                    *vi = B2 * *vi + (1.0 - B2) * g * g;
                    *p -= factor * *lr * (*mi / c1) / ((*vi / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

struct Curve {
    points: Vec<(usize, f64)>,
    window_sum: f64,
    window_len: usize,
}

impl Curve {
    fn new(initial: f64) -> Self {
        Self {
            points: vec![(0, initial)],
            window_sum: 0.0,
            window_len: 0,
        }
    }

    fn record(&mut self, step: usize, loss: f64, interval: usize, last: bool) {
        self.window_sum += loss;
        self.window_len += 1;
        if step.is_multiple_of(interval) || last {
            self.points.push((step, self.window_sum / self.window_len as f64));
            self.window_sum = 0.0;
            self.window_len = 0;
        }
    }
}

/// Train `model` in place on draws from `data`.
pub fn train(
    model: &mut NoisePredictor,
    data: &GmmSpec,
    sched: &Schedule,
    cfg: &TrainConfig,
    rng: RngState,
) -> Result<TrainReport> {
    cfg.validate()?;
    if let Conditioning::Classes(k) = model.conditioning() {
        if !data.is_labeled() {
            return Err(Error::Conditioning("conditional training needs labeled data".into()));
        }
        if data.num_classes() > k {
            return Err(Error::Conditioning(format!(
                "data has {} classes but the model has {k}",
                data.num_classes()
            )));
        }
    }
    if data.dim() != model.arch().data_dim {
        return Err(Error::DimensionMismatch {
            expected: model.arch().data_dim,
            got: data.dim(),
        });
    }
    let start = Instant::now();
    let conditioning = model.conditioning();

    let probe = draw_batch(conditioning, data, sched, cfg, &mut rng.fork(u64::MAX).rng())?;
    let (probe_loss, _) = model.loss_and_grad(&probe, sched)?;
    let mut curve = Curve::new(probe_loss);

    let mut stream = rng.rng();
    let mut stepper = Stepper::new(cfg, model.params().len());
    for step in 1..=cfg.steps {
        let batch = draw_batch(conditioning, data, sched, cfg, &mut stream)?;
        let (loss, grad) = model.loss_and_grad(&batch, sched)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        stepper.apply(model.params_mut(), &grad, cfg.lr_schedule.factor(step, cfg.steps));
        curve.record(step, loss, cfg.eval_interval, step == cfg.steps);
    }
    Ok(TrainReport {
        curve: curve.points,
        checksum: params_checksum(model.params()),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Draw one classifier batch of `(x_t, t, y)`.
pub fn draw_classifier_batch(
    data: &GmmSpec,
    sched: &Schedule,
    cfg: &TrainConfig,
    rng: &mut SimRng,
) -> Result<Vec<(Vec<f64>, usize, usize)>> {
    (0..cfg.batch_size)
        .map(|_| {
            let (x0, label) = data.sample(rng);
            let t = draw_t(sched, LossVariant::Simple, rng);
            let (x_t, _) = sample_xt(&x0, t, sched, rng)?;
            Ok((x_t, t, label))
        })
        .collect()
}

/// Train a noisy-input classifier on `−log p_ξ(y | x_t, t)`.
pub fn train_classifier(
    classifier: &mut Classifier,
    data: &GmmSpec,
    sched: &Schedule,
    cfg: &TrainConfig,
    rng: RngState,
) -> Result<TrainReport> {
    cfg.validate()?;
    if !data.is_labeled() {
        return Err(Error::Conditioning("classifier training needs labeled data".into()));
    }
    if data.num_classes() > classifier.classes() {
        return Err(Error::Conditioning(format!(
            "data has {} classes but the classifier has {}",
            data.num_classes(),
            classifier.classes()
        )));
    }
    if data.dim() != classifier.arch().data_dim {
        return Err(Error::DimensionMismatch {
            expected: classifier.arch().data_dim,
            got: data.dim(),
        });
    }
    let start = Instant::now();
    let probe = draw_classifier_batch(data, sched, cfg, &mut rng.fork(u64::MAX).rng())?;
    let (probe_loss, _) = classifier.nll_and_grad(&probe, sched)?;
    let mut curve = Curve::new(probe_loss);

    let mut stream = rng.rng();
    let mut stepper = Stepper::new(cfg, classifier.params().len());
    for step in 1..=cfg.steps {
        let batch = draw_classifier_batch(data, sched, cfg, &mut stream)?;
        let (loss, grad) = classifier.nll_and_grad(&batch, sched)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        stepper.apply(classifier.params_mut(), &grad, cfg.lr_schedule.factor(step, cfg.steps));
        curve.record(step, loss, cfg.eval_interval, step == cfg.steps);
    }
    Ok(TrainReport {
        curve: curve.points,
        checksum: params_checksum(classifier.params()),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

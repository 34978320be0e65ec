//! Variance schedules and their derived per-step quantities.
//!
//! All accessors take 1-based time steps `t ∈ 1..=T`; `alpha_bar(0) == 1`
//! is stored explicitly.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use crate::error::{Error, Result};

/// Largest β a cosine schedule may produce.
pub const COSINE_BETA_MAX: f64 = 0.999;
/// Default offset of the cosine schedule.
pub const COSINE_DEFAULT_OFFSET: f64 = 0.008;

/// How a schedule was built. Checkpoints store this rather than the arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Linear { beta_start: f64, beta_end: f64 },
    Cosine { offset: f64 },
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => write!(f, "linear(beta_start={beta_start:e},beta_end={beta_end:e})"),
            ScheduleKind::Cosine { offset } => write!(f, "cosine(offset={offset})"),
        }
    }
}

/// Immutable diffusion schedule over `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    steps: usize,
    // index t-1
    beta: Vec<f64>,
    alpha: Vec<f64>,
    beta_tilde: Vec<f64>,
    // index t, alpha_bar[0] = 1
    alpha_bar: Vec<f64>,
}

impl Schedule {
    /// β linearly interpolated from `beta_start` at t=1 to `beta_end` at t=T.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("T", format!("must be >= 1, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(Error::invalid(
                "beta_start",
                format!("must lie in (0, 1), got {beta_start}"),
            ));
        }
        if !(beta_end > 0.0 && beta_end < 1.0) {
            return Err(Error::invalid(
                "beta_end",
                format!("must lie in (0, 1), got {beta_end}"),
            ));
        }
        if beta_start > beta_end {
            return Err(Error::invalid(
                "beta_end",
                format!("must be >= beta_start ({beta_start}), got {beta_end}"),
            ));
        }
        let beta = if steps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (steps - 1) as f64;
            (0..steps)
                .map(|i| {
                    if i == steps - 1 {
                        beta_end
                    } else {
                        beta_start + step * i as f64
                    }
                })
                .collect()
        };
        Ok(Self::from_betas(
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            },
            beta,
        ))
    }

    /// Cosine ᾱ schedule: `ᾱ_t = f(t)/f(0)` with
    /// `f(t) = cos²(((t/T + offset)/(1 + offset))·π/2)`, β clipped at 0.999.
    pub fn cosine(steps: usize, offset: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("T", format!("must be >= 1, got {steps}")));
        }
        if !(offset > 0.0 && offset.is_finite()) {
            return Err(Error::invalid(
                "offset",
                format!("must be > 0, got {offset}"),
            ));
        }
        let f = |t: usize| {
            let u = ((t as f64 / steps as f64 + offset) / (1.0 + offset)) * FRAC_PI_2;
            u.cos().powi(2)
        };
        let beta = (1..=steps)
            .map(|t| (1.0 - f(t) / f(t - 1)).min(COSINE_BETA_MAX))
            .collect();
        Ok(Self::from_betas(ScheduleKind::Cosine { offset }, beta))
    }

    /// Rebuild a schedule from its construction arguments.
    pub fn from_kind(kind: ScheduleKind, steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => Self::linear(steps, beta_start, beta_end),
            ScheduleKind::Cosine { offset } => Self::cosine(steps, offset),
        }
    }

    fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Self {
        let steps = beta.len();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        for a in &alpha {
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * a);
        }
        let beta_tilde = (1..=steps)
            .map(|t| ((1.0 - alpha_bar[t - 1]) * beta[t - 1]) / (1.0 - alpha_bar[t]))
            .collect();
        Self {
            kind,
            steps,
            beta,
            alpha,
            beta_tilde,
            alpha_bar,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Rejects `t` outside `min..=T`.
    pub fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps {
            return Err(Error::TimeOutOfRange {
                t,
                min,
                max: self.steps,
            });
        }
        Ok(())
    }
}

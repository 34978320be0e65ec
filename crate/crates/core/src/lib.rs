//! Desk-scale diffusion-model laboratory.
//!
//! Gaussian forward diffusion, the variational-bound loss family, DDPM and
//! DDIM reverse samplers, classifier and classifier-free guidance, and
//! Monte-Carlo / reparameterization estimators, all on low-dimensional
//! synthetic data with a small hand-written MLP.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod forward;
pub mod gaussian;
pub mod guidance;
pub mod losses;
pub mod model;
pub mod persistence;
pub mod rng;
pub mod samplers;
pub mod schedules;
pub mod stubs;
pub mod training;

pub use error::{Error, Result};
pub use forward::{GmmSpec, Trajectory};
pub use gaussian::DiagGaussian;
pub use guidance::{GuidanceConfig, GuidanceMode};
pub use model::{Arch, Classifier, Conditioning, EpsModel, NoisePredictor};
pub use rng::{RngState, SimRng};
pub use samplers::{SamplerConfig, SamplerKind, SigmaPolicy};
pub use schedules::{Schedule, ScheduleKind};
pub use training::{TrainConfig, TrainReport};

//! Command-line surface.
//!
//! Every setting resolves as flag, then `--config` file entry, then built-in
//! default. The resolved set is written as the `#` header of each output so a
//! file records everything needed to regenerate it.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::{self, Display};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::estimators::reparam_grad;
use crate::evaluation::MetricReport;
use crate::forward::{simulate_forward, GmmSpec, Trajectory};
use crate::gaussian::{kl_closed_form, kl_mc_with_error, DiagGaussian};
use crate::guidance::{guided_sample, GuidanceConfig, GuidanceMode};
use crate::losses::vlb_estimate;
use crate::model::{Arch, Classifier, Conditioning, NoisePredictor, DEFAULT_HIDDEN};
use crate::persistence::{
    emit, load_checkpoint, load_config, save_checkpoint, Checkpoint, CsvTable, Metadata, Provenance,
    SampleTable, StoredModel,
};
use crate::rng::RngState;
use crate::samplers::{SamplerConfig, SamplerKind, SigmaPolicy};
use crate::schedules::{Schedule, COSINE_DEFAULT_OFFSET};
use crate::training::{train, train_classifier, LossVariant, LrSchedule, Optimizer, TrainConfig};

/// Desk-scale diffusion model laboratory.
#[derive(Debug, Parser)]
#[command(name = "difflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a freshly initialised checkpoint (equivalent to `train --steps 0`).
    Init(TrainArgs),
    /// Train a noise predictor or a noisy classifier on a Gaussian mixture.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Simulate forward-diffusion trajectories.
    Forward(ForwardArgs),
    /// Estimate the variational bound terms for a data point.
    Vlb(VlbArgs),
    /// Compare closed-form and Monte-Carlo KL between two 1-D Gaussians.
    KlDemo(KlArgs),
    /// Convergence of the reparameterised gradient for f(x) = x²/2.
    ReparamDemo(ReparamArgs),
    /// Bin one coordinate of a sample table.
    Hist(HistArgs),
    /// Compare a sample table against fresh draws from the mixture.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Random seed; required for every command that draws random numbers.
    #[arg(long)]
    seed: Option<String>,
    /// key = value file supplying defaults for any long flag.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// `standard` (T=1000, β in [1e-4, 0.02]) or `desk` (T=100, β in [1e-3, 0.2]).
    #[arg(long)]
    profile: Option<String>,
    /// `linear` or `cosine`.
    #[arg(long)]
    schedule: Option<String>,
    /// Number of diffusion steps T.
    #[arg(long)]
    timesteps: Option<String>,
    #[arg(long)]
    beta_start: Option<String>,
    #[arg(long)]
    beta_end: Option<String>,
    #[arg(long)]
    cosine_offset: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Mixture weights, comma separated (1-D mixtures; default 0.6,0.4).
    #[arg(long)]
    weights: Option<String>,
    /// Component means (default -2,2).
    #[arg(long, allow_hyphen_values = true)]
    means: Option<String>,
    /// Component variances (default 0.25,0.25).
    #[arg(long)]
    vars: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[command(flatten)]
    data: DataArgs,
    /// `eps` (noise predictor) or `classifier`.
    #[arg(long)]
    model: Option<String>,
    /// Condition the noise predictor on the class label.
    #[arg(long)]
    conditional: bool,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// `adam`, `sgd` or `momentum`.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    /// `cosine` or `constant`.
    #[arg(long)]
    lr_schedule: Option<String>,
    /// `simple` or `weighted`.
    #[arg(long)]
    loss: Option<String>,
    /// Label dropout probability for conditional training.
    #[arg(long)]
    p_drop: Option<String>,
    #[arg(long)]
    eval_interval: Option<String>,
    /// Where to write the loss curve.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `ddpm` or `ddim`.
    #[arg(long)]
    sampler: Option<String>,
    /// DDIM σ: `zero`, `ddpm`, or a comma-separated list indexed t = 1..T.
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    chains: Option<String>,
    /// Keep every intermediate state.
    #[arg(long)]
    record: bool,
    /// Fixed starting point x_T shared by all chains.
    #[arg(long, allow_hyphen_values = true)]
    x_t: Option<String>,
    /// `none`, `classifier` or `cfg`.
    #[arg(long)]
    guidance: Option<String>,
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    label: Option<String>,
    /// Classifier checkpoint for classifier guidance.
    #[arg(long)]
    classifier: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForwardArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Starting point x_0, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    chains: Option<String>,
}

#[derive(Debug, Args)]
struct VlbArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// Monte-Carlo draws per term.
    #[arg(long)]
    samples: Option<String>,
}

#[derive(Debug, Args)]
struct KlArgs {
    #[command(flatten)]
    common: Common,
    /// `mean,variance` of q.
    #[arg(long, allow_hyphen_values = true)]
    q: Option<String>,
    /// `mean,variance` of p.
    #[arg(long, allow_hyphen_values = true)]
    p: Option<String>,
    /// Monte-Carlo sample sizes, comma separated.
    #[arg(long)]
    samples: Option<String>,
}

#[derive(Debug, Args)]
struct ReparamArgs {
    #[command(flatten)]
    common: Common,
    /// `θ₁,θ₂` for X = θ₁ + θ₂·Y.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    samples: Option<String>,
}

#[derive(Debug, Args)]
struct HistArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    bins: Option<String>,
    /// `lo,hi`; the data range when omitted.
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    /// Coordinate to bin.
    #[arg(long)]
    dim: Option<String>,
    /// Time step whose rows are binned.
    #[arg(long)]
    t: Option<String>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    input: PathBuf,
    /// Fresh reference draws from the mixture.
    #[arg(long)]
    reference: Option<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Domain(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Comma-separated list value.
#[derive(Debug, Clone, PartialEq)]
struct List<T>(Vec<T>);

impl<T: FromStr> FromStr for List<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(List(Vec::new()));
        }
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad list element {p:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Resolves settings from flags, the config file and defaults, recording
/// every resolved value.
struct Resolver {
    config: BTreeMap<String, String>,
    used: BTreeSet<String>,
    meta: Metadata,
}

impl Resolver {
    fn new(kind: &str, command: &str, config: Option<&Path>) -> CliResult<Self> {
        let config = match config {
            Some(p) => load_config(p)?,
            None => BTreeMap::new(),
        };
        let mut meta = Metadata::new(kind);
        meta.push("command", command);
        Ok(Self {
            config,
            used: BTreeSet::new(),
            meta,
        })
    }

    fn raw(&mut self, key: &str, flag: &Option<String>) -> Option<String> {
        self.used.insert(key.to_string());
        flag.clone().or_else(|| self.config.get(key).cloned())
    }

    fn parse<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
        v.parse()
            .map_err(|_| CliError::Usage(format!("invalid value {v:?} for --{}", key.replace('_', "-"))))
    }

    fn opt<T: FromStr + Display>(&mut self, key: &str, flag: &Option<String>) -> CliResult<Option<T>> {
        match self.raw(key, flag) {
            Some(v) => {
                let t: T = Self::parse(key, &v)?;
                self.meta.push(key, &t);
                Ok(Some(t))
            }
            None => {
                self.meta.push(key, "");
                Ok(None)
            }
        }
    }

    fn get<T: FromStr + Display>(&mut self, key: &str, flag: &Option<String>, default: T) -> CliResult<T> {
        let t = match self.raw(key, flag) {
            Some(v) => Self::parse(key, &v)?,
            None => default,
        };
        self.meta.push(key, &t);
        Ok(t)
    }

    fn required<T: FromStr + Display>(&mut self, key: &str, flag: &Option<String>) -> CliResult<T> {
        match self.raw(key, flag) {
            Some(v) => {
                let t: T = Self::parse(key, &v)?;
                self.meta.push(key, &t);
                Ok(t)
            }
            None => Err(CliError::Usage(format!("missing required --{}", key.replace('_', "-")))),
        }
    }

    fn flag(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        self.used.insert(key.to_string());
        let v = if flag {
            true
        } else {
            match self.config.get(key) {
                Some(v) => Self::parse(key, v)?,
                None => false,
            }
        };
        self.meta.push(key, v);
        Ok(v)
    }

    fn path(&mut self, key: &str, p: &Option<PathBuf>) {
        self.used.insert(key.to_string());
        let shown = p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        self.meta.push(key, shown);
    }

    fn seed(&mut self, flag: &Option<String>) -> CliResult<u64> {
        self.required("seed", flag)
    }

    fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&String> = self.config.keys().filter(|k| !self.used.contains(*k)).collect();
        if let Some(k) = unknown.first() {
            return Err(CliError::Usage(format!("unknown config key {k:?}")));
        }
        Ok(())
    }
}

fn resolve_schedule(r: &mut Resolver, a: &ScheduleArgs) -> CliResult<Schedule> {
    let profile: String = r.get("profile", &a.profile, "standard".to_string())?;
    let (t, bs, be) = match profile.as_str() {
        "standard" => (1000, 1e-4, 0.02),
        "desk" => (100, 1e-3, 0.2),
        other => return Err(CliError::Usage(format!("unknown profile {other:?}"))),
    };
    let kind: String = r.get("schedule", &a.schedule, "linear".to_string())?;
    let steps: usize = r.get("timesteps", &a.timesteps, t)?;
    let beta_start: f64 = r.get("beta_start", &a.beta_start, bs)?;
    let beta_end: f64 = r.get("beta_end", &a.beta_end, be)?;
    let offset: f64 = r.get("cosine_offset", &a.cosine_offset, COSINE_DEFAULT_OFFSET)?;
    Ok(match kind.as_str() {
        "linear" => Schedule::linear(steps, beta_start, beta_end)?,
        "cosine" => Schedule::cosine(steps, offset)?,
        other => return Err(CliError::Usage(format!("unknown schedule {other:?}"))),
    })
}

fn resolve_data(r: &mut Resolver, a: &DataArgs) -> CliResult<GmmSpec> {
    let w: List<f64> = r.get("weights", &a.weights, List(vec![0.6, 0.4]))?;
    let m: List<f64> = r.get("means", &a.means, List(vec![-2.0, 2.0]))?;
    let v: List<f64> = r.get("vars", &a.vars, List(vec![0.25, 0.25]))?;
    if w.0.len() != m.0.len() || w.0.len() != v.0.len() {
        return Err(CliError::Usage("--weights, --means and --vars need equal lengths".into()));
    }
    let labels = (0..w.0.len()).collect();
    Ok(GmmSpec::new(
        w.0,
        m.0.into_iter().map(|x| vec![x]).collect(),
        v.0.into_iter().map(|x| vec![x]).collect(),
        Some(labels),
    )?)
}

fn run_train(a: &TrainArgs, init_only: bool) -> CliResult<()> {
    let command = if init_only { "init" } else { "train" };
    let mut r = Resolver::new("loss", command, a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    let sched = resolve_schedule(&mut r, &a.schedule)?;
    let data = resolve_data(&mut r, &a.data)?;
    let kind: String = r.get("model", &a.model, "eps".to_string())?;
    let conditional = r.flag("conditional", a.conditional)?;
    let hidden: List<usize> = r.get("hidden", &a.hidden, List(DEFAULT_HIDDEN.to_vec()))?;
    let defaults = TrainConfig::default();
    let steps: usize = if init_only {
        r.used.insert("steps".into());
        r.meta.push("steps", 0);
        0
    } else {
        r.get("steps", &a.steps, defaults.steps)?
    };
    let batch_size = r.get("batch", &a.batch, defaults.batch_size)?;
    let lr = r.get("lr", &a.lr, defaults.lr)?;
    let opt: String = r.get("optimizer", &a.optimizer, "adam".to_string())?;
    let momentum: f64 = r.get("momentum", &a.momentum, 0.9)?;
    let optimizer = match opt.as_str() {
        "adam" => Optimizer::Adam,
        "sgd" => Optimizer::Sgd,
        "momentum" => Optimizer::Momentum(momentum),
        other => return Err(CliError::Usage(format!("unknown optimizer {other:?}"))),
    };
    let lr_schedule = match r.get("lr_schedule", &a.lr_schedule, "cosine".to_string())?.as_str() {
        "cosine" => LrSchedule::Cosine,
        "constant" => LrSchedule::Constant,
        other => return Err(CliError::Usage(format!("unknown lr schedule {other:?}"))),
    };
    let loss = match r.get("loss", &a.loss, "simple".to_string())?.as_str() {
        "simple" => LossVariant::Simple,
        "weighted" => LossVariant::Weighted,
        other => return Err(CliError::Usage(format!("unknown loss {other:?}"))),
    };
    let p_drop = r.get("p_drop", &a.p_drop, defaults.p_drop)?;
    let eval_interval = r.get("eval_interval", &a.eval_interval, defaults.eval_interval)?;
    r.path("out", &a.common.out);
    r.path("loss_csv", &a.loss_csv);
    r.finish()?;
    let out = a
        .common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing required --out".into()))?;

    let cfg = TrainConfig {
        steps,
        batch_size,
        lr,
        p_drop,
        eval_interval,
        loss,
        optimizer,
        lr_schedule,
    };
    let arch = Arch::new(data.dim(), hidden.0);
    let init_rng = RngState::new(seed, 0);
    let train_rng = RngState::new(seed, 1);
    let (model, report) = match kind.as_str() {
        "eps" => {
            let cond = if conditional {
                Conditioning::Classes(data.num_classes())
            } else {
                Conditioning::None
            };
            let mut m = NoisePredictor::init(arch, cond, &mut init_rng.rng())?;
            let rep = train(&mut m, &data, &sched, &cfg, train_rng)?;
            (StoredModel::Eps(m), rep)
        }
        "classifier" => {
            if conditional {
                return Err(CliError::Usage("--conditional applies to eps models only".into()));
            }
            let mut c = Classifier::init(arch, data.num_classes(), &mut init_rng.rng())?;
            let rep = train_classifier(&mut c, &data, &sched, &cfg, train_rng)?;
            (StoredModel::Classifier(c), rep)
        }
        other => return Err(CliError::Usage(format!("unknown model kind {other:?}"))),
    };

    let mut comments: Vec<String> = r
        .meta
        .entries
        .iter()
        .filter(|(k, _)| k != "format" && k != "command" && k != "out" && k != "loss_csv")
        .map(|(k, v)| format!("{k} = {v}"))
        .collect();
    comments.push(format!("params_sha256 = {}", report.checksum));
    let ckpt = Checkpoint {
        model,
        schedule: sched,
        provenance: Provenance {
            seed,
            train_steps: steps,
        },
        comments,
    };
    save_checkpoint(&ckpt, out)?;
    if let Some(path) = &a.loss_csv {
        let mut table = CsvTable::new(r.meta.clone(), &["step", "loss"]);
        for (s, l) in &report.curve {
            table.push(vec![s.to_string(), l.to_string()]);
        }
        emit(Some(path), &table.render())?;
    }
    Ok(())
}

fn load_eps(path: &Path) -> CliResult<(NoisePredictor, Schedule, Checkpoint)> {
    let ck = load_checkpoint(path)?;
    match &ck.model {
        StoredModel::Eps(m) => Ok((m.clone(), ck.schedule.clone(), ck)),
        StoredModel::Classifier(_) => Err(CliError::Domain(Error::Conditioning(format!(
            "{} holds a classifier, not a noise predictor",
            path.display()
        )))),
    }
}

fn run_sample(a: &SampleArgs) -> CliResult<()> {
    let mut r = Resolver::new("samples", "sample", a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    r.path("checkpoint", &Some(a.checkpoint.clone()));
    let sampler: String = r.get("sampler", &a.sampler, "ddpm".to_string())?;
    let sigma: String = r.get("sigma", &a.sigma, "zero".to_string())?;
    let chains: usize = r.get("chains", &a.chains, 1000)?;
    let record = r.flag("record", a.record)?;
    let x_t: Option<List<f64>> = r.opt("x_t", &a.x_t)?;
    let mode: GuidanceMode = match r.get("guidance", &a.guidance, "none".to_string())?.parse() {
        Ok(m) => m,
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let scale: f64 = r.get("scale", &a.scale, 0.0)?;
    let label: Option<usize> = r.opt("label", &a.label)?;
    r.path("classifier", &a.classifier);
    r.path("out", &a.common.out);
    r.finish()?;

    let (model, sched, _) = load_eps(&a.checkpoint)?;
    let kind = match sampler.as_str() {
        "ddpm" => SamplerKind::Ddpm,
        "ddim" => SamplerKind::Ddim(match sigma.as_str() {
            "zero" => SigmaPolicy::Zero,
            "ddpm" => SigmaPolicy::DdpmEquivalent,
            list => SigmaPolicy::Explicit(Resolver::parse::<List<f64>>("sigma", list)?.0),
        }),
        other => return Err(CliError::Usage(format!("unknown sampler {other:?}"))),
    };
    let cfg = SamplerConfig {
        kind,
        record,
        chains,
        initial: x_t.map(|l| l.0),
    };
    let classifier = match &a.classifier {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let c = match ck.model {
                StoredModel::Classifier(c) => c,
                StoredModel::Eps(_) => {
                    return Err(CliError::Domain(Error::Conditioning(format!(
                        "{} holds a noise predictor, not a classifier",
                        p.display()
                    ))))
                }
            };
            if ck.schedule != sched {
                return Err(CliError::Domain(Error::Conditioning(
                    "classifier and noise model were trained on different schedules".into(),
                )));
            }
            Some(c)
        }
        None => None,
    };
    let guidance = GuidanceConfig { mode, scale, label };
    let trajs = guided_sample(&model, &cfg, &guidance, classifier.as_ref(), &sched, RngState::new(seed, 2))?;
    let mut table = SampleTable::from_trajectories(model.arch().data_dim, &trajs);
    table.label = label;
    table.scale = (mode != GuidanceMode::None).then_some(scale);
    emit(a.common.out.as_ref(), &table.render(&r.meta))?;
    Ok(())
}

fn run_forward(a: &ForwardArgs) -> CliResult<()> {
    let mut r = Resolver::new("trajectory", "forward", a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    let sched = resolve_schedule(&mut r, &a.schedule)?;
    let x0: List<f64> = r.get("x0", &a.x0, List(vec![1.0]))?;
    let chains: usize = r.get("chains", &a.chains, 1)?;
    r.path("out", &a.common.out);
    r.finish()?;
    if x0.0.is_empty() {
        return Err(CliError::Usage("--x0 needs at least one coordinate".into()));
    }
    let root = RngState::new(seed, 3);
    let trajs: Vec<Trajectory> = (0..chains)
        .map(|i| simulate_forward(&x0.0, &sched, &mut root.fork(i as u64).rng()))
        .collect();
    let table = SampleTable::from_trajectories(x0.0.len(), &trajs);
    emit(a.common.out.as_ref(), &table.render(&r.meta))?;
    Ok(())
}

fn run_vlb(a: &VlbArgs) -> CliResult<()> {
    let mut r = Resolver::new("vlb", "vlb", a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    r.path("checkpoint", &Some(a.checkpoint.clone()));
    let x0: List<f64> = r.get("x0", &a.x0, List(vec![2.0]))?;
    let samples: usize = r.get("samples", &a.samples, 1000)?;
    r.path("out", &a.common.out);
    r.finish()?;
    let (model, sched, _) = load_eps(&a.checkpoint)?;
    let rep = vlb_estimate(&model, &x0.0, &sched, samples, &mut RngState::new(seed, 4).rng())?;
    let mut table = CsvTable::new(r.meta.clone(), &["term", "t", "nats"]);
    for (term, t, v) in rep.rows() {
        table.push(vec![term, t.to_string(), v.to_string()]);
    }
    emit(a.common.out.as_ref(), &table.render())?;
    Ok(())
}

fn gaussian_1d(key: &str, v: &List<f64>) -> CliResult<DiagGaussian> {
    match v.0.as_slice() {
        [m, var] => Ok(DiagGaussian::new(vec![*m], vec![*var])?),
        _ => Err(CliError::Usage(format!("--{key} takes mean,variance"))),
    }
}

const DEMO_SAMPLES: [usize; 5] = [100, 1_000, 10_000, 100_000, 1_000_000];

fn run_kl_demo(a: &KlArgs) -> CliResult<()> {
    let mut r = Resolver::new("kl", "kl-demo", a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    let q: List<f64> = r.get("q", &a.q, List(vec![1.0, 1.0]))?;
    let p: List<f64> = r.get("p", &a.p, List(vec![0.0, 4.0]))?;
    let ms: List<usize> = r.get("samples", &a.samples, List(DEMO_SAMPLES.to_vec()))?;
    r.path("out", &a.common.out);
    r.finish()?;
    let (q, p) = (gaussian_1d("q", &q)?, gaussian_1d("p", &p)?);
    let exact = kl_closed_form(&q, &p)?;
    let root = RngState::new(seed, 5);
    let mut table = CsvTable::new(r.meta.clone(), &["samples", "closed_form", "mc_estimate", "std_error"]);
    for (i, m) in ms.0.iter().enumerate() {
        let (est, se) = kl_mc_with_error(&q, &p, *m, &mut root.fork(i as u64).rng())?;
        table.push(vec![m.to_string(), format!("{exact:.6}"), est.to_string(), se.to_string()]);
    }
    emit(a.common.out.as_ref(), &table.render())?;
    Ok(())
}

fn run_reparam_demo(a: &ReparamArgs) -> CliResult<()> {
    let mut r = Resolver::new("reparam", "reparam-demo", a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    let theta: List<f64> = r.get("theta", &a.theta, List(vec![0.5, 1.5]))?;
    let ms: List<usize> = r.get("samples", &a.samples, List(DEMO_SAMPLES.to_vec()))?;
    r.path("out", &a.common.out);
    r.finish()?;
    let theta: [f64; 2] = theta
        .0
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Usage("--theta takes two values".into()))?;
    let root = RngState::new(seed, 6);
    let mut table = CsvTable::new(
        r.meta.clone(),
        &["samples", "grad_theta1", "grad_theta2", "abs_err_theta1", "abs_err_theta2"],
    );
    for (i, m) in ms.0.iter().enumerate() {
        let g = reparam_grad(theta, *m, root.fork(i as u64))?;
        table.push(vec![
            m.to_string(),
            g[0].to_string(),
            g[1].to_string(),
            (g[0] - theta[0]).abs().to_string(),
            (g[1] - theta[1]).abs().to_string(),
        ]);
    }
    emit(a.common.out.as_ref(), &table.render())?;
    Ok(())
}

fn run_hist(a: &HistArgs) -> CliResult<()> {
    let mut r = Resolver::new("histogram", "hist", a.common.config.as_deref())?;
    r.path("input", &Some(a.input.clone()));
    let bins: usize = r.get("bins", &a.bins, 50)?;
    let range: Option<List<f64>> = r.opt("range", &a.range)?;
    let dim: usize = r.get("dim", &a.dim, 0)?;
    let t: usize = r.get("t", &a.t, 0)?;
    r.path("out", &a.common.out);
    // no randomness here; a seed is accepted and recorded for uniformity
    let _: Option<u64> = r.opt("seed", &a.common.seed)?;
    r.finish()?;
    if bins < 1 {
        return Err(CliError::Usage("--bins must be >= 1".into()));
    }
    let table = SampleTable::load(&a.input)?;
    if dim >= table.dim {
        return Err(CliError::Domain(Error::DimensionMismatch {
            expected: table.dim,
            got: dim + 1,
        }));
    }
    let values: Vec<f64> = table.rows.iter().filter(|row| row.t == t).map(|row| row.x[dim]).collect();
    if values.is_empty() {
        return Err(CliError::Domain(Error::invalid("t", format!("no rows at t = {t}"))));
    }
    let (lo, hi) = match range {
        Some(List(v)) if v.len() == 2 && v[0] < v[1] => (v[0], v[1]),
        Some(_) => return Err(CliError::Usage("--range takes lo,hi with lo < hi".into())),
        None => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                (lo, hi)
            } else {
                (lo - 0.5, lo + 0.5)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &values {
        if *v < lo || *v > hi {
            continue;
        }
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    let mut out = CsvTable::new(r.meta.clone(), &["bin_lo", "bin_hi", "count", "density"]);
    for (k, c) in counts.iter().enumerate() {
        let a_ = lo + width * k as f64;
        let b_ = if k + 1 == bins { hi } else { lo + width * (k + 1) as f64 };
        out.push(vec![a_.to_string(), b_.to_string(), c.to_string(), (*c as f64 / (n * width)).to_string()]);
    }
    emit(a.common.out.as_ref(), &out.render())?;
    Ok(())
}

fn run_metrics(a: &MetricsArgs) -> CliResult<()> {
    let mut r = Resolver::new("metrics", "metrics", a.common.config.as_deref())?;
    let seed = r.seed(&a.common.seed)?;
    let data = resolve_data(&mut r, &a.data)?;
    r.path("input", &Some(a.input.clone()));
    let n_ref: usize = r.get("reference", &a.reference, 10_000)?;
    r.path("out", &a.common.out);
    r.finish()?;
    let table = SampleTable::load(&a.input)?;
    let samples: Vec<Vec<f64>> = table.rows.iter().filter(|row| row.t == 0).map(|row| row.x.clone()).collect();
    let mut rng = RngState::new(seed, 7).rng();
    let reference: Vec<Vec<f64>> = (0..n_ref).map(|_| data.sample(&mut rng).0).collect();
    let rep = MetricReport::compute(&samples, &reference, &data)?;
    let mut out = CsvTable::new(r.meta.clone(), &["metric", "index", "value"]);
    for (m, k, v) in rep.rows() {
        out.push(vec![m.to_string(), k.to_string(), v.to_string()]);
    }
    emit(a.common.out.as_ref(), &out.render())?;
    Ok(())
}

/// Run the command line `argv` (including the program name) and return the
/// process exit code: 0 on success, 1 for usage errors, 2 for domain errors.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Init(a) => run_train(a, true),
        Command::Train(a) => run_train(a, false),
        Command::Sample(a) => run_sample(a),
        Command::Forward(a) => run_forward(a),
        Command::Vlb(a) => run_vlb(a),
        Command::KlDemo(a) => run_kl_demo(a),
        Command::ReparamDemo(a) => run_reparam_demo(a),
        Command::Hist(a) => run_hist(a),
        Command::Metrics(a) => run_metrics(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}\n\nFor more information, try '--help'.");
            1
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

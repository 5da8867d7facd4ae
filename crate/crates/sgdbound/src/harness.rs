//! Config-driven experiments: build a problem, audit the schedule, evaluate the
//! matching bound, simulate a seeded ensemble and write CSV/JSON/SVG artifacts.
//!
//! Configs are TOML. Exit codes: 0 all enabled checks pass, 1 a check or
//! certificate failed, 2 the config could not be used (including a step-size
//! cap violation without override).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundError, BoundReport, DecayInputs, MomentumRegime};
use crate::certify::{self, CertReport, CertifyError, NoiseEstimate, ShellSamplingPlan};
use crate::linalg::norm;
use crate::optimize::{
    self, Ensemble, EnsembleSummary, LyapunovForm, LyapunovTest, Method, OptimizeError, OptimizerConfig,
};
use crate::par::Execution;
use crate::problems::{
    Activation, BaseObjective, Dataset, DissipativityCert, GrowthCert, NoiseCert, OracleSpec, Problem, ProblemError,
    SyntheticSpec,
};
use crate::schedules::{self, Schedule, ScheduleAudit, ScheduleError, ScheduleSpec};
use crate::seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Probe points and repetitions used when a minibatch oracle's noise is estimated.
const NOISE_PROBES: usize = 24;
const NOISE_REPS: usize = 200;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("referenced file does not exist: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("largest step {max_step} exceeds the cap {cap}; pass --override-cap to run anyway")]
    CapViolation { max_step: f64, cap: f64 },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl HarnessError {
    /// Stable machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Parse(_) => "parse",
            HarnessError::MissingFile(_) => "missing_file",
            HarnessError::CapViolation { .. } => "cap_violation",
            HarnessError::Unsupported(_) => "unsupported",
            HarnessError::Problem(_) => "problem",
            HarnessError::Certify(_) => "certify",
            HarnessError::Schedule(_) => "schedule",
            HarnessError::Bound(_) => "bound",
            HarnessError::Optimize(_) => "optimize",
            HarnessError::Io(_) => "io",
            HarnessError::Json(_) => "json",
            HarnessError::Serialize(_) => "serialize",
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub schedule: ScheduleSpec,
    pub optimizer: OptimizerSection,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub bound: BoundChoice,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub check_params: CheckParams,
    #[serde(default)]
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    /// Replaces the problem's nominal dissipativity certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert: Option<DissipativityCert>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthCert>,
    /// Replaces the exact or estimated oracle noise constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseCert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LeastSquares,
    PhaseRetrieval,
    HeavyTailMle { lambda: f64 },
    BlakeZisserman { lambda: f64, nu: f64 },
    LogisticL2 { lambda: f64 },
    LogisticL1 { lambda: f64 },
    TwoLayerNn {
        width: usize,
        lambda: f64,
        activation: Activation,
        #[serde(default)]
        init_seed: u64,
    },
    DeepReluNn {
        widths: Vec<usize>,
        lambda: f64,
        #[serde(default)]
        l1: bool,
        #[serde(default)]
        init_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Dense CSV, last column the label; relative paths resolve against the config file.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub method: Method,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Minibatch size; absent means full gradients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub additive_sigma2: f64,
    pub init: InitSpec,
    /// Rescale the schedule so its largest step is this fraction of the cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_fraction: Option<f64>,
    #[serde(default)]
    pub override_cap: bool,
}

fn default_beta() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Point(Vec<f64>),
    /// Every coordinate equal to the value.
    Fill(f64),
    /// Uniformly random direction at distance `radius` from the center.
    Sphere {
        radius: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        center: InitCenter,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitCenter {
    #[default]
    Optimum,
    Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// Explicit trajectory seeds; takes precedence over `master`/`count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<u64>>,
    #[serde(default)]
    pub master: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl SeedConfig {
    pub fn resolve(&self) -> Result<Vec<u64>, HarnessError> {
        match (&self.list, self.count) {
            (Some(list), _) => Ok(list.clone()),
            (None, Some(count)) => Ok(seed::child_seeds(self.master, count)),
            (None, None) => Err(config_err("seeds need either `list` or `count`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundChoice {
    /// Plain SGD: quadratic or generalized bound by the certificate exponent.
    /// Momentum: the Lyapunov radius.
    #[default]
    Auto,
    Quadratic,
    Generalized,
    Decay,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Mean over seeds of `sup_k dist2` is at most the bound.
    Boundedness,
    /// No trajectory hit the divergence guard.
    NoDivergence,
    /// Mean dist2 and fgap stay within a factor of their early running max.
    Proxy,
    /// Conditional decrease of the momentum Lyapunov value.
    Lyapunov,
    /// Final mean dist2 is at most the explicit decay bound, with tolerance.
    Decay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckParams {
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_proxy_k0")]
    pub proxy_k0: usize,
    #[serde(default = "default_proxy_factor")]
    pub proxy_factor: f64,
    #[serde(default = "default_decay_tolerance")]
    pub decay_tolerance: f64,
    /// First iterate tested for Lyapunov decrease; defaults to where the steps enter the cap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_k_min: Option<usize>,
}

fn default_confidence() -> f64 {
    0.95
}
fn default_proxy_k0() -> usize {
    100
}
fn default_proxy_factor() -> f64 {
    10.0
}
fn default_decay_tolerance() -> f64 {
    0.2
}

impl Default for CheckParams {
    fn default() -> Self {
        Self {
            confidence: default_confidence(),
            proxy_k0: default_proxy_k0(),
            proxy_factor: default_proxy_factor(),
            decay_tolerance: default_decay_tolerance(),
            lyapunov_k_min: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; relative data paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut config: ExperimentConfig = toml::from_str(text)?;
        if let DataSource::Csv(path) = &mut config.problem.data {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        if !path.exists() {
            return Err(HarnessError::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if let DataSource::Csv(path) = &self.problem.data {
            if !path.exists() {
                return Err(HarnessError::MissingFile(path.clone()));
            }
        }
        self.schedule.validate()?;
        let seeds = self.seeds.resolve()?;
        if seeds.len() < 2 {
            return Err(config_err(format!("an ensemble needs at least 2 seeds, got {}", seeds.len())));
        }
        let opt = &self.optimizer;
        if opt.method == Method::Momentum && !(opt.beta > 0.0 && opt.beta < 1.0) {
            return Err(config_err(format!("beta = {} must lie in (0, 1)", opt.beta)));
        }
        if !(opt.additive_sigma2 >= 0.0 && opt.additive_sigma2.is_finite()) {
            return Err(config_err("additive_sigma2 must be non-negative"));
        }
        if opt.batch_size == Some(0) {
            return Err(config_err("batch_size must be positive"));
        }
        if let Some(f) = opt.step_fraction {
            if !(f > 0.0 && f.is_finite()) {
                return Err(config_err("step_fraction must be positive"));
            }
        }
        let p = &self.check_params;
        if !(p.confidence > 0.0 && p.confidence < 1.0) {
            return Err(config_err("confidence must lie in (0, 1)"));
        }
        if !(p.proxy_factor > 0.0) || !(p.decay_tolerance >= 0.0) {
            return Err(config_err("proxy_factor must be positive and decay_tolerance non-negative"));
        }
        Ok(())
    }

    fn oracle(&self) -> OracleSpec {
        OracleSpec { batch_size: self.optimizer.batch_size, additive_sigma2: self.optimizer.additive_sigma2 }
    }
}

// ---------------------------------------------------------------- setup

/// Builds the configured problem with any certificate overrides applied.
pub fn build_problem(config: &ProblemConfig) -> Result<Problem, HarnessError> {
    let (data, planted) = match &config.data {
        DataSource::Synthetic(spec) => {
            let (data, signal) = spec.generate()?;
            (data, Some(signal))
        }
        DataSource::Csv(path) => {
            if !path.exists() {
                return Err(HarnessError::MissingFile(path.clone()));
            }
            (Dataset::from_csv(path)?, None)
        }
    };
    let mut problem = match &config.model {
        ModelConfig::LeastSquares => Problem::least_squares(data)?,
        ModelConfig::PhaseRetrieval => Problem::phase_retrieval(data, planted.as_deref())?,
        ModelConfig::HeavyTailMle { lambda } => Problem::heavy_tail_mle(data, *lambda)?,
        ModelConfig::BlakeZisserman { lambda, nu } => Problem::blake_zisserman(data, *lambda, *nu)?,
        ModelConfig::LogisticL2 { lambda } => {
            Problem::l2_regularized_bounded_grad(BaseObjective::logistic(data)?, *lambda)?
        }
        ModelConfig::LogisticL1 { lambda } => Problem::logistic_l1(data, *lambda)?,
        ModelConfig::TwoLayerNn { width, lambda, activation, init_seed } => {
            Problem::two_layer_nn(data, *width, *lambda, *activation, *init_seed)?
        }
        ModelConfig::DeepReluNn { widths, lambda, l1, init_seed } => {
            Problem::deep_relu_nn(data, widths, *lambda, *l1, *init_seed)?
        }
    };
    if let Some(cert) = config.cert {
        cert.validate().map_err(|e| config_err(e.to_string()))?;
        problem = problem.with_cert(cert);
    }
    if let Some(growth) = config.growth {
        problem = problem.with_growth(growth);
    }
    Ok(problem)
}

fn initial_point(spec: &InitSpec, problem: &Problem) -> Result<Vec<f64>, HarnessError> {
    let d = problem.dim();
    match spec {
        InitSpec::Point(x) if x.len() == d => Ok(x.clone()),
        InitSpec::Point(x) => Err(config_err(format!("init point has dimension {}, problem has {d}", x.len()))),
        InitSpec::Fill(v) => Ok(vec![*v; d]),
        InitSpec::Sphere { radius, seed, center } => {
            if !(*radius >= 0.0 && radius.is_finite()) {
                return Err(config_err("init radius must be non-negative"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&u);
            let base = match center {
                InitCenter::Optimum => problem.optimum().to_vec(),
                InitCenter::Origin => vec![0.0; d],
            };
            Ok(base.iter().zip(&u).map(|(b, v)| b + radius * v / len).collect())
        }
    }
}

/// Where the noise constants used by the bounds came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    Configured,
    /// Full gradients plus additive noise: the constants are exact.
    Exact,
    Estimated(NoiseEstimate),
}

fn noise_constants(
    config: &ExperimentConfig,
    problem: &Problem,
    x1: &[f64],
    master: u64,
) -> Result<(NoiseCert, NoiseSource), HarnessError> {
    if let Some(noise) = config.problem.noise {
        return Ok((noise, NoiseSource::Configured));
    }
    let oracle = config.oracle();
    let additive = oracle.additive_sigma2;
    if oracle.batch_size.is_none() {
        return Ok((NoiseCert { rho: 0.0, sigma2: additive }, NoiseSource::Exact));
    }
    // minibatch part only; the independent additive part is added afterwards
    let sampling = OracleSpec { additive_sigma2: 0.0, ..oracle };
    let reach = problem.dist2(x1).sqrt().max(1.0);
    let mut rng = seed::rng_for(master, u64::MAX);
    let probes: Vec<Vec<f64>> = (0..NOISE_PROBES)
        .map(|i| {
            let r = reach * 1e-2f64.powf(1.0 - i as f64 / (NOISE_PROBES - 1) as f64) * 2.0;
            let u: Vec<f64> = (0..problem.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&u);
            problem.optimum().iter().zip(&u).map(|(c, v)| c + r * v / len).collect()
        })
        .collect();
    let estimate = certify::estimate_noise(problem, &sampling, &probes, NOISE_REPS, master, config.execution)?;
    let cert = NoiseCert { rho: estimate.cert.rho, sigma2: estimate.cert.sigma2 + additive };
    Ok((cert, NoiseSource::Estimated(estimate)))
}

/// The certificate, noise constants and schedule a run is judged against.
#[derive(Debug, Clone, Serialize)]
pub struct Prepared {
    #[serde(skip)]
    pub problem: Problem,
    pub cert: DissipativityCert,
    pub growth: Option<GrowthCert>,
    pub noise: NoiseCert,
    pub noise_source: NoiseSource,
    pub lipschitz: f64,
    pub schedule: ScheduleSpec,
    pub audit: ScheduleAudit,
    pub x1: Vec<f64>,
    pub dist2_init: f64,
    pub seeds: Vec<u64>,
}

fn momentum_regime(config: &ExperimentConfig, cert: &DissipativityCert) -> Option<MomentumRegime> {
    (config.optimizer.method == Method::Momentum).then(|| MomentumRegime::for_run(cert.p, &config.schedule))
}

/// Cap on every step for this method and certificate; infinite when none applies.
fn step_cap(
    method: Method,
    beta: f64,
    cert: &DissipativityCert,
    noise: &NoiseCert,
    lipschitz: f64,
    regime: Option<MomentumRegime>,
) -> Result<f64, HarnessError> {
    Ok(match (method, regime) {
        (Method::Momentum, Some(regime)) => bounds::momentum_caps(cert.theta1, noise.rho, lipschitz, beta, regime)?,
        _ if cert.p < 2.0 => f64::INFINITY,
        _ => bounds::sgd_cap(cert.theta1, noise.rho, lipschitz),
    })
}

fn audit(
    spec: &ScheduleSpec,
    config: &ExperimentConfig,
    cert: &DissipativityCert,
    noise: &NoiseCert,
    lipschitz: f64,
    cap: f64,
) -> Result<ScheduleAudit, HarnessError> {
    let beta = (config.optimizer.method == Method::Momentum).then_some(config.optimizer.beta);
    let mut audit = schedules::audit_schedule(spec, cert.theta1, noise.rho, lipschitz, beta)?;
    if audit.cap_value != cap {
        let schedule = Schedule::new(spec.clone())?;
        let steps = schedule.steps();
        audit.cap_components.push(schedules::NamedValue { name: "regime".into(), value: cap });
        audit.cap_value = cap;
        audit.cap_satisfied = audit.max_step <= cap;
        audit.cap_entry = match steps.iter().rposition(|&s| s > cap) {
            None => Some(1),
            Some(last) if last + 1 < steps.len() => Some(last + 2),
            Some(_) => None,
        };
    }
    Ok(audit)
}

/// Everything up to simulation: problem, certificate in optimum form, noise,
/// cap-adjusted schedule and its audit. Fails with `CapViolation` unless the
/// schedule is within the cap or `override_cap` is set.
pub fn prepare(config: &ExperimentConfig, override_cap: bool) -> Result<Prepared, HarnessError> {
    let problem = build_problem(&config.problem)?;
    let cert = certify::optimum_form_cert(&problem)?;
    let growth = problem.growth().copied();
    let x1 = initial_point(&config.optimizer.init, &problem)?;
    let seeds = config.seeds.resolve()?;
    let (noise, noise_source) = noise_constants(config, &problem, &x1, config.seeds.master)?;
    let lipschitz = problem.smoothness().value();
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(HarnessError::Unsupported(format!("smoothness constant {lipschitz} is not usable")));
    }
    let regime = momentum_regime(config, &cert);
    let cap = step_cap(config.optimizer.method, config.optimizer.beta, &cert, &noise, lipschitz, regime)?;
    let mut spec = config.schedule.clone();
    if let Some(fraction) = config.optimizer.step_fraction {
        if !cap.is_finite() {
            return Err(config_err("step_fraction needs a finite cap"));
        }
        let current = Schedule::new(spec.clone())?.max_step();
        spec = spec.scaled(fraction * cap / current);
    }
    let audit = audit(&spec, config, &cert, &noise, lipschitz, cap)?;
    if !audit.cap_satisfied && !(override_cap || config.optimizer.override_cap) {
        return Err(HarnessError::CapViolation { max_step: audit.max_step, cap });
    }
    let dist2_init = problem.dist2(&x1);
    Ok(Prepared { problem, cert, growth, noise, noise_source, lipschitz, schedule: spec, audit, x1, dist2_init, seeds })
}

// ---------------------------------------------------------------- bounds

/// Bound artifact: the closed-form report for plain SGD, or the momentum radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundArtifact {
    pub choice: BoundChoice,
    pub cert: DissipativityCert,
    pub growth: Option<GrowthCert>,
    pub noise: NoiseCert,
    pub lipschitz: f64,
    pub dist2_init: f64,
    pub audit: ScheduleAudit,
    pub report: Option<BoundReport>,
    pub momentum: Option<MomentumBound>,
    /// Value compared against the ensemble by the boundedness or decay check.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentumBound {
    pub regime: MomentumRegime,
    pub cap: f64,
    /// Radius outside which the Lyapunov value must decrease.
    pub r2: f64,
}

fn resolve_choice(config: &ExperimentConfig, cert: &DissipativityCert) -> BoundChoice {
    match (config.bound, config.optimizer.method) {
        (BoundChoice::Auto, Method::Momentum) => BoundChoice::Momentum,
        (BoundChoice::Auto, Method::Sgd) if cert.p < 2.0 => BoundChoice::Generalized,
        (BoundChoice::Auto, Method::Sgd) => BoundChoice::Quadratic,
        (choice, _) => choice,
    }
}

pub fn evaluate_bound(config: &ExperimentConfig, prep: &Prepared) -> Result<BoundArtifact, HarnessError> {
    let choice = resolve_choice(config, &prep.cert);
    let method = config.optimizer.method;
    let sgd_only = |name: &str| {
        if method == Method::Momentum {
            Err(HarnessError::Unsupported(format!("{name} is a plain SGD bound")))
        } else {
            Ok(())
        }
    };
    let max_step = Schedule::new(prep.schedule.clone())?.max_step();
    let (report, momentum, limit) = match choice {
        BoundChoice::Quadratic => {
            sgd_only("quadratic")?;
            let r = bounds::sgd_bound(&prep.cert, &prep.noise, prep.lipschitz, prep.dist2_init)?;
            let limit = r.bound;
            (Some(r), None, limit)
        }
        BoundChoice::Generalized => {
            sgd_only("generalized")?;
            let growth = prep
                .growth
                .ok_or_else(|| HarnessError::Unsupported("generalized bound needs a growth certificate".into()))?;
            let r = bounds::generalized_sgd_bound(&prep.cert, &growth, &prep.noise, max_step, prep.dist2_init)?;
            // the printed minimum can sit below the starting distance; compare against the maximum then
            let limit = if r.bound < prep.dist2_init { r.conservative() } else { r.bound };
            (Some(r), None, limit)
        }
        BoundChoice::Decay => {
            sgd_only("decay")?;
            if prep.cert.radius != 0.0 || prep.cert.p != 2.0 {
                return Err(HarnessError::Unsupported("decay bounds need a quadratic certificate with R = 0".into()));
            }
            let inputs = DecayInputs {
                theta1: prep.cert.theta1,
                theta2: prep.cert.theta2,
                sigma2: prep.noise.sigma2,
                dist2_init: prep.dist2_init,
                smoothness: Some((prep.noise.rho, prep.lipschitz)),
            };
            let r = match &prep.schedule {
                ScheduleSpec::Constant { eta, horizon } => bounds::decay_bound_constant(&inputs, *eta, *horizon)?,
                spec => bounds::decay_bound_decaying(&inputs, spec)?,
            };
            let limit = r.bound;
            (Some(r), None, limit)
        }
        BoundChoice::Momentum | BoundChoice::Auto => {
            if method != Method::Momentum {
                return Err(HarnessError::Unsupported("the momentum radius needs a momentum run".into()));
            }
            let regime = MomentumRegime::for_run(prep.cert.p, &prep.schedule);
            let alpha = match &prep.schedule {
                ScheduleSpec::Exponential { nu, horizon, .. } => Some(ScheduleSpec::exponential_alpha(*nu, *horizon)),
                _ => None,
            };
            let first = Schedule::new(prep.schedule.clone())?.step(1);
            let r2 = bounds::momentum_radius(
                &prep.cert,
                prep.growth.as_ref(),
                &prep.noise,
                config.optimizer.beta,
                first,
                regime,
                alpha,
            )?;
            (None, Some(MomentumBound { regime, cap: prep.audit.cap_value, r2 }), r2)
        }
    };
    Ok(BoundArtifact {
        choice,
        cert: prep.cert,
        growth: prep.growth,
        noise: prep.noise,
        lipschitz: prep.lipschitz,
        dist2_init: prep.dist2_init,
        audit: prep.audit.clone(),
        report,
        momentum,
        limit,
    })
}

// ---------------------------------------------------------------- checks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    pub observed: f64,
    pub limit: f64,
    pub note: String,
}

fn run_checks(
    config: &ExperimentConfig,
    prep: &Prepared,
    bound: &BoundArtifact,
    ensemble: &Ensemble,
) -> Result<(Vec<CheckResult>, Option<LyapunovTest>), HarnessError> {
    let s = &ensemble.summary;
    let params = &config.check_params;
    let mut results = Vec::new();
    let mut lyapunov = None;
    for &check in &config.checks {
        let result = match check {
            Check::Boundedness => {
                if bound.report.is_none() {
                    return Err(HarnessError::Unsupported("boundedness needs a closed-form bound".into()));
                }
                CheckResult {
                    check,
                    passed: !s.diverged && s.mean_sup_dist2 <= bound.limit,
                    observed: s.mean_sup_dist2,
                    limit: bound.limit,
                    note: "mean over seeds of sup_k dist2".into(),
                }
            }
            Check::NoDivergence => CheckResult {
                check,
                passed: !s.diverged,
                observed: s.diverged_seeds.len() as f64,
                limit: 0.0,
                note: "trajectories stopped by the divergence guard".into(),
            },
            Check::Proxy => {
                let d = optimize::boundedness_proxy(&s.dist2.mean, params.proxy_k0, params.proxy_factor);
                let f = optimize::boundedness_proxy(&s.fgap.mean, params.proxy_k0, params.proxy_factor);
                let ratio = (d.late_max / d.early_max).max(f.late_max / f.early_max);
                CheckResult {
                    check,
                    passed: !s.diverged && d.passed && f.passed,
                    observed: ratio,
                    limit: params.proxy_factor,
                    note: format!("late/early max of mean dist2 and fgap after k = {}", params.proxy_k0),
                }
            }
            Check::Lyapunov => {
                let m = bound
                    .momentum
                    .as_ref()
                    .ok_or_else(|| HarnessError::Unsupported("the Lyapunov test needs a momentum run".into()))?;
                let k_min = params.lyapunov_k_min.or(prep.audit.cap_entry).unwrap_or(s.len);
                let test = optimize::lyapunov_decrease_test(ensemble, m.r2, params.confidence, k_min)?;
                let r = CheckResult {
                    check,
                    passed: !s.diverged && test.passed,
                    observed: test.violations.len() as f64,
                    limit: 0.0,
                    note: format!("{} iterates from k = {k_min} with mean dist2 >= r2 tested", test.tested),
                };
                lyapunov = Some(test);
                r
            }
            Check::Decay => {
                if bound.choice != BoundChoice::Decay {
                    return Err(HarnessError::Unsupported("the decay check needs the decay bound".into()));
                }
                let last = s.dist2.mean.last().copied().unwrap_or(f64::INFINITY);
                let limit = bound.limit * (1.0 + params.decay_tolerance);
                CheckResult {
                    check,
                    passed: !s.diverged && last <= limit,
                    observed: last,
                    limit,
                    note: format!("final mean dist2 against the bound times 1 + {}", params.decay_tolerance),
                }
            }
        };
        results.push(result);
    }
    Ok((results, lyapunov))
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub problem: String,
    pub method: Method,
    pub cap_override: bool,
    pub lyapunov_form: LyapunovForm,
    pub checks: Vec<CheckResult>,
    pub lyapunov: Option<LyapunovTest>,
    pub summary: EnsembleSummary,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Result of one in-memory run, before anything is written.
pub struct RunOutcome {
    pub prepared: Prepared,
    pub bound: BoundArtifact,
    pub ensemble: Ensemble,
    pub report: RunReport,
}

pub fn execute(config: &ExperimentConfig, override_cap: bool) -> Result<RunOutcome, HarnessError> {
    let prep = prepare(config, override_cap)?;
    let bound = evaluate_bound(config, &prep)?;
    let schedule = Schedule::new(prep.schedule.clone())?;
    let form = if prep.cert.p < 2.0 { LyapunovForm::Generalized } else { LyapunovForm::Quadratic };
    let opt = OptimizerConfig {
        method: config.optimizer.method,
        beta: config.optimizer.beta,
        oracle: config.oracle(),
        seed: 0,
        x1: prep.x1.clone(),
        lyapunov: form,
    };
    let ensemble = optimize::run_ensemble(&prep.problem, &schedule, &opt, &prep.seeds, config.execution)?;
    let (checks, lyapunov) = run_checks(config, &prep, &bound, &ensemble)?;
    let report = RunReport {
        problem: prep.problem.name().to_string(),
        method: config.optimizer.method,
        cap_override: !prep.audit.cap_satisfied,
        lyapunov_form: form,
        checks,
        lyapunov,
        summary: ensemble.summary.clone(),
    };
    Ok(RunOutcome { prepared: prep, bound, ensemble, report })
}

/// Names of the files written by [`write_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub trajectories: Vec<PathBuf>,
    pub ensemble: PathBuf,
    pub bound: PathBuf,
    pub plot: PathBuf,
}

pub fn write_run(outcome: &RunOutcome, dir: &Path) -> Result<RunArtifacts, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut trajectories = Vec::new();
    for t in &outcome.ensemble.trajectories {
        let path = dir.join(format!("trajectory_{}.csv", t.seed));
        let file = fs::File::create(&path)?;
        t.write_csv(std::io::BufWriter::new(file))?;
        trajectories.push(path);
    }
    let ensemble = dir.join("ensemble.json");
    fs::write(&ensemble, serde_json::to_string_pretty(&outcome.report)? + "\n")?;
    let bound = dir.join("bound.json");
    fs::write(&bound, serde_json::to_string_pretty(&outcome.bound)? + "\n")?;
    let plot = dir.join("dist2.svg");
    let label = match outcome.bound.choice {
        BoundChoice::Momentum => "Lyapunov radius r2",
        _ => "bound",
    };
    fs::write(&plot, render_svg(&outcome.report.summary.dist2.mean, outcome.bound.limit, label))?;
    Ok(RunArtifacts { trajectories, ensemble, bound, plot })
}

#[derive(Debug, Serialize)]
struct FailureDoc<'a> {
    status: &'static str,
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed: Option<Vec<&'a CheckResult>>,
}

fn config_failure(err: &HarnessError, out: Option<&Path>) -> i32 {
    let doc = FailureDoc { status: "config_error", kind: err.kind(), message: err.to_string(), failed: None };
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
    eprintln!("{text}");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("failure.json"), text + "\n");
        }
    }
    EXIT_CONFIG
}

fn check_failure(checks: &[CheckResult], dir: &Path) -> Result<i32, HarnessError> {
    let failed: Vec<&CheckResult> = checks.iter().filter(|c| !c.passed).collect();
    let doc = FailureDoc {
        status: "check_failed",
        kind: "check",
        message: format!("{} of {} checks failed", failed.len(), checks.len()),
        failed: Some(failed),
    };
    let text = serde_json::to_string_pretty(&doc)?;
    eprintln!("{text}");
    fs::write(dir.join("failure.json"), text + "\n")?;
    Ok(EXIT_CHECK_FAILED)
}

// ---------------------------------------------------------------- svg

/// Line chart of `series` against k on a log10 axis with a horizontal rule at `rule`.
pub fn render_svg(series: &[f64], rule: f64, rule_label: &str) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 45.0;
    let positive = series.iter().copied().filter(|v| *v > 0.0 && v.is_finite());
    let hi = positive.clone().fold(rule.max(f64::MIN_POSITIVE), f64::max);
    let lo = positive.fold(hi, f64::min).max(hi * 1e-12).min(if rule > 0.0 { rule } else { hi });
    let (ylo, yhi) = (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0));
    let n = series.len().max(2);
    let x_of = |i: usize| LEFT + (W - LEFT - RIGHT) * i as f64 / (n - 1) as f64;
    let y_of = |v: f64| {
        let l = v.max(lo).log10();
        TOP + (H - TOP - BOTTOM) * (yhi - l) / (yhi - ylo)
    };
    let stride = series.len().div_ceil(1500).max(1);
    let mut points = String::new();
    for (i, v) in series.iter().enumerate() {
        if (i % stride == 0 || i + 1 == series.len()) && v.is_finite() {
            let _ = write!(points, "{:.2},{:.2} ", x_of(i), y_of(*v));
        }
    }
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    let mut e = ylo as i32;
    while e as f64 <= yhi {
        let y = y_of(10f64.powi(e));
        let _ = writeln!(svg, r#"<text x="{:.0}" y="{:.2}" font-size="11" text-anchor="end">1e{e}</text>"#, LEFT - 6.0, y + 4.0);
        e += 1;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.0}" y="{:.0}" font-size="12" text-anchor="middle">k (1 to {})</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 12.0,
        series.len()
    );
    if rule > 0.0 && rule.is_finite() {
        let y = y_of(rule);
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT}" y1="{y:.2}" x2="{:.0}" y2="{y:.2}" stroke="firebrick" stroke-dasharray="6,4"/>"#,
            W - RIGHT
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.0}" y="{:.2}" font-size="11" fill="firebrick" text-anchor="end">{} = {}</text>"#,
            W - RIGHT - 4.0,
            y - 4.0,
            xml_escape(rule_label),
            optimize::fmt_float(rule)
        );
    }
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.trim_end());
    let _ = writeln!(svg, r#"<text x="{LEFT}" y="14" font-size="12">mean dist2 over seeds</text>"#);
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---------------------------------------------------------------- commands

/// Command-line tool for the experiment harness.
#[derive(Debug, Parser)]
#[command(name = "sgdbound", version, about = "Boundedness experiments for SGD and momentum SGD")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the ensemble, write artifacts and run the enabled checks.
    Run(CommonArgs),
    /// Verify the problem's certificates and estimate oracle noise.
    Certify(CommonArgs),
    /// Print the bound and its hypothesis table without simulating.
    Bound(CommonArgs),
    /// Repeat `run` over values of one numeric config entry.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Dotted path of a numeric config entry, e.g. `optimizer.additive_sigma2`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of seeds derived from the master seed; overrides `seeds`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Run even when the schedule exceeds the step-size cap.
    #[arg(long)]
    pub override_cap: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<(toml::Value, PathBuf), HarnessError> {
        if !self.config.exists() {
            return Err(HarnessError::MissingFile(self.config.clone()));
        }
        let value: toml::Value = toml::from_str(&fs::read_to_string(&self.config)?)?;
        Ok((value, self.config.parent().unwrap_or(Path::new(".")).to_path_buf()))
    }

    fn apply(&self, mut config: ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        if let Some(dir) = &self.out {
            config.outputs.dir = dir.clone();
        }
        if let Some(n) = self.seeds {
            config.seeds = SeedConfig { list: None, master: config.seeds.master, count: Some(n) };
        }
        config.validate()?;
        Ok(config)
    }

    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let (value, base) = self.load()?;
        self.apply(parse_value(value, &base)?)
    }

    fn out_dir(&self) -> Option<PathBuf> {
        self.out.clone()
    }
}

fn parse_value(value: toml::Value, base: &Path) -> Result<ExperimentConfig, HarnessError> {
    ExperimentConfig::from_toml_str(&toml::to_string(&value)?, base)
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(a) => finish(cmd_run(&a), a.out_dir()),
        Command::Certify(a) => finish(cmd_certify(&a), a.out_dir()),
        Command::Bound(a) => finish(cmd_bound(&a), a.out_dir()),
        Command::Sweep { common, axis, values } => finish(cmd_sweep(&common, &axis, &values), common.out_dir()),
    }
}

fn finish(result: Result<i32, HarnessError>, out: Option<PathBuf>) -> i32 {
    result.unwrap_or_else(|e| config_failure(&e, out.as_deref()))
}

pub fn cmd_run(args: &CommonArgs) -> Result<i32, HarnessError> {
    let config = args.config()?;
    let outcome = execute(&config, args.override_cap)?;
    let dir = &config.outputs.dir;
    write_run(&outcome, dir)?;
    for c in &outcome.report.checks {
        println!("{:<14} {:<4} observed {} limit {}", format!("{:?}", c.check), if c.passed { "ok" } else { "FAIL" }, optimize::fmt_float(c.observed), optimize::fmt_float(c.limit));
    }
    if outcome.report.passed() {
        Ok(EXIT_OK)
    } else {
        check_failure(&outcome.report.checks, dir)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyArtifact {
    pub problem: String,
    pub dissipativity: CertReport,
    pub growth: Option<CertReport>,
    pub noise: Option<NoiseEstimate>,
    pub noise_envelope_holds: Option<bool>,
    pub passed: bool,
}

pub fn cmd_certify(args: &CommonArgs) -> Result<i32, HarnessError> {
    let config = args.config()?;
    let problem = build_problem(&config.problem)?;
    let cert = *problem.cert();
    let plan = ShellSamplingPlan::for_radius(cert.radius).with_seed(config.seeds.master);
    let dissipativity = certify::verify_dissipativity(&problem, &cert, &plan)?;
    let growth = problem
        .growth()
        .map(|g| certify::verify_growth(&problem, g, &ShellSamplingPlan::default().with_seed(config.seeds.master)))
        .transpose()?;
    let noise = match (config.optimizer.batch_size, config.problem.noise) {
        (Some(_), None) => {
            let x1 = initial_point(&config.optimizer.init, &problem)?;
            match noise_constants(&config, &problem, &x1, config.seeds.master)?.1 {
                NoiseSource::Estimated(e) => Some(e),
                _ => None,
            }
        }
        _ => None,
    };
    let envelope = noise.as_ref().map(NoiseEstimate::envelope_holds);
    let passed = dissipativity.passed && growth.as_ref().is_none_or(|g| g.passed) && envelope.unwrap_or(true);
    let artifact = CertifyArtifact {
        problem: problem.name().to_string(),
        dissipativity,
        growth,
        noise,
        noise_envelope_holds: envelope,
        passed,
    };
    let dir = &config.outputs.dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("certify.json"), serde_json::to_string_pretty(&artifact)? + "\n")?;
    println!(
        "dissipativity  {:<4} worst slack {}",
        if artifact.dissipativity.passed { "ok" } else { "FAIL" },
        optimize::fmt_float(artifact.dissipativity.worst_violation)
    );
    if let Some(g) = &artifact.growth {
        println!("growth         {:<4} worst slack {}", if g.passed { "ok" } else { "FAIL" }, optimize::fmt_float(g.worst_violation));
    }
    if let (Some(n), Some(ok)) = (&artifact.noise, envelope) {
        println!("noise          {:<4} rho {} sigma2 {}", if ok { "ok" } else { "FAIL" }, optimize::fmt_float(n.cert.rho), optimize::fmt_float(n.cert.sigma2));
    }
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// Plain-text hypothesis table for a bound artifact.
pub fn hypothesis_table(b: &BoundArtifact) -> String {
    let mut out = String::new();
    let f = optimize::fmt_float;
    let _ = writeln!(out, "{:<32} {}", "choice", format!("{:?}", b.choice).to_lowercase());
    let _ = writeln!(out, "{:<32} {}", "theta1", f(b.cert.theta1));
    let _ = writeln!(out, "{:<32} {}", "theta2", f(b.cert.theta2));
    let _ = writeln!(out, "{:<32} {}", "R", f(b.cert.radius));
    let _ = writeln!(out, "{:<32} {}", "p", f(b.cert.p));
    let _ = writeln!(out, "{:<32} {}", "rho", f(b.noise.rho));
    let _ = writeln!(out, "{:<32} {}", "sigma2", f(b.noise.sigma2));
    let _ = writeln!(out, "{:<32} {}", "L", f(b.lipschitz));
    let _ = writeln!(out, "{:<32} {}", "cap", f(b.audit.cap_value));
    let _ = writeln!(out, "{:<32} {}", "max step", f(b.audit.max_step));
    let _ = writeln!(out, "{:<32} {}", "step within cap", if b.audit.cap_satisfied { "yes" } else { "no" });
    for c in &b.audit.theorem_conditions {
        let _ = writeln!(out, "{:<32} {} (required {}, actual {})", c.name, if c.passed { "yes" } else { "no" }, f(c.required), f(c.actual));
    }
    if let Some(r) = &b.report {
        let _ = writeln!(out, "{:<32} {:?}", "formula", r.formula_id);
        for h in &r.hypotheses {
            let _ = writeln!(out, "{:<32} {}", h.name, if h.satisfied { "yes" } else { "no" });
        }
        for t in &r.terms {
            let _ = writeln!(out, "{:<32} {}", t.name, f(t.value));
        }
        let _ = writeln!(out, "{:<32} {}", "r2", f(r.r2));
        let _ = writeln!(out, "{:<32} {}", "bound", f(r.bound));
        if let Some(c) = r.companion {
            let _ = writeln!(out, "{:<32} {}", "companion", f(c));
        }
    }
    if let Some(m) = &b.momentum {
        let _ = writeln!(out, "{:<32} {}", "regime", m.regime);
        let _ = writeln!(out, "{:<32} {}", "r2", f(m.r2));
    }
    let _ = writeln!(out, "{:<32} {}", "limit", f(b.limit));
    out
}

pub fn cmd_bound(args: &CommonArgs) -> Result<i32, HarnessError> {
    let config = args.config()?;
    // the bound is reported even for schedules above the cap; the table says so
    let prep = prepare(&config, true)?;
    let bound = evaluate_bound(&config, &prep)?;
    print!("{}", hypothesis_table(&bound));
    let dir = &config.outputs.dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("bound.json"), serde_json::to_string_pretty(&bound)? + "\n")?;
    Ok(EXIT_OK)
}

/// Replaces the numeric leaf at dotted `path` with `value`, keeping integer leaves integral.
pub fn set_numeric_leaf(root: &mut toml::Value, path: &str, value: f64) -> Result<(), HarnessError> {
    let mut node = root;
    for part in path.split('.') {
        node = match node {
            toml::Value::Table(t) => t.get_mut(part),
            toml::Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| config_err(format!("sweep axis `{path}` not found in the config")))?;
    }
    match node {
        toml::Value::Float(f) => *f = value,
        toml::Value::Integer(i) => {
            if value.fract() != 0.0 || value.abs() > i64::MAX as f64 {
                return Err(config_err(format!("axis `{path}` is an integer, {value} is not")));
            }
            *i = value as i64;
        }
        other => return Err(config_err(format!("axis `{path}` is not numeric (found {})", other.type_str()))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_sup_dist2: f64,
    pub bound: f64,
    pub cap_satisfied: bool,
    pub pass: bool,
}

pub fn sweep_rows(args: &CommonArgs, axis: &str, values: &[f64]) -> Result<(Vec<SweepRow>, PathBuf), HarnessError> {
    let (root, base) = args.load()?;
    let base_config = args.apply(parse_value(root, &base)?)?;
    let dir = base_config.outputs.dir.clone();
    // sweep over the config with defaults filled in, so defaulted entries are addressable
    let root: toml::Value = toml::from_str(&base_config.to_toml_string()?)?;
    let mut rows = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let mut v = root.clone();
        set_numeric_leaf(&mut v, axis, value)?;
        let config = args.apply(parse_value(v, &base)?)?;
        let outcome = execute(&config, args.override_cap)?;
        write_run(&outcome, &dir.join(format!("point_{i}")))?;
        rows.push(SweepRow {
            value,
            mean_sup_dist2: outcome.report.summary.mean_sup_dist2,
            bound: outcome.bound.limit,
            cap_satisfied: outcome.prepared.audit.cap_satisfied,
            pass: outcome.report.passed(),
        });
    }
    Ok((rows, dir))
}

pub fn cmd_sweep(args: &CommonArgs, axis: &str, values: &[f64]) -> Result<i32, HarnessError> {
    let (rows, dir) = sweep_rows(args, axis, values)?;
    fs::create_dir_all(&dir)?;
    let mut wr = csv::Writer::from_path(dir.join("sweep.csv")).map_err(|e| HarnessError::Io(e.into()))?;
    let write = |wr: &mut csv::Writer<fs::File>, rec: &[String]| wr.write_record(rec).map_err(|e| HarnessError::Io(e.into()));
    write(&mut wr, &["value", "mean_sup_dist2", "bound", "cap_satisfied", "pass"].map(String::from))?;
    for r in &rows {
        write(
            &mut wr,
            &[
                optimize::fmt_float(r.value),
                optimize::fmt_float(r.mean_sup_dist2),
                optimize::fmt_float(r.bound),
                r.cap_satisfied.to_string(),
                r.pass.to_string(),
            ],
        )?;
        println!("{} = {}: sup {} bound {} {}", axis, r.value, r.mean_sup_dist2, r.bound, if r.pass { "ok" } else { "FAIL" });
    }
    wr.flush()?;
    Ok(if rows.iter().all(|r| r.pass) { EXIT_OK } else { EXIT_CHECK_FAILED })
}

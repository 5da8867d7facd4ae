//! SGD and heavy-ball SGD trajectories, Lyapunov values, seeded ensembles and
//! the statistical checks run on them.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::bounds::gamma_beta;
use crate::linalg::dist_sq;
use crate::par::{map_ordered, Execution};
use crate::problems::{OracleSpec, Problem};
use crate::schedules::Schedule;

/// Squared distance at which a run is stopped and marked diverged.
pub const DIVERGENCE_DIST2: f64 = 1e12;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("initial point has dimension {got}, problem has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("momentum beta = {0} must lie in (0, 1)")]
    Beta(f64),
    #[error("Lyapunov values exist only for momentum runs")]
    NotMomentum,
    #[error("an ensemble needs at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `x - eta g`, one multiply-subtract per component.
pub fn sgd_step(x: &mut [f64], eta: f64, g: &[f64]) {
    x.iter_mut().zip(g).for_each(|(xi, gi)| *xi = (-eta).mul_add(*gi, *xi));
}

/// `v <- beta v + (1 - beta) g`, then `x <- x - eta v`.
pub fn momentum_step(x: &mut [f64], v: &mut [f64], eta: f64, beta: f64, g: &[f64]) {
    for ((xi, vi), gi) in x.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = beta * *vi + (1.0 - beta) * gi;
        *xi = (-eta).mul_add(*vi, *xi);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Momentum,
}

/// Which Lyapunov function a momentum run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovForm {
    /// Shifted-iterate distance, consecutive-iterate distance and weighted gap.
    #[default]
    Quadratic,
    /// Adds the `c_{k+1} ||x_{k+1} - x*||^2` term used with sub-quadratic dissipativity.
    Generalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub seed: u64,
    pub x1: Vec<f64>,
    #[serde(default)]
    pub lyapunov: LyapunovForm,
}

fn default_beta() -> f64 {
    0.9
}

impl OptimizerConfig {
    pub fn sgd(x1: Vec<f64>, oracle: OracleSpec) -> Self {
        Self { method: Method::Sgd, beta: default_beta(), oracle, seed: 0, x1, lyapunov: LyapunovForm::Quadratic }
    }

    pub fn momentum(x1: Vec<f64>, beta: f64, oracle: OracleSpec) -> Self {
        Self { method: Method::Momentum, beta, oracle, seed: 0, x1, lyapunov: LyapunovForm::Quadratic }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lyapunov(mut self, form: LyapunovForm) -> Self {
        self.lyapunov = form;
        self
    }
}

/// Inputs of one Lyapunov value `W_{k+1}`.
#[derive(Debug, Clone, Copy)]
pub struct LyapunovPoint<'a> {
    pub x_next: &'a [f64],
    pub x_curr: &'a [f64],
    pub x_star: &'a [f64],
    /// `f(x_k) - f*`
    pub fgap_curr: f64,
    pub eta: f64,
    /// `eta_k / eta_{k-1}`, 1 for constant steps and at k = 1.
    pub tau: f64,
    pub beta: f64,
}

/// `W_{k+1} = ||x~_{k+1} - x*||^2 [+ c_{k+1} ||x_{k+1} - x*||^2] + ||x_{k+1} - x_k||^2 + u_k (f(x_k) - f*)`
/// with `x~_{k+1} = (x_{k+1} - beta x_k)/(1 - beta)`.
pub fn lyapunov_w(pt: &LyapunovPoint<'_>, form: LyapunovForm) -> f64 {
    let b = pt.beta;
    let shifted: f64 = pt
        .x_next
        .iter()
        .zip(pt.x_curr)
        .zip(pt.x_star)
        .map(|((xn, xc), xs)| {
            let d = (xn - b * xc) / (1.0 - b) - xs;
            d * d
        })
        .sum();
    let step = dist_sq(pt.x_next, pt.x_curr);
    let gamma = gamma_beta(b);
    match form {
        LyapunovForm::Quadratic => shifted + step + 2.0 * gamma * pt.eta * pt.tau * pt.fgap_curr,
        LyapunovForm::Generalized => {
            let c = (1.0 - pt.tau) / (pt.tau * (1.0 - b));
            let u = 2.0 * gamma * pt.tau * pt.eta + 2.0 * b * (1.0 - b) * pt.tau * pt.eta * c;
            shifted + c * dist_sq(pt.x_next, pt.x_star) + step + u * pt.fgap_curr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// `dist2` exceeded the divergence threshold at iterate `k`.
    Diverged { k: usize },
    /// The oracle returned a non-finite vector at iterate `k`.
    NonFinite { k: usize },
}

/// Per-iterate records for `k = 1, ..., T + 1`; index `i` holds iterate `k = i + 1`.
/// Arrays are shorter when the run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub method: Method,
    pub status: RunStatus,
    /// `eta_k`; none for the final iterate.
    pub stepsize: Vec<Option<f64>>,
    pub dist2: Vec<f64>,
    pub fgap: Vec<f64>,
    /// `W_k` for `k >= 2`, momentum runs only.
    pub w: Vec<Option<f64>>,
    /// Running maximum of `dist2`.
    pub sup_dist2: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.dist2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist2.is_empty()
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn final_sup_dist2(&self) -> f64 {
        self.sup_dist2.last().copied().unwrap_or(0.0)
    }

    /// `W_k` for 1-indexed `k`.
    pub fn w_at(&self, k: usize) -> Result<Option<f64>, OptimizeError> {
        if self.method != Method::Momentum {
            return Err(OptimizeError::NotMomentum);
        }
        Ok(k.checked_sub(1).and_then(|i| self.w.get(i).copied().flatten()))
    }

    /// CSV with header `k,stepsize,dist2,fgap,W`; floats in shortest round-trip form,
    /// missing values as empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), OptimizeError> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["k", "stepsize", "dist2", "fgap", "W"])?;
        let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
        for i in 0..self.len() {
            wr.write_record([
                (i + 1).to_string(),
                opt(self.stepsize[i]),
                fmt_float(self.dist2[i]),
                fmt_float(self.fgap[i]),
                opt(self.w[i]),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Shortest decimal string that parses back to the same double.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// Runs one trajectory of `schedule.horizon()` steps.
pub fn run_trajectory(problem: &Problem, schedule: &Schedule, config: &OptimizerConfig) -> Result<Trajectory, OptimizeError> {
    let d = problem.dim();
    if config.x1.len() != d {
        return Err(OptimizeError::Dimension { expected: d, got: config.x1.len() });
    }
    let momentum = config.method == Method::Momentum;
    if momentum && !(config.beta > 0.0 && config.beta < 1.0) {
        return Err(OptimizeError::Beta(config.beta));
    }
    let horizon = schedule.horizon();
    let f_star = problem.f_star();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = config.x1.clone();
    let mut x_prev = x.clone();
    let mut v = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut batch = Vec::new();

    let cap = horizon + 1;
    let mut traj = Trajectory {
        seed: config.seed,
        method: config.method,
        status: RunStatus::Completed,
        stepsize: Vec::with_capacity(cap),
        dist2: Vec::with_capacity(cap),
        fgap: Vec::with_capacity(cap),
        w: Vec::with_capacity(cap),
        sup_dist2: Vec::with_capacity(cap),
    };
    let mut sup = 0.0f64;
    let mut prev_fgap = 0.0;
    for k in 1..=cap {
        let dist2 = problem.dist2(&x);
        let fgap = problem.value(&x) - f_star;
        let w = if momentum && k >= 2 {
            let pt = LyapunovPoint {
                x_next: &x,
                x_curr: &x_prev,
                x_star: problem.nearest_optimum(&x),
                fgap_curr: prev_fgap,
                eta: schedule.step(k - 1),
                tau: schedule.tau(k - 1),
                beta: config.beta,
            };
            Some(lyapunov_w(&pt, config.lyapunov))
        } else {
            None
        };
        sup = sup.max(dist2);
        traj.stepsize.push((k <= horizon).then(|| schedule.step(k)));
        traj.dist2.push(dist2);
        traj.fgap.push(fgap);
        traj.w.push(w);
        traj.sup_dist2.push(sup);
        if !(dist2 <= DIVERGENCE_DIST2) {
            traj.status = RunStatus::Diverged { k };
            break;
        }
        if k > horizon {
            break;
        }
        problem.sample_gradient(&x, &config.oracle, &mut rng, &mut batch, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            traj.status = RunStatus::NonFinite { k };
            break;
        }
        let eta = schedule.step(k);
        if momentum {
            x_prev.copy_from_slice(&x);
            momentum_step(&mut x, &mut v, eta, config.beta, &g);
        } else {
            sgd_step(&mut x, eta, &g);
        }
        prev_fgap = fgap;
    }
    Ok(traj)
}

/// Mean and normal-approximation 95% interval of one per-iterate quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

impl SeriesStats {
    fn from_columns(len: usize, n: usize, value: impl Fn(usize, usize) -> f64) -> Self {
        let mut s = SeriesStats::default();
        for i in 0..len {
            let mean = (0..n).map(|j| value(j, i)).sum::<f64>() / n as f64;
            let var = (0..n).map(|j| (value(j, i) - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let half = Z95 * (var / n as f64).sqrt();
            s.mean.push(mean);
            s.ci_lo.push(mean - half);
            s.ci_hi.push(mean + half);
        }
        s
    }
}

/// Seed-averaged statistics, members merged in ascending seed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub seeds: Vec<u64>,
    /// Iterates `k = 1..=len` common to every member.
    pub len: usize,
    pub stepsize: Vec<Option<f64>>,
    pub dist2: SeriesStats,
    pub fgap: SeriesStats,
    /// Present for momentum runs, over `k >= 2` (entry 0 is `k = 2`).
    pub w: Option<SeriesStats>,
    pub mean_sup_dist2: f64,
    pub max_sup_dist2: f64,
    pub diverged: bool,
    pub diverged_seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    /// Sorted by seed.
    pub trajectories: Vec<Trajectory>,
    pub summary: EnsembleSummary,
}

/// Runs one trajectory per seed and reduces them deterministically.
pub fn run_ensemble(
    problem: &Problem,
    schedule: &Schedule,
    config: &OptimizerConfig,
    seeds: &[u64],
    execution: Execution,
) -> Result<Ensemble, OptimizeError> {
    if seeds.len() < 2 {
        return Err(OptimizeError::TooFewSeeds(seeds.len()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    let runs = map_ordered(&sorted, execution, |&seed| {
        run_trajectory(problem, schedule, &OptimizerConfig { seed, ..config.clone() })
    });
    let trajectories = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&trajectories);
    Ok(Ensemble { trajectories, summary })
}

/// Reduction over member trajectories in the given order.
pub fn summarize(trajectories: &[Trajectory]) -> EnsembleSummary {
    let n = trajectories.len();
    let len = trajectories.iter().map(Trajectory::len).min().unwrap_or(0);
    let dist2 = SeriesStats::from_columns(len, n, |j, i| trajectories[j].dist2[i]);
    let fgap = SeriesStats::from_columns(len, n, |j, i| trajectories[j].fgap[i]);
    let momentum = trajectories.first().is_some_and(|t| t.method == Method::Momentum);
    let w = (momentum && len >= 2).then(|| {
        SeriesStats::from_columns(len - 1, n, |j, i| trajectories[j].w[i + 1].unwrap_or(f64::NAN))
    });
    let sups: Vec<f64> = trajectories.iter().map(Trajectory::final_sup_dist2).collect();
    let diverged_seeds: Vec<u64> = trajectories.iter().filter(|t| !t.completed()).map(|t| t.seed).collect();
    EnsembleSummary {
        seeds: trajectories.iter().map(|t| t.seed).collect(),
        len,
        stepsize: trajectories.first().map(|t| t.stepsize[..len].to_vec()).unwrap_or_default(),
        dist2,
        fgap,
        w,
        mean_sup_dist2: sups.iter().sum::<f64>() / n.max(1) as f64,
        max_sup_dist2: sups.iter().copied().fold(0.0, f64::max),
        diverged: !diverged_seeds.is_empty(),
        diverged_seeds,
    }
}

impl EnsembleSummary {
    pub fn to_json(&self) -> Result<String, OptimizeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Largest per-iterate mean of `dist2`.
    pub fn sup_mean_dist2(&self) -> f64 {
        self.dist2.mean.iter().copied().fold(0.0, f64::max)
    }
}

/// One iterate where the Lyapunov value rose significantly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovViolation {
    pub k: usize,
    pub mean_increase: f64,
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovTest {
    pub r2: f64,
    pub confidence: f64,
    /// One-sided normal quantile after splitting the error rate over the tested iterates.
    pub z: f64,
    /// Iterates `k` with mean `dist2[k] >= r2` that were tested.
    pub tested: usize,
    /// Tested iterates whose sample mean increase was not negative.
    pub nonnegative_means: usize,
    pub violations: Vec<LyapunovViolation>,
    pub passed: bool,
}

/// Tests `E[W_{k+1}] < E[W_k]` at every `k >= k_min` with mean `dist2[k] >= r2`,
/// using paired per-seed differences. A k fails when the one-sided lower
/// confidence bound of the mean increase is positive; the error rate is split
/// evenly over the tested iterates.
pub fn lyapunov_decrease_test(ensemble: &Ensemble, r2: f64, confidence: f64, k_min: usize) -> Result<LyapunovTest, OptimizeError> {
    let trajs = &ensemble.trajectories;
    let summary = &ensemble.summary;
    if trajs.first().map(|t| t.method) != Some(Method::Momentum) {
        return Err(OptimizeError::NotMomentum);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(OptimizeError::Invalid(format!("confidence {confidence} not in (0, 1)")));
    }
    let n = trajs.len() as f64;
    // W_k and W_{k+1} both exist for 2 <= k <= len - 1
    let ks: Vec<usize> = (k_min.max(2)..summary.len).filter(|&k| summary.dist2.mean[k - 1] >= r2).collect();
    let alpha = (1.0 - confidence) / ks.len().max(1) as f64;
    let z = Normal::standard().inverse_cdf(1.0 - alpha);
    let mut violations = Vec::new();
    let mut nonnegative = 0;
    for &k in &ks {
        let diffs: Vec<f64> = trajs.iter().map(|t| t.w[k].unwrap_or(f64::NAN) - t.w[k - 1].unwrap_or(f64::NAN)).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let lower = mean - z * (var / n).sqrt();
        if !(mean < 0.0) {
            nonnegative += 1;
        }
        if !(lower <= 0.0) {
            violations.push(LyapunovViolation { k, mean_increase: mean, lower_bound: lower });
        }
    }
    Ok(LyapunovTest {
        r2,
        confidence,
        z,
        tested: ks.len(),
        nonnegative_means: nonnegative,
        passed: violations.is_empty(),
        violations,
    })
}

/// Outcome of the boundedness proxy on one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyCheck {
    pub early_max: f64,
    pub late_max: f64,
    pub factor: f64,
    pub passed: bool,
}

/// After iterate `k0` the series never exceeds `factor` times its running max over `k <= k0`.
pub fn boundedness_proxy(series: &[f64], k0: usize, factor: f64) -> ProxyCheck {
    let split = k0.min(series.len());
    let early_max = series[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let late_max = series[split..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ProxyCheck { early_max, late_max, factor, passed: late_max <= factor * early_max }
}

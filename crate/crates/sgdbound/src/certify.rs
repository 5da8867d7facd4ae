//! Certificate conversion between origin and optimum forms, empirical
//! verification by shell sampling, and oracle noise estimation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dist_sq, dot, norm, norm_sq};
use crate::par::{map_ordered, Execution};
use crate::problems::{CertCenter, DissipativityCert, GrowthCert, NoiseCert, OracleSpec, Problem, ProblemError};
use crate::seed::rng_for;

/// Absolute slack below which a sampled inequality counts as violated.
pub const CERT_TOL: f64 = 1e-9;
/// Smallest admissible inner shell radius.
pub const MIN_SHELL_RADIUS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("growth exponent tau = {tau} must be below p = {p}")]
    TauTooLarge { tau: f64, p: f64 },
    #[error("origin-form certificate with p < 2 needs a growth certificate")]
    MissingGrowth,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Converts `<grad f(x), x> >= theta1' ||x||^2 - theta2'` into the optimum form,
/// valid everywhere (R = 0), for an L-smooth objective.
pub fn convert_origin_form(
    theta1p: f64,
    theta2p: f64,
    lipschitz: f64,
    x_star_norm: f64,
) -> Result<DissipativityCert, CertifyError> {
    if !(theta1p > 0.0) || !(lipschitz > 0.0) || !(x_star_norm >= 0.0) || !(theta2p >= 0.0) {
        return Err(CertifyError::Invalid("need theta1' > 0, L > 0, theta2' >= 0, ||x*|| >= 0".into()));
    }
    let correction = if x_star_norm == 0.0 {
        0.0
    } else {
        (theta1p + 2.0 * lipschitz + lipschitz * lipschitz / (2.0 * theta1p)) * x_star_norm * x_star_norm
    };
    DissipativityCert::new(theta1p / 2.0, correction + theta2p, 0.0, 2.0)
        .map_err(|e| CertifyError::Invalid(e.to_string()))
}

/// Result of converting an origin-form generalized certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedConversion {
    /// Optimum-form certificate; its radius is the smallest admissible R.
    pub cert: DissipativityCert,
    /// False when `tau > p/2`: the conversion is valid but the generalized bound does not apply.
    pub within_growth_hypothesis: bool,
}

/// Converts `<grad f(x), x> >= theta1' ||x||^p - theta2'` with a tau-growth
/// gradient into the optimum form, valid for `||x - x*|| >= max{2||x*||, 1}`.
///
/// For `tau = 0` the gradient is bounded by `sqrt(2 theta3)` and the cross term
/// is bounded directly instead of through Young's inequality.
pub fn convert_generalized(
    theta1p: f64,
    theta2p: f64,
    theta3: f64,
    tau: f64,
    p: f64,
    x_star_norm: f64,
) -> Result<GeneralizedConversion, CertifyError> {
    if !(theta1p > 0.0) || !(theta2p >= 0.0) || !(theta3 > 0.0) || !(x_star_norm >= 0.0) || !(tau >= 0.0) {
        return Err(CertifyError::Invalid("need theta1' > 0, theta3 > 0, theta2', tau, ||x*|| >= 0".into()));
    }
    if !(p > 0.0 && p < 2.0) {
        return Err(CertifyError::Invalid(format!("p = {p} must lie in (0, 2)")));
    }
    if tau >= p {
        return Err(CertifyError::TauTooLarge { tau, p });
    }
    let scale = 2f64.powf(p + 1.0);
    let correction = if x_star_norm == 0.0 {
        0.0
    } else if tau == 0.0 {
        (2.0 * theta3).sqrt() * x_star_norm
    } else {
        let exponent = p / (p - tau);
        let s = (theta1p * p / (tau * scale)).powf(tau / p) / (2.0 * theta3).sqrt();
        x_star_norm.powf(exponent) / (s.powf(exponent) * exponent)
    };
    let cert = DissipativityCert::new(theta1p / scale, theta2p + correction, (2.0 * x_star_norm).max(1.0), p)
        .map_err(|e| CertifyError::Invalid(e.to_string()))?;
    Ok(GeneralizedConversion { cert, within_growth_hypothesis: tau <= p / 2.0 })
}

/// The optimum-form certificate for `problem`, converting an origin-form one when needed.
/// An origin-form certificate is used unchanged when the minimizer is the origin.
pub fn optimum_form_cert(problem: &Problem) -> Result<DissipativityCert, CertifyError> {
    let cert = *problem.cert();
    if cert.center == CertCenter::Optimum {
        return Ok(cert);
    }
    let x_star_norm = norm(problem.optimum());
    if x_star_norm == 0.0 && problem.optima().len() == 1 {
        // about the origin and about x* = 0 are the same inequality
        return Ok(DissipativityCert { center: CertCenter::Optimum, ..cert });
    }
    if cert.p == 2.0 {
        convert_origin_form(cert.theta1, cert.theta2, problem.smoothness().value(), x_star_norm)
    } else {
        let g = problem.growth().ok_or(CertifyError::MissingGrowth)?;
        Ok(convert_generalized(cert.theta1, cert.theta2, g.theta3, g.tau, cert.p, x_star_norm)?.cert)
    }
}

/// Shells `[r_t, r_{t+1}]` of a geometric grid on `[r_lo, r_hi]`; within a shell
/// radii are log-uniform and directions uniform on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellSamplingPlan {
    pub r_lo: f64,
    pub r_hi: f64,
    pub shells: usize,
    pub samples_per_shell: usize,
    pub rng_seed: u64,
    /// Extra unit directions evaluated at every shell's outer radius.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub directions: Vec<Vec<f64>>,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for ShellSamplingPlan {
    fn default() -> Self {
        Self {
            r_lo: 0.01,
            r_hi: 100.0,
            shells: 40,
            samples_per_shell: 256,
            rng_seed: 0,
            directions: Vec::new(),
            execution: Execution::Auto,
        }
    }
}

impl ShellSamplingPlan {
    /// Default plan with the inner radius raised to the certificate radius.
    pub fn for_radius(radius: f64) -> Self {
        let mut plan = Self::default();
        plan.r_lo = plan.r_lo.max(radius);
        plan.r_hi = plan.r_hi.max(10.0 * plan.r_lo);
        plan
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self, cert_radius: f64) -> Result<(), CertifyError> {
        if !(self.r_lo >= MIN_SHELL_RADIUS.max(cert_radius)) {
            return Err(CertifyError::Invalid(format!(
                "inner radius {} below max(R, {MIN_SHELL_RADIUS}) = {}",
                self.r_lo,
                MIN_SHELL_RADIUS.max(cert_radius)
            )));
        }
        if !(self.r_hi >= 10.0 * self.r_lo) || !self.r_hi.is_finite() {
            return Err(CertifyError::Invalid("outer radius must be at least 10x the inner one".into()));
        }
        if self.shells == 0 || self.samples_per_shell == 0 {
            return Err(CertifyError::Invalid("need at least one shell and one sample".into()));
        }
        Ok(())
    }

    /// Shell boundaries, `shells + 1` values.
    pub fn radii(&self) -> Vec<f64> {
        let ratio = (self.r_hi / self.r_lo).ln();
        (0..=self.shells)
            .map(|t| if t == self.shells { self.r_hi } else { self.r_lo * (ratio * t as f64 / self.shells as f64).exp() })
            .collect()
    }

    /// Offsets sampled in shell `t`.
    fn shell_offsets(&self, t: usize, dim: usize) -> Vec<Vec<f64>> {
        let radii = self.radii();
        let (lo, hi) = (radii[t].ln(), radii[t + 1].ln());
        let mut rng = rng_for(self.rng_seed, t as u64);
        let mut out = Vec::with_capacity(self.samples_per_shell + self.directions.len());
        for _ in 0..self.samples_per_shell {
            let r = (lo + (hi - lo) * rng.random::<f64>()).exp();
            let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let len = norm(&u);
            u.iter_mut().for_each(|v| *v *= r / len);
            out.push(u);
        }
        for d in &self.directions {
            let len = norm(d);
            out.push(d.iter().map(|v| v * radii[t + 1] / len).collect());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertKind {
    Dissipativity,
    Growth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub kind: CertKind,
    /// Most negative slack found.
    pub worst_violation: f64,
    pub worst_point: Vec<f64>,
    /// Distance of `worst_point` from the certificate center.
    pub worst_radius: f64,
    pub shells_checked: usize,
    pub samples_checked: usize,
    pub tol: f64,
    pub passed: bool,
}

struct ShellResult {
    worst: f64,
    point: Vec<f64>,
    radius: f64,
    samples: usize,
}

fn sweep<F>(problem: &Problem, center: &[f64], plan: &ShellSamplingPlan, kind: CertKind, slack: F) -> CertReport
where
    F: Fn(&[f64], &[f64]) -> (f64, f64) + Sync + Send,
{
    let shells: Vec<usize> = (0..plan.shells).collect();
    let results = map_ordered(&shells, plan.execution, |&t| {
        let mut best = ShellResult { worst: f64::INFINITY, point: Vec::new(), radius: 0.0, samples: 0 };
        let mut x = vec![0.0; problem.dim()];
        let mut g = vec![0.0; problem.dim()];
        for offset in plan.shell_offsets(t, problem.dim()) {
            x.iter_mut().zip(center).zip(&offset).for_each(|((xi, c), o)| *xi = c + o);
            problem.gradient(&x, &mut g);
            let (s, r) = slack(&x, &g);
            best.samples += 1;
            // NaN slack counts as a violation
            if s < best.worst || (s.is_nan() && !best.worst.is_nan()) {
                best = ShellResult { worst: s, point: x.clone(), radius: r, samples: best.samples };
            }
        }
        best
    });
    let samples = results.iter().map(|r| r.samples).sum();
    let worst = results
        .into_iter()
        .reduce(|a, b| if b.worst < a.worst || (b.worst.is_nan() && !a.worst.is_nan()) { b } else { a })
        .expect("at least one shell");
    CertReport {
        kind,
        passed: worst.worst >= -CERT_TOL,
        worst_violation: worst.worst,
        worst_point: worst.point,
        worst_radius: worst.radius,
        shells_checked: plan.shells,
        samples_checked: samples,
        tol: CERT_TOL,
    }
}

/// `min <grad f(x), x - c> - theta1 ||x - c||^p + theta2` over the plan, where `c`
/// is the origin or the nearest optimum according to `cert.center`.
pub fn verify_dissipativity(
    problem: &Problem,
    cert: &DissipativityCert,
    plan: &ShellSamplingPlan,
) -> Result<CertReport, CertifyError> {
    plan.validate(cert.radius)?;
    let origin = vec![0.0; problem.dim()];
    let center: &[f64] = match cert.center {
        CertCenter::Origin => &origin,
        CertCenter::Optimum => problem.optimum(),
    };
    let (theta1, theta2, p, by_optimum) = (cert.theta1, cert.theta2, cert.p, cert.center == CertCenter::Optimum);
    Ok(sweep(problem, center, plan, CertKind::Dissipativity, |x, g| {
        let c: &[f64] = if by_optimum { problem.nearest_optimum(x) } else { &origin };
        let diff: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        let d2 = norm_sq(&diff);
        let growth = if p == 2.0 { d2 } else { d2.powf(p / 2.0) };
        (dot(g, &diff) - theta1 * growth + theta2, d2.sqrt())
    }))
}

/// `min theta3 (1 + ||x - x*||^(2 tau)) - ||grad f(x)||^2` over shells about `x*`.
pub fn verify_growth(problem: &Problem, growth: &GrowthCert, plan: &ShellSamplingPlan) -> Result<CertReport, CertifyError> {
    plan.validate(0.0)?;
    let (theta3, tau) = (growth.theta3, growth.tau);
    Ok(sweep(problem, problem.optimum(), plan, CertKind::Growth, |x, g| {
        let d2 = dist_sq(x, problem.nearest_optimum(x));
        (theta3 * (1.0 + d2.powf(tau)) - norm_sq(g), d2.sqrt())
    }))
}

/// `max ||grad f(x)|| / (1 + ||x||)` over shells about `x*`.
pub fn estimate_linear_growth(problem: &Problem, plan: &ShellSamplingPlan) -> Result<f64, CertifyError> {
    plan.validate(0.0)?;
    let report = sweep(problem, problem.optimum(), plan, CertKind::Growth, |x, g| (-norm(g) / (1.0 + norm(x)), 0.0));
    Ok(-report.worst_violation)
}

/// Sampled oracle variance at one probe point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProbe {
    pub grad_norm_sq: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    pub cert: NoiseCert,
    /// The fitted slope was negative and replaced by 0.
    pub slope_clamped: bool,
    /// Multiplier applied to the fit so that every probe lies under it.
    pub envelope_factor: f64,
    pub probes: Vec<NoiseProbe>,
}

impl NoiseEstimate {
    pub fn envelope_holds(&self) -> bool {
        self.probes.iter().all(|p| p.variance <= self.cert.rho * p.grad_norm_sq + self.cert.sigma2)
    }
}

/// Fits `E||g - grad f||^2 ~ rho ||grad f||^2 + sigma^2` to sampled variances at
/// the probe points, then scales the fit up to an envelope of the probes.
pub fn estimate_noise(
    problem: &Problem,
    oracle: &OracleSpec,
    probe_points: &[Vec<f64>],
    reps: usize,
    seed: u64,
    execution: Execution,
) -> Result<NoiseEstimate, CertifyError> {
    if reps < 100 {
        return Err(CertifyError::Invalid(format!("need at least 100 repetitions per probe, got {reps}")));
    }
    if probe_points.is_empty() {
        return Err(CertifyError::Invalid("no probe points".into()));
    }
    if let Some(x) = probe_points.iter().find(|x| x.len() != problem.dim()) {
        return Err(ProblemError::Dimension { expected: problem.dim(), got: x.len() }.into());
    }
    let indexed: Vec<(usize, &Vec<f64>)> = probe_points.iter().enumerate().collect();
    let probes = map_ordered(&indexed, execution, |&(i, x)| {
        let full = problem.gradient_vec(x);
        let mut rng = rng_for(seed, i as u64);
        let (mut batch, mut g) = (Vec::new(), vec![0.0; problem.dim()]);
        let mut acc = 0.0;
        for _ in 0..reps {
            problem.sample_gradient(x, oracle, &mut rng, &mut batch, &mut g);
            acc += dist_sq(&g, &full);
        }
        NoiseProbe { grad_norm_sq: norm_sq(&full), variance: acc / reps as f64 }
    });

    let n = probes.len() as f64;
    let mean_g = probes.iter().map(|p| p.grad_norm_sq).sum::<f64>() / n;
    let mean_v = probes.iter().map(|p| p.variance).sum::<f64>() / n;
    let sxx: f64 = probes.iter().map(|p| (p.grad_norm_sq - mean_g).powi(2)).sum();
    let sxy: f64 = probes.iter().map(|p| (p.grad_norm_sq - mean_g) * (p.variance - mean_v)).sum();
    let mut slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let slope_clamped = slope < 0.0;
    if slope_clamped {
        slope = 0.0;
    }
    let mut intercept = (mean_v - slope * mean_g).max(0.0);
    // probes the fit predicts as noise-free but are not
    for p in &probes {
        if slope * p.grad_norm_sq + intercept == 0.0 && p.variance > 0.0 {
            intercept = intercept.max(p.variance);
        }
    }
    let factor = probes
        .iter()
        .filter(|p| slope * p.grad_norm_sq + intercept > 0.0)
        .map(|p| p.variance / (slope * p.grad_norm_sq + intercept))
        .fold(1.0f64, f64::max);
    let mut cert = NoiseCert { rho: slope * factor, sigma2: intercept * factor };
    // guard the last bit of rounding in the scaled prediction
    for p in &probes {
        let pred = cert.rho * p.grad_norm_sq + cert.sigma2;
        if p.variance > pred {
            cert.sigma2 += p.variance - pred;
        }
    }
    Ok(NoiseEstimate { cert, slope_clamped, envelope_factor: factor, probes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Activation, BaseObjective, Dataset, LabelModel, NoiseKind, SyntheticSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn synthetic(n: usize, d: usize, labels: LabelModel, noise: f64, seed: u64) -> (Dataset, Vec<f64>) {
        SyntheticSpec { n, d, labels, noise, noise_kind: NoiseKind::Gaussian, unit_rows: false, seed }
            .generate()
            .unwrap()
    }

    fn identity_ls(d: usize) -> Problem {
        let rows: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Problem::least_squares(Dataset::from_rows(&rows, vec![0.0; d]).unwrap()).unwrap()
    }

    #[test]
    fn origin_form_examples() {
        let c = convert_origin_form(2.0, 5.0, 123.0, 0.0).unwrap();
        assert_eq!((c.theta1, c.theta2, c.radius, c.p), (1.0, 5.0, 0.0, 2.0));
        let c = convert_origin_form(2.0, 0.0, 1.0, 1.0).unwrap();
        assert!((c.theta2 - 4.25).abs() <= 1e-12);
        assert!(convert_origin_form(0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn generalized_examples() {
        let g = convert_generalized(1.0, 0.3, 2.0, 0.25, 1.0, 0.0).unwrap();
        assert_eq!((g.cert.theta1, g.cert.theta2, g.cert.radius), (0.25, 0.3, 1.0));
        // alpha2 = 2, s = (1 / (0.5 * 4))^(1/2) / sqrt(2) = 1/2, correction = 1 / (s^2 * 2) = 2
        let g = convert_generalized(1.0, 0.0, 1.0, 0.5, 1.0, 1.0).unwrap();
        assert_relative_eq!(g.cert.theta2, 2.0, max_relative = 1e-12);
        assert_eq!(g.cert.theta1, 0.25);
        assert_eq!(g.cert.radius, 2.0);
        assert!(g.within_growth_hypothesis);
        let flagged = convert_generalized(1.0, 0.0, 1.0, 0.75, 1.0, 1.0).unwrap();
        assert!(!flagged.within_growth_hypothesis);
        assert!(matches!(convert_generalized(1.0, 0.0, 1.0, 1.0, 1.0, 1.0), Err(CertifyError::TauTooLarge { .. })));
        let zero_tau = convert_generalized(1.0, 0.5, 8.0, 0.0, 1.0, 3.0).unwrap();
        assert_relative_eq!(zero_tau.cert.theta2, 0.5 + 4.0 * 3.0, max_relative = 1e-15);
    }

    #[test]
    fn young_step_consistency() {
        // the correction is the supremum over u = ||x - x*|| >= 1 of
        // sqrt(2 theta3) ||x*|| u^tau - theta1' u^p / 2^(p+1)
        for &(theta1p, theta3, tau, p, xs) in &[(1.0, 1.0, 0.5, 1.0, 1.0), (0.3, 2.0, 0.4, 1.5, 2.5), (2.0, 0.5, 0.1, 0.5, 0.7)] {
            let g = convert_generalized(theta1p, 0.0, theta3, tau, p, xs).unwrap();
            let mut sup = f64::NEG_INFINITY;
            for i in 0..200_000 {
                let u = (i as f64 * 1e-4).exp() - 1.0;
                let v = (2.0f64 * theta3).sqrt() * xs * u.powf(tau) - theta1p * u.powf(p) / 2f64.powf(p + 1.0);
                sup = sup.max(v);
            }
            assert!(sup <= g.cert.theta2 * (1.0 + 1e-9));
            assert!(sup >= g.cert.theta2 * (1.0 - 1e-4), "{sup} vs {}", g.cert.theta2);
        }
    }

    #[test]
    fn plan_grid_and_validation() {
        let plan = ShellSamplingPlan::default();
        let r = plan.radii();
        assert_eq!(r.len(), 41);
        assert_eq!((r[0], r[40]), (0.01, 100.0));
        assert!(r.windows(2).all(|w| w[1] > w[0]));
        assert!(plan.validate(0.5).is_err());
        assert!(ShellSamplingPlan { r_hi: 0.05, ..plan.clone() }.validate(0.0).is_err());
        assert!(ShellSamplingPlan::for_radius(3.0).validate(3.0).is_ok());
    }

    #[test]
    fn identity_equality_case() {
        let p = identity_ls(4);
        let cert = DissipativityCert::new(1.0, 0.0, 0.0, 2.0).unwrap();
        let report = verify_dissipativity(&p, &cert, &ShellSamplingPlan::default()).unwrap();
        assert_eq!(report.worst_violation, 0.0);
        assert!(report.passed);
        assert_eq!(report.samples_checked, 40 * 256);
    }

    #[test]
    fn overclaimed_theta1_is_caught() {
        let (data, _) = synthetic(20, 5, LabelModel::Linear, 0.3, 1);
        let p = Problem::least_squares(data).unwrap();
        let mut cert = *p.cert();
        cert.theta1 *= 1.5;
        let report = verify_dissipativity(&p, &cert, &ShellSamplingPlan::default()).unwrap();
        assert!(!report.passed);
        assert!(verify_dissipativity(&p, p.cert(), &ShellSamplingPlan::default()).unwrap().passed);
    }

    #[test]
    fn growth_examples() {
        let p = identity_ls(3);
        let plan = ShellSamplingPlan::default();
        let ok = verify_growth(&p, &GrowthCert { theta3: 2.0, tau: 1.0 }, &plan).unwrap();
        assert!(ok.passed);
        assert!(ok.worst_violation >= 2.0);
        let halved = verify_growth(&p, &GrowthCert { theta3: 0.5, tau: 1.0 }, &plan).unwrap();
        assert!(!halved.passed);
        assert!(halved.worst_radius > 1.0);
    }

    #[test]
    fn heavy_tail_and_logistic_l1_certs_pass() {
        let (data, _) = synthetic(30, 4, LabelModel::Linear, 1.0, 2);
        let ht = Problem::heavy_tail_mle(data, 0.5).unwrap();
        assert!(verify_dissipativity(&ht, ht.cert(), &ShellSamplingPlan::default()).unwrap().passed);
        let (data, _) = synthetic(40, 6, LabelModel::Sign, 0.3, 3);
        let l1 = Problem::logistic_l1(data, 0.5).unwrap();
        let plan = ShellSamplingPlan::default();
        assert!(verify_dissipativity(&l1, l1.cert(), &plan).unwrap().passed);
        assert!(verify_growth(&l1, l1.growth().unwrap(), &plan).unwrap().passed);
        let converted = optimum_form_cert(&l1).unwrap();
        let plan = ShellSamplingPlan::for_radius(converted.radius);
        assert!(verify_dissipativity(&l1, &converted, &plan).unwrap().passed);
    }

    #[test]
    fn origin_cert_kept_when_minimizer_is_origin() {
        let (data, _) = synthetic(30, 4, LabelModel::Zero, 0.0, 8);
        let ht = Problem::heavy_tail_mle(data, 0.5).unwrap();
        assert_eq!(ht.optimum(), &[0.0; 4]);
        let c = optimum_form_cert(&ht).unwrap();
        assert_eq!((c.theta1, c.theta2, c.center), (0.5, 0.0, CertCenter::Optimum));
        assert!(verify_dissipativity(&ht, &c, &ShellSamplingPlan::default()).unwrap().passed);
    }

    #[test]
    fn relu_conversion_passes() {
        let (data, _) = synthetic(15, 3, LabelModel::Sign, 0.3, 4);
        let nn = Problem::two_layer_nn(data, 4, 1.0, Activation::Relu, 1).unwrap();
        let converted = optimum_form_cert(&nn).unwrap();
        assert_eq!(converted.center, CertCenter::Optimum);
        assert!(verify_dissipativity(&nn, &converted, &ShellSamplingPlan::default()).unwrap().passed);
    }

    #[test]
    fn reports_are_deterministic_and_execution_independent() {
        let (data, _) = synthetic(30, 5, LabelModel::Sign, 0.3, 5);
        let p = Problem::l2_regularized_bounded_grad(BaseObjective::logistic(data).unwrap(), 0.1).unwrap();
        let seq = ShellSamplingPlan { execution: Execution::Sequential, rng_seed: 9, ..Default::default() };
        let par = ShellSamplingPlan { execution: Execution::Parallel, ..seq.clone() };
        let a = verify_dissipativity(&p, p.cert(), &seq).unwrap();
        let b = verify_dissipativity(&p, p.cert(), &par).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn linear_growth_of_pure_l1() {
        let p = Problem::logistic_l1(Dataset::empty(4), 1.0).unwrap();
        // ||sign(x)|| = 2 almost surely, divided by 1 + ||x|| with ||x|| >= 0.01
        let l = estimate_linear_growth(&p, &ShellSamplingPlan::default()).unwrap();
        assert!(l <= 2.0 && l > 1.9);
    }

    #[test]
    fn full_batch_oracle_is_noise_free() {
        let (data, _) = synthetic(20, 3, LabelModel::Linear, 0.3, 6);
        let p = Problem::least_squares(data).unwrap();
        let probes: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0, -1.0]).collect();
        let est = estimate_noise(&p, &OracleSpec::full(), &probes, 100, 1, Execution::Auto).unwrap();
        assert_eq!(est.cert, NoiseCert { rho: 0.0, sigma2: 0.0 });
        let batch_n = OracleSpec::minibatch(20);
        assert!(estimate_noise(&p, &batch_n, &probes, 100, 1, Execution::Auto).unwrap().envelope_holds());
        assert!(estimate_noise(&p, &batch_n, &probes, 50, 1, Execution::Auto).is_err());
    }

    #[test]
    fn single_sample_variance_at_optimum() {
        // isotropic rows: per-sample gradients at x* are n (a_i . x* - b_i) a_i, mean zero
        let (data, _) = synthetic(200, 4, LabelModel::Linear, 0.5, 7);
        let p = Problem::least_squares(data).unwrap();
        let xs = p.optimum().to_vec();
        let n = p.n() as f64;
        let analytic: f64 = (0..p.n())
            .map(|i| {
                let a = p.data().row(i);
                let r = dot(a, &xs) - p.data().label(i);
                n * n * r * r * norm_sq(a)
            })
            .sum::<f64>()
            / n;
        let probes: Vec<Vec<f64>> = (0..10).map(|i| xs.iter().map(|v| v + 0.01 * i as f64).collect()).collect();
        let est = estimate_noise(&p, &OracleSpec::minibatch(1), &probes, 2000, 3, Execution::Auto).unwrap();
        assert!(est.envelope_holds());
        assert!(est.cert.sigma2 <= 2.0 * analytic && est.cert.sigma2 >= analytic / 2.0, "{} vs {analytic}", est.cert.sigma2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn origin_conversion_shifts_theta2_exactly(
            theta1p in 0.01f64..10.0, theta2p in 0.0f64..10.0, extra in 0.0f64..10.0,
            l in 0.01f64..10.0, xs in 0.0f64..5.0,
        ) {
            let a = convert_origin_form(theta1p, theta2p, l, xs).unwrap();
            let b = convert_origin_form(theta1p, theta2p + extra, l, xs).unwrap();
            prop_assert!(((b.theta2 - a.theta2) - extra).abs() <= 1e-12 * (1.0 + b.theta2));
            prop_assert_eq!(a.theta1, theta1p / 2.0);
        }

        #[test]
        fn envelope_holds_by_construction(seed in 0u64..200, batch in 1usize..6) {
            let (data, _) = synthetic(12, 3, LabelModel::Linear, 0.4, seed);
            let p = Problem::least_squares(data).unwrap();
            let probes: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.3, -1.0, 0.5 * seed as f64 / 200.0]).collect();
            let est = estimate_noise(&p, &OracleSpec::minibatch(batch), &probes, 100, seed, Execution::Sequential).unwrap();
            prop_assert!(est.envelope_holds());
            prop_assert!(est.cert.rho >= 0.0 && est.cert.sigma2 >= 0.0);
        }
    }
}

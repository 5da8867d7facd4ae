//! Step-size families, their evaluation, and the precondition audit.
//!
//! Iteration indices are 1-based throughout: `step_at(spec, 1)` is the first
//! step applied to `x_1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, MomentumRegime};

/// Default upper limit on the per-stage ratio `eta_max / eta_min` of a bandwidth schedule.
pub const DEFAULT_S_MAX: f64 = 10.0;
/// Default geometric decay factor between step-decay stages.
pub const DEFAULT_DECAY: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("iteration index {k} outside [1, {horizon}]")]
    OutOfRange { k: usize, horizon: usize },
    #[error("step ratio needs k >= 2, got k = {0}")]
    RatioIndex(usize),
    #[error("invalid schedule parameter `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ScheduleError {
    ScheduleError::Invalid { name, reason: reason.into() }
}

/// Shape of the step sequence inside one bandwidth stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    Constant,
    Polynomial,
    Linear,
    Cosine,
    Exponential,
}

/// One stage of a bandwidth schedule. The inner mode is restarted at the
/// first iteration of the stage and runs from `eta_max` towards `eta_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandStage {
    pub length: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub mode: InnerMode,
    /// Exponent for the polynomial inner mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant {
        eta: f64,
        horizon: usize,
    },
    /// `eta1 / k^r`
    Polynomial {
        eta1: f64,
        r: f64,
        horizon: usize,
    },
    /// Straight line from `eta_max` at k=1 to `eta_min` at k=T.
    Linear {
        eta_max: f64,
        eta_min: f64,
        horizon: usize,
    },
    /// Half cosine from `eta_max` at k=1 to `eta_min` at k=T.
    Cosine {
        eta_max: f64,
        eta_min: f64,
        horizon: usize,
    },
    /// `eta1 / alpha^(k-1)` with `alpha = (T/nu)^(1/T)`.
    Exponential {
        eta1: f64,
        nu: f64,
        horizon: usize,
    },
    /// Piecewise constant, divided by `alpha` at each stage boundary.
    StepDecay {
        eta1: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stage_lengths: Option<Vec<usize>>,
        horizon: usize,
    },
    Bandwidth {
        stages: Vec<BandStage>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s_max: Option<f64>,
        horizon: usize,
    },
}

impl ScheduleSpec {
    pub fn horizon(&self) -> usize {
        match self {
            ScheduleSpec::Constant { horizon, .. }
            | ScheduleSpec::Polynomial { horizon, .. }
            | ScheduleSpec::Linear { horizon, .. }
            | ScheduleSpec::Cosine { horizon, .. }
            | ScheduleSpec::Exponential { horizon, .. }
            | ScheduleSpec::StepDecay { horizon, .. }
            | ScheduleSpec::Bandwidth { horizon, .. } => *horizon,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            ScheduleSpec::Constant { .. } => "constant",
            ScheduleSpec::Polynomial { .. } => "polynomial",
            ScheduleSpec::Linear { .. } => "linear",
            ScheduleSpec::Cosine { .. } => "cosine",
            ScheduleSpec::Exponential { .. } => "exponential",
            ScheduleSpec::StepDecay { .. } => "step_decay",
            ScheduleSpec::Bandwidth { .. } => "bandwidth",
        }
    }

    /// True for the single family whose steps never change.
    pub fn is_constant(&self) -> bool {
        matches!(self, ScheduleSpec::Constant { .. })
    }

    /// Multiplies every step-size parameter by `factor`, leaving shapes untouched.
    pub fn scaled(&self, factor: f64) -> ScheduleSpec {
        let mut out = self.clone();
        match &mut out {
            ScheduleSpec::Constant { eta, .. } => *eta *= factor,
            ScheduleSpec::Polynomial { eta1, .. }
            | ScheduleSpec::Exponential { eta1, .. }
            | ScheduleSpec::StepDecay { eta1, .. } => *eta1 *= factor,
            ScheduleSpec::Linear { eta_max, eta_min, .. }
            | ScheduleSpec::Cosine { eta_max, eta_min, .. } => {
                *eta_max *= factor;
                *eta_min *= factor;
            }
            ScheduleSpec::Bandwidth { stages, .. } => {
                for s in stages {
                    s.eta_max *= factor;
                    s.eta_min *= factor;
                }
            }
        }
        out
    }

    /// Geometric ratio of the exponential family.
    pub fn exponential_alpha(nu: f64, horizon: usize) -> f64 {
        (nu / horizon as f64).powf(-1.0 / horizon as f64)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let horizon = self.horizon();
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        match self {
            ScheduleSpec::Constant { eta, .. } => positive("eta", *eta),
            ScheduleSpec::Polynomial { eta1, r, .. } => {
                positive("eta1", *eta1)?;
                if !(*r > 0.0 && *r <= 1.0) {
                    return Err(invalid("r", format!("{r} not in (0, 1]")));
                }
                Ok(())
            }
            ScheduleSpec::Linear { eta_max, eta_min, .. }
            | ScheduleSpec::Cosine { eta_max, eta_min, .. } => {
                positive("eta_max", *eta_max)?;
                positive("eta_min", *eta_min)?;
                if eta_min > eta_max {
                    return Err(invalid("eta_min", "exceeds eta_max"));
                }
                if horizon < 2 {
                    return Err(invalid("horizon", "endpoint families need T >= 2"));
                }
                Ok(())
            }
            ScheduleSpec::Exponential { eta1, nu, .. } => {
                positive("eta1", *eta1)?;
                if !(*nu >= 1.0 && *nu < horizon as f64) {
                    return Err(invalid("nu", format!("{nu} not in [1, T)")));
                }
                Ok(())
            }
            ScheduleSpec::StepDecay { eta1, alpha, stage_lengths, .. } => {
                positive("eta1", *eta1)?;
                let a = alpha.unwrap_or(DEFAULT_DECAY);
                if !(a > 1.0 && a.is_finite()) {
                    return Err(invalid("alpha", format!("{a} must exceed 1")));
                }
                if let Some(lengths) = stage_lengths {
                    check_lengths(lengths, horizon)?;
                }
                Ok(())
            }
            ScheduleSpec::Bandwidth { stages, s_max, .. } => {
                if stages.is_empty() {
                    return Err(invalid("stages", "at least one stage required"));
                }
                let lengths: Vec<usize> = stages.iter().map(|s| s.length).collect();
                check_lengths(&lengths, horizon)?;
                let s_max = s_max.unwrap_or(DEFAULT_S_MAX);
                for (t, s) in stages.iter().enumerate() {
                    positive("eta_max", s.eta_max)?;
                    positive("eta_min", s.eta_min)?;
                    if s.eta_min > s.eta_max {
                        return Err(invalid("eta_min", format!("stage {t} has eta_min > eta_max")));
                    }
                    if s.eta_max / s.eta_min > s_max {
                        return Err(invalid(
                            "s_max",
                            format!("stage {t} ratio {} exceeds {s_max}", s.eta_max / s.eta_min),
                        ));
                    }
                    if s.mode == InnerMode::Polynomial {
                        match s.r {
                            Some(r) if r > 0.0 && r <= 1.0 => {}
                            _ => return Err(invalid("r", format!("stage {t} needs r in (0, 1]"))),
                        }
                    }
                    if t > 0 {
                        let prev = &stages[t - 1];
                        if s.eta_max > prev.eta_max || s.eta_min > prev.eta_min {
                            return Err(invalid("stages", format!("envelope increases at stage {t}")));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Stage lengths actually used by step-decay and bandwidth schedules.
    pub fn resolved_stage_lengths(&self) -> Option<Vec<usize>> {
        match self {
            ScheduleSpec::StepDecay { stage_lengths: Some(l), .. } => Some(l.clone()),
            ScheduleSpec::StepDecay { horizon, .. } => Some(default_stage_lengths(*horizon)),
            ScheduleSpec::Bandwidth { stages, .. } => Some(stages.iter().map(|s| s.length).collect()),
            _ => None,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<(), ScheduleError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be positive and finite")))
    }
}

fn check_lengths(lengths: &[usize], horizon: usize) -> Result<(), ScheduleError> {
    if lengths.contains(&0) {
        return Err(invalid("stage_lengths", "stage of length 0"));
    }
    let total: usize = lengths.iter().sum();
    if total != horizon {
        return Err(invalid("stage_lengths", format!("sum {total} differs from horizon {horizon}")));
    }
    Ok(())
}

/// `N = ceil(log2(T) / 2)` stages (at least one), lengths as even as possible,
/// remainder given to the earliest stages.
pub fn default_stage_lengths(horizon: usize) -> Vec<usize> {
    let n = (((horizon as f64).log2() / 2.0).ceil() as usize).clamp(1, horizon.max(1));
    let base = horizon / n;
    let extra = horizon % n;
    (0..n).map(|i| base + usize::from(i < extra)).collect()
}

/// Evaluates the family formula without validation.
fn eval(spec: &ScheduleSpec, k: usize) -> f64 {
    match spec {
        ScheduleSpec::Constant { eta, .. } => *eta,
        ScheduleSpec::Polynomial { eta1, r, .. } => eta1 / (k as f64).powf(*r),
        ScheduleSpec::Linear { eta_max, eta_min, horizon } => linear(*eta_max, *eta_min, *horizon, k),
        ScheduleSpec::Cosine { eta_max, eta_min, horizon } => cosine(*eta_max, *eta_min, *horizon, k),
        ScheduleSpec::Exponential { eta1, nu, horizon } => {
            let alpha = ScheduleSpec::exponential_alpha(*nu, *horizon);
            eta1 / alpha.powf((k - 1) as f64)
        }
        ScheduleSpec::StepDecay { eta1, alpha, .. } => {
            let lengths = spec.resolved_stage_lengths().unwrap_or_default();
            let (stage, _) = locate(&lengths, k);
            eta1 / alpha.unwrap_or(DEFAULT_DECAY).powi(stage as i32)
        }
        ScheduleSpec::Bandwidth { stages, .. } => {
            let lengths: Vec<usize> = stages.iter().map(|s| s.length).collect();
            let (stage, j) = locate(&lengths, k);
            inner(&stages[stage], j)
        }
    }
}

// Same line as `a - b k`, written as an interpolation so k=T lands on `lo`
// exactly instead of cancelling two large terms.
fn linear(hi: f64, lo: f64, horizon: usize, k: usize) -> f64 {
    let remaining = (horizon - k) as f64 / (horizon - 1) as f64;
    lo + (hi - lo) * remaining
}

// Anchored so that k=1 gives hi and k=T gives lo.
fn cosine(hi: f64, lo: f64, horizon: usize, k: usize) -> f64 {
    let a = (lo + hi) / 2.0;
    let b = (hi - lo) / 2.0;
    a + b * ((k - 1) as f64 * PI / (horizon - 1) as f64).cos()
}

/// Returns (0-based stage, 1-based index within stage).
fn locate(lengths: &[usize], k: usize) -> (usize, usize) {
    let mut start = 0;
    for (t, &len) in lengths.iter().enumerate() {
        if k <= start + len {
            return (t, k - start);
        }
        start += len;
    }
    (lengths.len() - 1, k - (start - lengths[lengths.len() - 1]))
}

fn inner(stage: &BandStage, j: usize) -> f64 {
    let (hi, lo, len) = (stage.eta_max, stage.eta_min, stage.length);
    let raw = if len == 1 {
        hi
    } else {
        match stage.mode {
            InnerMode::Constant => hi,
            InnerMode::Polynomial => hi / (j as f64).powf(stage.r.unwrap_or(1.0)),
            InnerMode::Linear => linear(hi, lo, len, j),
            InnerMode::Cosine => cosine(hi, lo, len, j),
            InnerMode::Exponential => hi * (lo / hi).powf((j - 1) as f64 / (len - 1) as f64),
        }
    };
    raw.clamp(lo, hi)
}

/// Step size at iteration `k` (1-based).
pub fn step_at(spec: &ScheduleSpec, k: usize) -> Result<f64, ScheduleError> {
    spec.validate()?;
    let horizon = spec.horizon();
    if k == 0 || k > horizon {
        return Err(ScheduleError::OutOfRange { k, horizon });
    }
    Ok(eval(spec, k))
}

/// `eta_k / eta_{k-1}` for `k >= 2`.
pub fn tau_ratio(spec: &ScheduleSpec, k: usize) -> Result<f64, ScheduleError> {
    if k < 2 {
        return Err(ScheduleError::RatioIndex(k));
    }
    Ok(step_at(spec, k)? / step_at(spec, k - 1)?)
}

/// A validated schedule with every step precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    spec: ScheduleSpec,
    steps: Vec<f64>,
}

impl Schedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self, ScheduleError> {
        spec.validate()?;
        let steps = (1..=spec.horizon()).map(|k| eval(&spec, k)).collect();
        Ok(Self { spec, steps })
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Step at 1-based `k`. Panics outside `[1, T]`.
    pub fn step(&self, k: usize) -> f64 {
        self.steps[k - 1]
    }

    /// Ratio `eta_k / eta_{k-1}`, taken as 1 at k=1 (the iteration starts from `x_0 = x_1`).
    pub fn tau(&self, k: usize) -> f64 {
        if k < 2 {
            1.0
        } else {
            self.steps[k - 1] / self.steps[k - 2]
        }
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCondition {
    pub name: String,
    pub required: f64,
    pub actual: f64,
    pub passed: bool,
}

impl AuditCondition {
    fn at_least(name: &str, required: f64, actual: f64) -> Self {
        Self { name: name.into(), required, actual, passed: actual >= required }
    }

    fn at_most(name: &str, required: f64, actual: f64) -> Self {
        Self { name: name.into(), required, actual, passed: actual <= required }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleAudit {
    pub family: String,
    pub cap_value: f64,
    pub cap_satisfied: bool,
    pub max_step: f64,
    /// First k from which every later step is within the cap.
    pub cap_entry: Option<usize>,
    /// The individual expressions whose minimum forms the cap, plus recorded variants.
    pub cap_components: Vec<NamedValue>,
    pub theorem_conditions: Vec<AuditCondition>,
}

impl ScheduleAudit {
    pub fn all_conditions_pass(&self) -> bool {
        self.theorem_conditions.iter().all(|c| c.passed)
    }
}

/// Checks a schedule against the step cap (plain or momentum SGD) and the
/// family-specific parameter conditions of the decaying-step results.
pub fn audit_schedule(
    spec: &ScheduleSpec,
    theta1: f64,
    rho: f64,
    lipschitz: f64,
    beta: Option<f64>,
) -> Result<ScheduleAudit, ScheduleError> {
    positive("theta1", theta1)?;
    positive("L", lipschitz)?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(invalid("rho", format!("{rho} must be non-negative")));
    }
    let schedule = Schedule::new(spec.clone())?;

    let mut cap_components = Vec::new();
    let cap_value = match beta {
        None => {
            let cap = theta1 / ((rho + 1.0) * lipschitz * lipschitz);
            cap_components.push(NamedValue { name: "sgd".into(), value: cap });
            cap
        }
        Some(b) => {
            if !(b > 0.0 && b < 1.0) {
                return Err(invalid("beta", format!("{b} not in (0, 1)")));
            }
            let stability = bounds::momentum_stability_cap(b, lipschitz);
            let descent = bounds::momentum_descent_cap(theta1, rho, lipschitz, b);
            cap_components.push(NamedValue { name: "momentum_stability".into(), value: stability });
            cap_components.push(NamedValue { name: "momentum_descent".into(), value: descent });
            cap_components.push(NamedValue {
                name: "momentum_descent_proof_variant".into(),
                value: 2.0 * descent,
            });
            bounds::momentum_caps(theta1, rho, lipschitz, b, MomentumRegime::Constant)
                .map_err(|e| invalid("beta", e.to_string()))?
        }
    };

    let max_step = schedule.max_step();
    let steps = schedule.steps();
    let cap_entry = match steps.iter().rposition(|&s| s > cap_value) {
        None => Some(1),
        Some(last) if last + 1 < steps.len() => Some(last + 2),
        Some(_) => None,
    };

    let horizon = spec.horizon() as f64;
    let mut conditions = Vec::new();
    match spec {
        ScheduleSpec::Polynomial { eta1, .. } => {
            conditions.push(AuditCondition::at_least("polynomial_eta1", 2.0 / theta1, *eta1));
        }
        ScheduleSpec::Linear { eta_max, eta_min, .. } => {
            let c = eta_min * horizon.sqrt();
            conditions.push(AuditCondition::at_least(
                "linear_c",
                (2.0 * eta_max * eta_max / theta1).sqrt(),
                c,
            ));
            conditions.push(AuditCondition::at_least(
                "linear_c_derivation",
                (2.0 * eta_max / theta1).sqrt(),
                c,
            ));
        }
        ScheduleSpec::Cosine { eta_max, eta_min, .. } => {
            let c = eta_min * horizon.sqrt();
            conditions.push(AuditCondition::at_least(
                "cosine_c_ratio",
                (eta_max * eta_max * PI * PI / (2.0 * theta1)).sqrt(),
                c,
            ));
            conditions.push(AuditCondition::at_least(
                "cosine_c_final",
                eta_max * PI * PI / (4.0 * horizon.powf(1.5)),
                c,
            ));
        }
        ScheduleSpec::Exponential { eta1, nu, .. } => {
            conditions.push(AuditCondition::at_least(
                "exponential_eta1",
                2.0 * (horizon / nu).ln() / (theta1 * nu),
                *eta1,
            ));
        }
        ScheduleSpec::StepDecay { alpha, .. } => {
            conditions.push(AuditCondition::at_least(
                "step_decay_alpha",
                1.0,
                alpha.unwrap_or(DEFAULT_DECAY),
            ));
        }
        ScheduleSpec::Bandwidth { stages, s_max, .. } => {
            let worst = stages.iter().map(|s| s.eta_max / s.eta_min).fold(1.0, f64::max);
            conditions.push(AuditCondition::at_most(
                "bandwidth_ratio",
                s_max.unwrap_or(DEFAULT_S_MAX),
                worst,
            ));
        }
        ScheduleSpec::Constant { .. } => {}
    }

    Ok(ScheduleAudit {
        family: spec.family_name().into(),
        cap_value,
        cap_satisfied: max_step <= cap_value,
        max_step,
        cap_entry,
        cap_components,
        theorem_conditions: conditions,
    })
}

/// Range of k over which `eta_k tau_k - eta_{k-1} tau_{k-1}` is claimed negative.
pub fn monotonicity_range(spec: &ScheduleSpec) -> Option<(usize, usize)> {
    let t = spec.horizon();
    match spec {
        ScheduleSpec::Polynomial { .. } | ScheduleSpec::Cosine { .. } => Some((3, t.saturating_sub(1))),
        ScheduleSpec::Linear { .. } | ScheduleSpec::Exponential { .. } => Some((3, t)),
        _ => None,
    }
}

/// `(k, eta_k tau_k - eta_{k-1} tau_{k-1})` over the family's claimed range;
/// empty for families without a claim.
pub fn product_monotonicity(spec: &ScheduleSpec) -> Result<Vec<(usize, f64)>, ScheduleError> {
    let schedule = Schedule::new(spec.clone())?;
    let Some((lo, hi)) = monotonicity_range(spec) else {
        return Ok(Vec::new());
    };
    Ok((lo..=hi)
        .map(|k| {
            let now = schedule.step(k) * schedule.tau(k);
            let before = schedule.step(k - 1) * schedule.tau(k - 1);
            (k, now - before)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    #[test]
    fn polynomial_value() {
        let s = ScheduleSpec::Polynomial { eta1: 0.5, r: 1.0, horizon: 10 };
        assert_eq!(step_at(&s, 4).unwrap(), 0.125);
        assert_relative_eq!(tau_ratio(&s, 3).unwrap(), 2.0 / 3.0, max_relative = 1e-15);
    }

    #[test]
    fn cosine_and_linear_endpoints() {
        for spec in [
            ScheduleSpec::Cosine { eta_max: 0.3, eta_min: 0.07, horizon: 97 },
            ScheduleSpec::Linear { eta_max: 0.3, eta_min: 0.07, horizon: 97 },
        ] {
            assert!(ulps(step_at(&spec, 1).unwrap(), 0.3) <= 8);
            assert!(ulps(step_at(&spec, 97).unwrap(), 0.07) <= 8);
        }
    }

    #[test]
    fn exponential_alpha_value() {
        let alpha = ScheduleSpec::exponential_alpha(1.0, 100);
        // independent: alpha^T = T/nu
        assert_relative_eq!(alpha.powi(100), 100.0, max_relative = 1e-12);
        assert_relative_eq!(alpha, (100f64.ln() / 100.0).exp(), max_relative = 1e-14);
        assert!((alpha - 1.047129).abs() < 1e-6);
        let s = ScheduleSpec::Exponential { eta1: 0.2, nu: 1.0, horizon: 100 };
        assert_relative_eq!(tau_ratio(&s, 17).unwrap(), 1.0 / alpha, max_relative = 1e-12);
    }

    #[test]
    fn constant_ratio_is_one() {
        let s = ScheduleSpec::Constant { eta: 0.1, horizon: 5 };
        for k in 2..=5 {
            assert_eq!(tau_ratio(&s, k).unwrap(), 1.0);
        }
        assert!(product_monotonicity(&s).unwrap().is_empty());
    }

    #[test]
    fn errors() {
        let s = ScheduleSpec::Constant { eta: 0.1, horizon: 5 };
        assert_eq!(step_at(&s, 0), Err(ScheduleError::OutOfRange { k: 0, horizon: 5 }));
        assert_eq!(step_at(&s, 6), Err(ScheduleError::OutOfRange { k: 6, horizon: 5 }));
        assert_eq!(tau_ratio(&s, 1), Err(ScheduleError::RatioIndex(1)));
        let bad = ScheduleSpec::Constant { eta: -1.0, horizon: 5 };
        assert!(matches!(step_at(&bad, 1), Err(ScheduleError::Invalid { .. })));
        let bad = ScheduleSpec::Exponential { eta1: 1.0, nu: 0.5, horizon: 5 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn audit_constant_sgd() {
        let s = ScheduleSpec::Constant { eta: 0.5, horizon: 10 };
        let a = audit_schedule(&s, 1.0, 0.0, 1.0, None).unwrap();
        assert_eq!(a.cap_value, 1.0);
        assert!(a.cap_satisfied);
        assert_eq!(a.cap_entry, Some(1));
    }

    #[test]
    fn audit_momentum_cap() {
        let s = ScheduleSpec::Constant { eta: 0.01, horizon: 10 };
        let a = audit_schedule(&s, 1.0, 0.0, 1.0, Some(0.9)).unwrap();
        let first: f64 = 0.19 / (0.9 * (0.1 + 10.0));
        assert!((first - 0.02090).abs() < 1e-5);
        let stability = a.cap_components.iter().find(|c| c.name == "momentum_stability").unwrap();
        assert_relative_eq!(stability.value, first, max_relative = 1e-14);
        assert!(a.cap_satisfied);
    }

    #[test]
    fn audit_exponential_condition() {
        let s = ScheduleSpec::Exponential { eta1: 2.0, nu: 1.0, horizon: 100 };
        let a = audit_schedule(&s, 1.0, 0.0, 1.0, None).unwrap();
        let c = &a.theorem_conditions[0];
        assert_relative_eq!(c.required, 2.0 * 100f64.ln(), max_relative = 1e-14);
        assert!((c.required - 9.21).abs() < 0.01);
        assert!(!c.passed);
    }

    #[test]
    fn cap_entry_tail() {
        let s = ScheduleSpec::Polynomial { eta1: 1.0, r: 1.0, horizon: 10 };
        let a = audit_schedule(&s, 1.0, 0.0, 4.0, None).unwrap();
        // cap 1/16: 1/k <= 1/16 from k = 16, beyond T
        assert_eq!(a.cap_entry, None);
        let a = audit_schedule(&s, 1.0, 0.0, 2.0, None).unwrap();
        assert_eq!(a.cap_entry, Some(4));
        assert!(!a.cap_satisfied);
    }

    #[test]
    fn polynomial_product_example() {
        let s = ScheduleSpec::Polynomial { eta1: 1.0, r: 1.0, horizon: 10 };
        let v = product_monotonicity(&s).unwrap();
        assert_eq!(v[0].0, 3);
        assert_relative_eq!(v[0].1, 2.0 / 9.0 - 0.25, max_relative = 1e-14);
        assert_eq!(v.last().unwrap().0, 9);
    }

    #[test]
    fn exponential_product_closed_form() {
        let s = ScheduleSpec::Exponential { eta1: 0.3, nu: 2.0, horizon: 50 };
        let alpha = ScheduleSpec::exponential_alpha(2.0, 50);
        for (k, d) in product_monotonicity(&s).unwrap() {
            let expected = 0.3 / alpha.powi(k as i32) * (1.0 - alpha);
            assert_relative_eq!(d, expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn cosine_audit_c_bounds() {
        let eta_max: f64 = 0.1;
        let horizon = 64usize;
        let c = eta_max * PI / 2f64.sqrt();
        let eta_min = c / (horizon as f64).sqrt();
        let s = ScheduleSpec::Cosine { eta_max, eta_min, horizon };
        let d = product_monotonicity(&s).unwrap();
        assert_eq!(d.len(), 61);
        assert!(d.iter().all(|&(_, v)| v < 0.0));
        let a = audit_schedule(&s, 1.0, 0.0, 1.0, None).unwrap();
        assert_eq!(a.theorem_conditions.len(), 2);
    }

    #[test]
    fn step_decay_defaults() {
        assert_eq!(default_stage_lengths(1), vec![1]);
        // log2(1000)/2 = 4.98 -> 5 stages of 200
        assert_eq!(default_stage_lengths(1000), vec![200; 5]);
        // log2(10)/2 = 1.66 -> 2 stages
        assert_eq!(default_stage_lengths(10), vec![5, 5]);
        assert_eq!(default_stage_lengths(11), vec![6, 5]);
        let s = ScheduleSpec::StepDecay { eta1: 0.8, alpha: None, stage_lengths: None, horizon: 10 };
        let steps = Schedule::new(s).unwrap();
        assert_eq!(steps.steps(), &[0.8, 0.8, 0.8, 0.8, 0.8, 0.4, 0.4, 0.4, 0.4, 0.4]);
    }

    #[test]
    fn bandwidth_validation() {
        let stage = |length, hi, lo, mode| BandStage { length, eta_max: hi, eta_min: lo, mode, r: None };
        let ok = ScheduleSpec::Bandwidth {
            stages: vec![stage(5, 0.1, 0.02, InnerMode::Cosine), stage(5, 0.05, 0.01, InnerMode::Linear)],
            s_max: None,
            horizon: 10,
        };
        let sched = Schedule::new(ok).unwrap();
        assert_eq!(sched.step(1), 0.1);
        approx::assert_ulps_eq!(sched.step(6), 0.05, max_ulps = 8);
        let wide = ScheduleSpec::Bandwidth {
            stages: vec![stage(10, 1.0, 0.01, InnerMode::Exponential)],
            s_max: None,
            horizon: 10,
        };
        assert!(wide.validate().is_err());
        let rising = ScheduleSpec::Bandwidth {
            stages: vec![stage(5, 0.1, 0.02, InnerMode::Constant), stage(5, 0.2, 0.05, InnerMode::Constant)],
            s_max: None,
            horizon: 10,
        };
        assert!(rising.validate().is_err());
        let poly_missing_r = ScheduleSpec::Bandwidth {
            stages: vec![stage(10, 0.1, 0.02, InnerMode::Polynomial)],
            s_max: None,
            horizon: 10,
        };
        assert!(poly_missing_r.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = ScheduleSpec::Bandwidth {
            stages: vec![BandStage { length: 4, eta_max: 0.1, eta_min: 0.05, mode: InnerMode::Polynomial, r: Some(0.5) }],
            s_max: Some(4.0),
            horizon: 4,
        };
        let text = toml::to_string(&s).unwrap();
        let back: ScheduleSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}

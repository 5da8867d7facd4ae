//! Closed-form boundedness results: plain SGD radii and bounds, generalized
//! (sub-quadratic) bounds, momentum step caps and radii, and the explicit
//! decay bounds available when dissipativity holds everywhere (R = 0).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::{DissipativityCert, GrowthCert, NoiseCert};
use crate::schedules::{NamedValue, ScheduleSpec, DEFAULT_DECAY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("invalid input `{name}`: {reason}")]
    Invalid { name: &'static str, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("unknown momentum regime `{0}`")]
    UnknownRegime(String),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> BoundError {
    BoundError::Invalid { name, reason: reason.into() }
}

fn require_positive(name: &'static str, v: f64) -> Result<(), BoundError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be positive and finite")))
    }
}

fn require_nonneg(name: &'static str, v: f64) -> Result<(), BoundError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be non-negative and finite")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaId {
    SgdQuadratic,
    SgdGeneralized,
    DecayConstant,
    DecayPolySublinear,
    DecayPolyHarmonic,
    DecayStepBands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub satisfied: bool,
}

impl Hypothesis {
    fn new(name: &str, satisfied: bool) -> Self {
        Self { name: name.into(), satisfied }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub formula_id: FormulaId,
    pub r2: f64,
    pub bound: f64,
    pub cap: Option<f64>,
    /// Larger alternative value reported next to `bound` where the printed
    /// combinator may understate it.
    pub companion: Option<f64>,
    pub hypotheses: Vec<Hypothesis>,
    /// Individual branches and terms, for the hypothesis table.
    pub terms: Vec<NamedValue>,
}

impl BoundReport {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypotheses.iter().all(|h| h.satisfied)
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    /// The value an observed supremum is compared against: the companion when present.
    pub fn conservative(&self) -> f64 {
        self.companion.map_or(self.bound, |c| c.max(self.bound))
    }
}

fn term(name: &str, value: f64) -> NamedValue {
    NamedValue { name: name.into(), value }
}

/// `theta1 / ((rho + 1) L^2)`
pub fn sgd_cap(theta1: f64, rho: f64, lipschitz: f64) -> f64 {
    theta1 / ((rho + 1.0) * lipschitz * lipschitz)
}

/// Noise radius for plain SGD: `max{R^2, 2 theta2/theta1 + sigma^2/((1+rho) L^2)}`.
pub fn sgd_radius(cert: &DissipativityCert, noise: &NoiseCert, lipschitz: f64) -> f64 {
    let noise_ball =
        2.0 * cert.theta2 / cert.theta1 + noise.sigma2 / ((1.0 + noise.rho) * lipschitz * lipschitz);
    (cert.radius * cert.radius).max(noise_ball)
}

/// Uniform bound on `E||x_k - x*||^2` for SGD under quadratic dissipativity.
pub fn sgd_bound(
    cert: &DissipativityCert,
    noise: &NoiseCert,
    lipschitz: f64,
    dist2_init: f64,
) -> Result<BoundReport, BoundError> {
    if cert.p != 2.0 {
        return Err(BoundError::Hypothesis(format!("quadratic dissipativity needs p = 2, got {}", cert.p)));
    }
    require_positive("L", lipschitz)?;
    require_nonneg("dist2_init", dist2_init)?;
    let (theta1, rho, sigma2) = (cert.theta1, noise.rho, noise.sigma2);
    let r2 = sgd_radius(cert, noise, lipschitz);
    let l2 = lipschitz * lipschitz;
    let excursion = 2.0 * (sigma2 + l2 * r2) * theta1 * theta1 / ((1.0 + rho).powi(2) * l2 * l2) + 2.0 * r2;
    Ok(BoundReport {
        formula_id: FormulaId::SgdQuadratic,
        r2,
        bound: dist2_init.max(excursion),
        cap: Some(sgd_cap(theta1, rho, lipschitz)),
        companion: None,
        hypotheses: vec![
            Hypothesis::new("p == 2", true),
            Hypothesis::new("theta1 <= L", theta1 <= lipschitz),
        ],
        terms: vec![
            term("dist2_init", dist2_init),
            term("excursion", excursion),
            term("r2_radius", cert.radius * cert.radius),
            term("r2_noise", r2),
        ],
    })
}

/// Bound on `E||x_k - x*||^2` for SGD under generalized dissipativity and
/// tau-growth. `bound` is the printed minimum; `companion` is the maximum of
/// the same two branches.
pub fn generalized_sgd_bound(
    cert: &DissipativityCert,
    growth: &GrowthCert,
    noise: &NoiseCert,
    eta_max: f64,
    dist2_init: f64,
) -> Result<BoundReport, BoundError> {
    if !(cert.p < 2.0) {
        return Err(BoundError::Hypothesis(format!("generalized dissipativity needs p < 2, got {}", cert.p)));
    }
    if cert.p <= 0.0 {
        return Err(invalid("p", "must be positive"));
    }
    if growth.tau > cert.p / 2.0 {
        return Err(BoundError::Hypothesis(format!(
            "growth exponent {} exceeds p/2 = {}",
            growth.tau,
            cert.p / 2.0
        )));
    }
    require_nonneg("eta_max", eta_max)?;
    require_nonneg("dist2_init", dist2_init)?;
    let (theta1, theta2, p) = (cert.theta1, cert.theta2, cert.p);
    let (rho, sigma2) = (noise.rho, noise.sigma2);
    let theta3 = growth.theta3;
    let gap = p - 2.0 * growth.tau;
    let singular = gap <= 0.0;

    let radius_sq = cert.radius * cert.radius;
    let (growth_statement, growth_derivation) = if singular {
        (0.0, 0.0)
    } else {
        (
            (8.0 * eta_max * (rho + 1.0) * theta3 / theta1).powf(1.0 / gap),
            (eta_max * (rho + 1.0) * theta3 / theta1).powf(1.0 / gap),
        )
    };
    let noise_branch = (2.0 * theta2 / theta1 + (sigma2 + (rho + 1.0) * theta3) * eta_max / theta1).powf(2.0 / p);
    let r2 = radius_sq.max(growth_statement).max(growth_derivation).max(noise_branch);
    let ball = 2.0 * (1.0 + eta_max * eta_max * (rho + 1.0) * theta3) * r2
        + 2.0 * eta_max * eta_max * (sigma2 + (rho + 1.0) * theta3);

    Ok(BoundReport {
        formula_id: FormulaId::SgdGeneralized,
        r2,
        bound: dist2_init.min(ball),
        cap: None,
        companion: Some(dist2_init.max(ball)),
        hypotheses: vec![
            Hypothesis::new("p < 2", true),
            Hypothesis::new("p > 2 tau", !singular),
        ],
        terms: vec![
            term("dist2_init", dist2_init),
            term("noise_ball", ball),
            term("r2_radius", radius_sq),
            term("r2_growth_statement", growth_statement),
            term("r2_growth_derivation", growth_derivation),
            term("r2_noise", noise_branch),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumRegime {
    Constant,
    Decaying,
    GeneralizedConst,
    GeneralizedDecayingPoly,
    GeneralizedDecayingExp,
}

impl MomentumRegime {
    pub const ALL: [MomentumRegime; 5] = [
        MomentumRegime::Constant,
        MomentumRegime::Decaying,
        MomentumRegime::GeneralizedConst,
        MomentumRegime::GeneralizedDecayingPoly,
        MomentumRegime::GeneralizedDecayingExp,
    ];

    fn as_str(self) -> &'static str {
        match self {
            MomentumRegime::Constant => "constant",
            MomentumRegime::Decaying => "decaying",
            MomentumRegime::GeneralizedConst => "generalized_const",
            MomentumRegime::GeneralizedDecayingPoly => "generalized_decaying_poly",
            MomentumRegime::GeneralizedDecayingExp => "generalized_decaying_exp",
        }
    }

    /// Regime implied by the certificate exponent and schedule family.
    pub fn for_run(p: f64, spec: &ScheduleSpec) -> MomentumRegime {
        match (p < 2.0, spec) {
            (false, ScheduleSpec::Constant { .. }) => MomentumRegime::Constant,
            (false, _) => MomentumRegime::Decaying,
            (true, ScheduleSpec::Constant { .. }) => MomentumRegime::GeneralizedConst,
            (true, ScheduleSpec::Exponential { .. }) => MomentumRegime::GeneralizedDecayingExp,
            (true, _) => MomentumRegime::GeneralizedDecayingPoly,
        }
    }
}

impl fmt::Display for MomentumRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MomentumRegime {
    type Err = BoundError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MomentumRegime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| BoundError::UnknownRegime(s.to_string()))
    }
}

/// `beta (1 - beta + 1/(1 - beta))`
pub fn gamma_beta(beta: f64) -> f64 {
    beta * (1.0 - beta + 1.0 / (1.0 - beta))
}

/// `(1 - beta^2) / (beta L (1 - beta + 1/(1 - beta)))`
pub fn momentum_stability_cap(beta: f64, lipschitz: f64) -> f64 {
    (1.0 - beta * beta) / (lipschitz * gamma_beta(beta))
}

/// `theta1 / (2 ((1-beta)^2 + 1)(rho + 1) L^2)`
pub fn momentum_descent_cap(theta1: f64, rho: f64, lipschitz: f64, beta: f64) -> f64 {
    let c = 1.0 - beta;
    theta1 / (2.0 * (c * c + 1.0) * (rho + 1.0) * lipschitz * lipschitz)
}

/// Largest admissible momentum step for the given regime.
pub fn momentum_caps(
    theta1: f64,
    rho: f64,
    lipschitz: f64,
    beta: f64,
    regime: MomentumRegime,
) -> Result<f64, BoundError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("{beta} not in (0, 1)")));
    }
    require_positive("L", lipschitz)?;
    let c = 1.0 - beta;
    Ok(match regime {
        MomentumRegime::Constant | MomentumRegime::Decaying => {
            require_positive("theta1", theta1)?;
            require_nonneg("rho", rho)?;
            momentum_stability_cap(beta, lipschitz).min(momentum_descent_cap(theta1, rho, lipschitz, beta))
        }
        MomentumRegime::GeneralizedConst => momentum_stability_cap(beta, lipschitz),
        MomentumRegime::GeneralizedDecayingPoly => momentum_stability_cap(beta, lipschitz) / 2.0,
        MomentumRegime::GeneralizedDecayingExp => {
            (1.0 - beta * beta) / (beta * lipschitz * (c + 2.0 / c))
        }
    })
}

/// Radius outside which the momentum Lyapunov function decreases in expectation.
///
/// `eta` is the constant step, or the first (largest) step for decaying
/// regimes. `alpha` is the exponential decay ratio, used only by
/// `GeneralizedDecayingExp`.
pub fn momentum_radius(
    cert: &DissipativityCert,
    growth: Option<&GrowthCert>,
    noise: &NoiseCert,
    beta: f64,
    eta: f64,
    regime: MomentumRegime,
    alpha: Option<f64>,
) -> Result<f64, BoundError> {
    let (theta1, theta2, p) = (cert.theta1, cert.theta2, cert.p);
    let (rho, sigma2) = (noise.rho, noise.sigma2);
    let c = 1.0 - beta;
    let radius_sq = cert.radius * cert.radius;
    let generalized = || -> Result<(f64, f64), BoundError> {
        let g = growth.ok_or_else(|| BoundError::Hypothesis("growth certificate required".into()))?;
        let gap = p - 2.0 * g.tau;
        if gap <= 0.0 {
            return Err(BoundError::Hypothesis("p > 2 tau required".into()));
        }
        Ok((g.theta3, gap))
    };
    let r2 = match regime {
        MomentumRegime::Constant => {
            radius_sq.max(2.0 * theta2 / theta1 + 2.0 * eta * (c * c + 1.0) * sigma2 / theta1)
        }
        // (1 - beta^2) + 1 as printed; it dominates (1 - beta)^2 + 1 for beta in (0, 1).
        MomentumRegime::Decaying => {
            radius_sq.max(2.0 * theta2 / theta1 + ((1.0 - beta * beta) + 1.0) * sigma2 * eta / theta1)
        }
        MomentumRegime::GeneralizedConst => {
            let (theta3, gap) = generalized()?;
            let growth_branch = (eta * (1.0 + c * c) * (rho + 1.0) * theta3 / theta1).powf(1.0 / gap);
            let noise_branch =
                (2.0 * theta2 / theta1 + (c * c + 1.0) * (sigma2 + eta * (rho + 1.0) * theta3)).powf(2.0 / p);
            radius_sq.max(growth_branch).max(noise_branch)
        }
        MomentumRegime::GeneralizedDecayingPoly => {
            let (theta3, gap) = generalized()?;
            let noise_branch = (4.0 * theta2 / theta1
                + eta * (2.0 - beta).powi(2) * ((rho + 1.0) * theta3 + sigma2) / theta1)
                .powf(2.0 / p);
            let growth_branch = (eta * (c * c + 1.0) * (rho + 1.0) * theta3 / theta1).powf(2.0 / gap);
            radius_sq.max(noise_branch).max(growth_branch)
        }
        MomentumRegime::GeneralizedDecayingExp => {
            let (theta3, gap) = generalized()?;
            let a = alpha.ok_or_else(|| invalid("alpha", "exponential regime needs the decay ratio"))?;
            let noise_branch = (2.0 * theta2 / (a * theta1)
                + eta * (c * c + 1.0 / a) * ((rho + 1.0) * theta3 + sigma2) / theta1)
                .powf(2.0 / p);
            let growth_branch = (eta * (c * c + 1.0) * (rho + 1.0) * theta3 / theta1).powf(2.0 / gap);
            radius_sq.max(noise_branch).max(growth_branch)
        }
    };
    Ok(r2)
}

/// Constants of the R = 0 decay bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayInputs {
    pub theta1: f64,
    pub theta2: f64,
    pub sigma2: f64,
    pub dist2_init: f64,
    /// `(rho, L)`; when given, the step-cap hypothesis is recorded.
    pub smoothness: Option<(f64, f64)>,
}

impl DecayInputs {
    fn check(&self) -> Result<(), BoundError> {
        require_positive("theta1", self.theta1)?;
        require_nonneg("theta2", self.theta2)?;
        require_nonneg("sigma2", self.sigma2)?;
        require_nonneg("dist2_init", self.dist2_init)
    }

    fn cap(&self) -> Option<f64> {
        self.smoothness.map(|(rho, l)| sgd_cap(self.theta1, rho, l))
    }

    fn cap_hypothesis(&self, max_step: f64) -> Vec<Hypothesis> {
        self.cap()
            .map(|cap| vec![Hypothesis::new("step <= theta1/((1+rho) L^2)", max_step <= cap)])
            .unwrap_or_default()
    }
}

/// `(1 - eta theta1)^T d0 + (theta2 + eta sigma^2)/theta1`
pub fn decay_bound_constant(inputs: &DecayInputs, eta: f64, horizon: usize) -> Result<BoundReport, BoundError> {
    inputs.check()?;
    require_positive("eta", eta)?;
    let contraction = eta * inputs.theta1;
    if contraction >= 1.0 {
        return Err(BoundError::Hypothesis(format!("eta * theta1 = {contraction} must be below 1")));
    }
    let transient = (1.0 - contraction).powf(horizon as f64) * inputs.dist2_init;
    let stationary = (inputs.theta2 + eta * inputs.sigma2) / inputs.theta1;
    Ok(BoundReport {
        formula_id: FormulaId::DecayConstant,
        r2: 0.0,
        bound: transient + stationary,
        cap: inputs.cap(),
        companion: None,
        hypotheses: inputs.cap_hypothesis(eta),
        terms: vec![term("transient", transient), term("stationary", stationary)],
    })
}

/// Decay bound for polynomial schedules (`r` in (0, 1]) and step-decay bands.
pub fn decay_bound_decaying(inputs: &DecayInputs, spec: &ScheduleSpec) -> Result<BoundReport, BoundError> {
    inputs.check()?;
    spec.validate().map_err(|e| invalid("schedule", e.to_string()))?;
    let (theta1, theta2, sigma2, d0) = (inputs.theta1, inputs.theta2, inputs.sigma2, inputs.dist2_init);
    let horizon = spec.horizon() as f64;
    match spec {
        ScheduleSpec::Polynomial { eta1, r, .. } => {
            let (eta1, r) = (*eta1, *r);
            let (formula_id, transient, stationary) = if r < 1.0 {
                let decay = (-theta1 * eta1 * ((horizon + 1.0).powf(1.0 - r) - 1.0) / (1.0 - r)).exp();
                (FormulaId::DecayPolySublinear, decay * d0, (theta2 + eta1 * sigma2) * 2f64.powf(r) / theta1)
            } else {
                (
                    FormulaId::DecayPolyHarmonic,
                    d0 / (horizon + 1.0).powf(theta1 * eta1),
                    2.0 * (theta2 + eta1 * sigma2) / theta1,
                )
            };
            Ok(BoundReport {
                formula_id,
                r2: 0.0,
                bound: transient + stationary,
                cap: inputs.cap(),
                companion: None,
                hypotheses: inputs.cap_hypothesis(eta1),
                terms: vec![term("transient", transient), term("stationary", stationary)],
            })
        }
        ScheduleSpec::StepDecay { .. } | ScheduleSpec::Bandwidth { .. } => {
            let band = step_decay_band(spec)?;
            let (m, big_m, s, n, alpha) = (band.m, band.big_m, band.stage_length, band.stages, band.alpha);
            let transient = (-theta1 * m * s).exp() * d0;
            let stationary = (theta2 + big_m * sigma2) * big_m / (1.0 - (-m * theta1).exp());
            let unsimplified = (theta2 + big_m * sigma2) * big_m
                / (1.0 - (-m * theta1 * s * alpha.powf(-(n - 1.0))).exp());
            Ok(BoundReport {
                formula_id: FormulaId::DecayStepBands,
                r2: 0.0,
                bound: transient + stationary,
                cap: inputs.cap(),
                companion: Some(transient + unsimplified),
                hypotheses: inputs.cap_hypothesis(band.big_m),
                terms: vec![
                    term("transient", transient),
                    term("stationary", stationary),
                    term("stationary_unsimplified", unsimplified),
                    term("m", m),
                    term("M", big_m),
                    term("S", s),
                    term("N", n),
                ],
            })
        }
        other => Err(BoundError::Unsupported(format!("no decay bound for the {} family", other.family_name()))),
    }
}

/// Step-decay band: in stage t every step lies in `[m, M] * alpha^-(t-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecayBand {
    pub m: f64,
    pub big_m: f64,
    pub stage_length: f64,
    pub stages: f64,
    pub alpha: f64,
}

/// Extracts band constants from a step-decay schedule or an equal-stage
/// bandwidth schedule with geometric envelopes.
pub fn step_decay_band(spec: &ScheduleSpec) -> Result<StepDecayBand, BoundError> {
    let lengths = spec
        .resolved_stage_lengths()
        .ok_or_else(|| BoundError::Unsupported("not a staged schedule".into()))?;
    let s = lengths[0];
    if lengths.iter().any(|&l| l != s) {
        return Err(BoundError::Unsupported("band constants need equal stage lengths".into()));
    }
    let n = lengths.len() as f64;
    match spec {
        ScheduleSpec::StepDecay { eta1, alpha, .. } => Ok(StepDecayBand {
            m: *eta1,
            big_m: *eta1,
            stage_length: s as f64,
            stages: n,
            alpha: alpha.unwrap_or(DEFAULT_DECAY),
        }),
        ScheduleSpec::Bandwidth { stages, .. } => {
            let alpha = if stages.len() > 1 { stages[0].eta_max / stages[1].eta_max } else { DEFAULT_DECAY };
            if !(alpha > 1.0) {
                return Err(BoundError::Unsupported("band envelope must decay geometrically".into()));
            }
            let mut m = f64::INFINITY;
            let mut big_m: f64 = 0.0;
            for (t, st) in stages.iter().enumerate() {
                let scale = alpha.powi(t as i32);
                m = m.min(st.eta_min * scale);
                big_m = big_m.max(st.eta_max * scale);
            }
            Ok(StepDecayBand { m, big_m, stage_length: s as f64, stages: n, alpha })
        }
        _ => unreachable!("resolved_stage_lengths is only Some for staged families"),
    }
}

/// Exact unrolling of the one-step contraction
/// `e_{k+1} <= (1 - eta_k theta1) e_k + eta_k (theta2 + eta_k sigma^2)`
/// underlying every R = 0 bound. Requires `eta_k theta1 < 1` for every k.
pub fn decay_recursion(inputs: &DecayInputs, steps: &[f64]) -> Result<f64, BoundError> {
    inputs.check()?;
    let mut e = inputs.dist2_init;
    for &eta in steps {
        if eta * inputs.theta1 >= 1.0 {
            return Err(BoundError::Hypothesis("eta_k * theta1 must stay below 1".into()));
        }
        e = (1.0 - eta * inputs.theta1) * e + eta * (inputs.theta2 + eta * inputs.sigma2);
    }
    Ok(e)
}

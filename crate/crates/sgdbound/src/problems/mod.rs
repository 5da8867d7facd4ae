//! Model objectives with finite-sum structure, stochastic mini-batch oracles,
//! optima and dissipativity certificates.

mod data;
mod network;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, norm_sq};

pub use data::{Dataset, LabelModel, NoiseKind, SyntheticSpec};
pub use network::{sigmoid, softplus, Activation, Network};

/// Iteration budget of `resolve_optimum`.
pub const MAX_RESOLVE_ITERS: usize = 1_000_000;
/// Default stationarity tolerance of `resolve_optimum`.
pub const DEFAULT_RESOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("matrix is rank deficient (smallest eigenvalue {0:e})")]
    RankDeficient(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid problem parameter: {0}")]
    Invalid(String),
    #[error("bad labels: {0}")]
    Labels(String),
    #[error("base objective has no gradient bound")]
    MissingGradientBound,
    #[error("point is within finite-difference reach of a kink")]
    NearKink,
    #[error("no convergence after {iters} iterations (stationarity {achieved:e}, target {target:e})")]
    NoConvergence { iters: usize, achieved: f64, target: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid certificate: {0}")]
pub struct CertError(String);

/// Point about which a dissipativity inequality is stated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CertCenter {
    /// `<grad f(x), x - x*> >= theta1 ||x - x*||^p - theta2`
    #[default]
    Optimum,
    /// `<grad f(x), x> >= theta1 ||x||^p - theta2`, convertible to the optimum form.
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissipativityCert {
    pub theta1: f64,
    pub theta2: f64,
    /// The inequality is claimed for `||x - center|| >= radius`.
    pub radius: f64,
    pub p: f64,
    #[serde(default)]
    pub center: CertCenter,
}

impl DissipativityCert {
    pub fn new(theta1: f64, theta2: f64, radius: f64, p: f64) -> Result<Self, CertError> {
        let c = Self { theta1, theta2, radius, p, center: CertCenter::Optimum };
        c.validate()?;
        Ok(c)
    }

    pub fn about_origin(theta1: f64, theta2: f64, radius: f64, p: f64) -> Result<Self, CertError> {
        Ok(Self { center: CertCenter::Origin, ..Self::new(theta1, theta2, radius, p)? })
    }

    pub fn validate(&self) -> Result<(), CertError> {
        if !(self.theta1 > 0.0 && self.theta1.is_finite()) {
            return Err(CertError(format!("theta1 = {} must be positive", self.theta1)));
        }
        if !(self.theta2 >= 0.0 && self.theta2.is_finite()) {
            return Err(CertError(format!("theta2 = {} must be non-negative", self.theta2)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(CertError(format!("R = {} must be non-negative", self.radius)));
        }
        if !(0.0..=2.0).contains(&self.p) {
            return Err(CertError(format!("p = {} outside [0, 2]", self.p)));
        }
        Ok(())
    }
}

/// `||grad f(x)||^2 <= theta3 (1 + ||x - x*||^(2 tau))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCert {
    pub theta3: f64,
    pub tau: f64,
}

/// `E||g - grad f||^2 <= rho ||grad f||^2 + sigma2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseCert {
    pub rho: f64,
    pub sigma2: f64,
}

/// Gradient-size constant used in step caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Smoothness {
    /// Gradient is L-Lipschitz.
    Lipschitz(f64),
    /// Nonsmooth objective; `||g(x)|| <= L (1 + ||x||)` stands in for smoothness.
    LinearGrowth(f64),
}

impl Smoothness {
    pub fn value(&self) -> f64 {
        match *self {
            Smoothness::Lipschitz(l) | Smoothness::LinearGrowth(l) => l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Loss {
    /// `(n/2)(<a_i, x> - b_i)^2`, so the mean is `0.5 ||Px - b||^2`.
    Quadratic,
    /// `0.5 (|<a_i, x>| - b_i)^2`
    Phase,
    /// `0.5 log(1 + (b_i - <a_i, x>)^2)`
    HeavyTail,
    /// `-0.5 log(nu + exp(-(b_i - <a_i, x>)^2))`, shifted by a constant so that
    /// a zero residual costs 0
    BlakeZisserman { nu: f64 },
    /// `log(1 + exp(-b_i <a_i, x>))`
    Logistic,
    Zero,
    Network(Network),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Regularizer {
    None,
    /// `(lambda/2) ||x||^2`
    HalfRidge(f64),
    /// `lambda ||x||^2`
    Ridge(f64),
    /// `lambda ||x||_1`, with sign(0) = 0
    Lasso(f64),
}

impl Regularizer {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::HalfRidge(l) => 0.5 * l * norm_sq(x),
            Regularizer::Ridge(l) => l * norm_sq(x),
            Regularizer::Lasso(l) => l * x.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    fn grad_add(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Regularizer::None => {}
            Regularizer::HalfRidge(l) => out.iter_mut().zip(x).for_each(|(o, v)| *o += l * v),
            Regularizer::Ridge(l) => out.iter_mut().zip(x).for_each(|(o, v)| *o += 2.0 * l * v),
            Regularizer::Lasso(l) => out.iter_mut().zip(x).for_each(|(o, v)| *o += l * sign(*v)),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Stochastic gradient oracle: mini-batch sampling with replacement plus
/// optional additive isotropic Gaussian noise of total variance `additive_sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// `None` evaluates the exact full gradient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub additive_sigma2: f64,
}

impl OracleSpec {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn minibatch(b: usize) -> Self {
        Self { batch_size: Some(b), additive_sigma2: 0.0 }
    }

    pub fn additive(sigma2: f64) -> Self {
        Self { batch_size: None, additive_sigma2: sigma2 }
    }

    pub fn is_deterministic(&self) -> bool {
        self.batch_size.is_none() && self.additive_sigma2 == 0.0
    }
}

/// A loss without its own certificate, used as the base of a ridge-regularized problem.
#[derive(Debug, Clone)]
pub struct BaseObjective {
    data: Dataset,
    loss: Loss,
    grad_bound: Option<f64>,
    lipschitz: f64,
}

impl BaseObjective {
    /// Logistic loss; per-sample gradients are bounded by `max_i ||a_i||`.
    pub fn logistic(data: Dataset) -> Result<Self, ProblemError> {
        let data = data.with_sign_labels()?;
        let g = data.max_row_norm();
        let lipschitz = 0.25 * data.mean_row_norm_sq();
        Ok(Self { data, loss: Loss::Logistic, grad_bound: Some(g), lipschitz })
    }

    /// Identically zero objective in dimension `d`.
    pub fn constant(d: usize) -> Self {
        Self { data: Dataset::empty(d), loss: Loss::Zero, grad_bound: Some(0.0), lipschitz: 0.0 }
    }

    /// A base with no known gradient bound (heavy-tail residual loss).
    pub fn heavy_tail(data: Dataset) -> Self {
        let lipschitz = data.mean_row_norm_sq();
        Self { data, loss: Loss::HeavyTail, grad_bound: None, lipschitz }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    name: String,
    data: Dataset,
    loss: Loss,
    reg: Regularizer,
    dim: usize,
    /// One optimum, or two for sign-symmetric objectives.
    optima: Vec<Vec<f64>>,
    f_star: f64,
    optimum_residual: f64,
    smoothness: Smoothness,
    cert: DissipativityCert,
    growth: Option<GrowthCert>,
}

impl Problem {
    fn assemble(
        name: &str,
        data: Dataset,
        loss: Loss,
        reg: Regularizer,
        dim: usize,
        smoothness: Smoothness,
        cert: DissipativityCert,
    ) -> Self {
        Self {
            name: name.into(),
            data,
            loss,
            reg,
            dim,
            optima: vec![vec![0.0; dim]],
            f_star: 0.0,
            optimum_residual: f64::NAN,
            smoothness,
            cert,
            growth: None,
        }
    }

    fn set_optimum(&mut self, x: Vec<f64>, symmetric: bool) {
        self.f_star = self.value(&x);
        self.optimum_residual = self.stationarity(&x);
        self.optima = if symmetric { vec![x.clone(), x.iter().map(|v| -v).collect()] } else { vec![x] };
    }

    /// `0.5 ||Px - b||^2`, rows of `data` are the rows of P.
    pub fn least_squares(data: Dataset) -> Result<Self, ProblemError> {
        let d = data.d();
        let (lo, hi) = gram_extremes(&data)?;
        let mut p = Self::assemble(
            "least_squares",
            data,
            Loss::Quadratic,
            Regularizer::None,
            d,
            Smoothness::Lipschitz(hi),
            DissipativityCert::new(lo, 0.0, 0.0, 2.0).map_err(|e| ProblemError::Invalid(e.0))?,
        );
        let x = normal_equations(&p.data)?;
        p.set_optimum(x, false);
        Ok(p)
    }

    /// `(1/2n) sum (|<a_i, x>| - b_i)^2`. With a planted signal whose
    /// magnitudes reproduce `b` exactly, the optimum is the signal itself;
    /// otherwise it is resolved numerically starting from the signal.
    pub fn phase_retrieval(data: Dataset, planted: Option<&[f64]>) -> Result<Self, ProblemError> {
        let n = data.n() as f64;
        let d = data.d();
        let (lo, hi) = gram_extremes(&data)?;
        let theta2 = data.labels().iter().map(|b| b * b).sum::<f64>() / (2.0 * n);
        let cert = DissipativityCert::new(lo / (2.0 * n), theta2, 0.0, 2.0).map_err(|e| ProblemError::Invalid(e.0))?;
        // ||g(x)|| <= (lambda_max / n) ||x - x*|| for noise-free magnitudes
        let mut p = Self::assemble("phase_retrieval", data, Loss::Phase, Regularizer::None, d, Smoothness::LinearGrowth(hi / n), cert);
        let start = match planted {
            Some(s) if s.len() == d => s.to_vec(),
            Some(s) => return Err(ProblemError::Dimension { expected: d, got: s.len() }),
            None => p.data.row(0).to_vec(),
        };
        if p.value(&start) == 0.0 {
            p.set_optimum(start, true);
        } else {
            let x = p.resolve_optimum(&start, DEFAULT_RESOLVE_TOL)?;
            p.set_optimum(x, true);
        }
        Ok(p)
    }

    /// `(1/2n) sum log(1 + (b_i - <a_i, x>)^2) + (lambda/2) ||x||^2`
    pub fn heavy_tail_mle(data: Dataset, lambda: f64) -> Result<Self, ProblemError> {
        positive("lambda", lambda)?;
        let d = data.d();
        let theta2 = mean_abs(data.labels());
        let lipschitz = lambda + data.mean_row_norm_sq();
        let cert = DissipativityCert::about_origin(lambda, theta2, 0.0, 2.0).map_err(|e| ProblemError::Invalid(e.0))?;
        let mut p = Self::assemble(
            "heavy_tail_mle",
            data,
            Loss::HeavyTail,
            Regularizer::HalfRidge(lambda),
            d,
            Smoothness::Lipschitz(lipschitz),
            cert,
        );
        let x = p.resolve_optimum(&vec![0.0; d], DEFAULT_RESOLVE_TOL)?;
        p.set_optimum(x, false);
        Ok(p)
    }

    /// `-(1/2n) sum log(nu + exp(-(b_i - <a_i, x>)^2)) + (lambda/2) ||x||^2`
    pub fn blake_zisserman(data: Dataset, lambda: f64, nu: f64) -> Result<Self, ProblemError> {
        positive("lambda", lambda)?;
        positive("nu", nu)?;
        let d = data.d();
        let theta2 = 0.5 * mean_abs(data.labels()) / (nu * (nu + 1.0)).sqrt();
        let lipschitz = lambda + bz_curvature(nu) * data.mean_row_norm_sq();
        let cert = DissipativityCert::about_origin(lambda, theta2, 0.0, 2.0).map_err(|e| ProblemError::Invalid(e.0))?;
        let mut p = Self::assemble(
            "blake_zisserman",
            data,
            Loss::BlakeZisserman { nu },
            Regularizer::HalfRidge(lambda),
            d,
            Smoothness::Lipschitz(lipschitz),
            cert,
        );
        let x = p.resolve_optimum(&vec![0.0; d], DEFAULT_RESOLVE_TOL)?;
        p.set_optimum(x, false);
        Ok(p)
    }

    /// `f0(x) + lambda ||x||^2` for a base with `||grad f0|| <= G`.
    pub fn l2_regularized_bounded_grad(base: BaseObjective, lambda: f64) -> Result<Self, ProblemError> {
        positive("lambda", lambda)?;
        let g = base.grad_bound.ok_or(ProblemError::MissingGradientBound)?;
        let d = base.data.d();
        let cert = DissipativityCert::new(lambda / 2.0, g / (2.0 * lambda), 0.0, 2.0).map_err(|e| ProblemError::Invalid(e.0))?;
        let mut p = Self::assemble(
            "l2_logistic",
            base.data,
            base.loss,
            Regularizer::Ridge(lambda),
            d,
            Smoothness::Lipschitz(2.0 * lambda + base.lipschitz),
            cert,
        );
        if p.loss == Loss::Zero {
            p.name = "l2_constant".into();
        }
        let x = p.resolve_optimum(&vec![0.0; d], DEFAULT_RESOLVE_TOL)?;
        p.set_optimum(x, false);
        Ok(p)
    }

    /// `(1/n) sum log(1 + exp(-b_i <a_i, x>)) + lambda ||x||_1`
    pub fn logistic_l1(data: Dataset, lambda: f64) -> Result<Self, ProblemError> {
        positive("lambda", lambda)?;
        let data = data.with_sign_labels()?;
        let d = data.d();
        let n = data.n() as f64;
        let row_sq: f64 = data.features().iter().map(|v| v * v).sum();
        let theta3 = if data.n() == 0 { lambda * lambda * d as f64 } else { 2.0 / n * (row_sq + lambda * lambda * d as f64) };
        let mean_norm = if data.n() == 0 { 0.0 } else { (0..data.n()).map(|i| norm(data.row(i))).sum::<f64>() / n };
        let cert = DissipativityCert::about_origin(lambda, 0.5, 0.0, 1.0).map_err(|e| ProblemError::Invalid(e.0))?;
        let mut p = Self::assemble(
            "logistic_l1",
            data,
            Loss::Logistic,
            Regularizer::Lasso(lambda),
            d,
            Smoothness::LinearGrowth(mean_norm + lambda * (d as f64).sqrt()),
            cert,
        );
        p.growth = Some(GrowthCert { theta3, tau: 0.0 });
        let x = p.resolve_optimum(&vec![0.0; d], DEFAULT_RESOLVE_TOL)?;
        p.set_optimum(x, false);
        Ok(p)
    }

    /// One-hidden-layer classifier with `(lambda/2) ||X||^2` weight decay.
    /// No bias terms; append a constant column to the data for one.
    pub fn two_layer_nn(data: Dataset, width: usize, lambda: f64, activation: Activation, init_seed: u64) -> Result<Self, ProblemError> {
        if width < 1 {
            return Err(ProblemError::Invalid("hidden width must be at least 1".into()));
        }
        let theta = match activation {
            Activation::Relu => (lambda, 2.0),
            Activation::Sigmoid => (lambda / 2.0, 1.0 + width as f64 / (2.0 * lambda)),
        };
        Self::network(data, &[width], lambda, activation, false, theta, init_seed)
    }

    /// ReLU network with `widths.len() + 1` weight layers.
    /// `l1 = false` uses `(lambda/2)||X||^2`, `l1 = true` uses `lambda ||X||_1`.
    pub fn deep_relu_nn(data: Dataset, widths: &[usize], lambda: f64, l1: bool, init_seed: u64) -> Result<Self, ProblemError> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(ProblemError::Invalid("hidden widths must be positive".into()));
        }
        let depth = widths.len() as f64 + 1.0;
        Self::network(data, widths, lambda, Activation::Relu, l1, (lambda, depth), init_seed)
    }

    fn network(
        data: Dataset,
        widths: &[usize],
        lambda: f64,
        activation: Activation,
        l1: bool,
        (theta1, theta2): (f64, f64),
        init_seed: u64,
    ) -> Result<Self, ProblemError> {
        positive("lambda", lambda)?;
        let data = data.with_sign_labels()?;
        let net = Network::new(data.d(), widths, activation);
        let dim = net.num_params();
        let max_norm = data.max_row_norm();
        // one hidden ReLU layer: ||grad|| <= (max ||a|| + lambda) ||X||; deeper nets grow faster than linearly
        let growth = match activation {
            Activation::Relu if widths.len() == 1 => max_norm + lambda,
            Activation::Relu => f64::INFINITY,
            Activation::Sigmoid => (widths[0] as f64).sqrt().max(0.25 * max_norm + lambda),
        };
        let (reg, p, name) = if l1 {
            (Regularizer::Lasso(lambda), 1.0, "relu_nn_l1")
        } else {
            (Regularizer::HalfRidge(lambda), 2.0, if widths.len() == 1 { "two_layer_nn" } else { "deep_relu_nn" })
        };
        let cert = DissipativityCert::about_origin(theta1, theta2, 0.0, p).map_err(|e| ProblemError::Invalid(e.0))?;
        let mut prob = Self::assemble(name, data, Loss::Network(net), reg, dim, Smoothness::LinearGrowth(growth), cert);
        let mut rng = crate::seed::rng_for(init_seed, 0);
        let start: Vec<f64> = (0..dim).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let x = prob.resolve_optimum(&start, DEFAULT_RESOLVE_TOL)?;
        prob.set_optimum(x, false);
        Ok(prob)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn optimum(&self) -> &[f64] {
        &self.optima[0]
    }

    pub fn optima(&self) -> &[Vec<f64>] {
        &self.optima
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// Stationarity measure achieved at the stored optimum.
    pub fn optimum_residual(&self) -> f64 {
        self.optimum_residual
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn cert(&self) -> &DissipativityCert {
        &self.cert
    }

    pub fn growth(&self) -> Option<&GrowthCert> {
        self.growth.as_ref()
    }

    /// Replaces the attached dissipativity certificate.
    pub fn with_cert(mut self, cert: DissipativityCert) -> Self {
        self.cert = cert;
        self
    }

    pub fn with_growth(mut self, growth: GrowthCert) -> Self {
        self.growth = Some(growth);
        self
    }

    /// True when the objective has points of non-differentiability.
    pub fn is_nonsmooth(&self) -> bool {
        matches!(self.loss, Loss::Phase)
            || matches!(self.reg, Regularizer::Lasso(_))
            || matches!(&self.loss, Loss::Network(net) if net.activation() == Activation::Relu)
    }

    /// Squared distance to the nearest stored optimum.
    pub fn dist2(&self, x: &[f64]) -> f64 {
        self.optima.iter().map(|o| crate::linalg::dist_sq(x, o)).fold(f64::INFINITY, f64::min)
    }

    pub fn nearest_optimum(&self, x: &[f64]) -> &[f64] {
        let mut best = &self.optima[0];
        let mut best_d = f64::INFINITY;
        for o in &self.optima {
            let d = crate::linalg::dist_sq(x, o);
            if d < best_d {
                best_d = d;
                best = o;
            }
        }
        best
    }

    fn sample_loss(&self, i: usize, x: &[f64]) -> f64 {
        let a = self.data.row(i);
        let b = self.data.label(i);
        match &self.loss {
            Loss::Quadratic => {
                let r = dot(a, x) - b;
                0.5 * self.data.n() as f64 * r * r
            }
            Loss::Phase => {
                let r = dot(a, x).abs() - b;
                0.5 * r * r
            }
            Loss::HeavyTail => {
                let r = b - dot(a, x);
                0.5 * (r * r).ln_1p()
            }
            Loss::BlakeZisserman { nu } => {
                let r = b - dot(a, x);
                -0.5 * ((-r * r).exp_m1() / (nu + 1.0)).ln_1p()
            }
            Loss::Logistic => softplus(-b * dot(a, x)),
            Loss::Zero => 0.0,
            Loss::Network(net) => net.loss(x, a, b),
        }
    }

    /// Adds `w * grad loss_i(x)` to `out`.
    fn sample_grad_add(&self, i: usize, x: &[f64], w: f64, out: &mut [f64]) {
        let a = self.data.row(i);
        let b = self.data.label(i);
        let coef = match &self.loss {
            Loss::Quadratic => self.data.n() as f64 * (dot(a, x) - b),
            Loss::Phase => {
                let u = dot(a, x);
                u - b * sign(u)
            }
            Loss::HeavyTail => {
                let r = b - dot(a, x);
                -r / (1.0 + r * r)
            }
            Loss::BlakeZisserman { nu } => {
                let r = b - dot(a, x);
                let e = (-r * r).exp();
                -r * e / (nu + e)
            }
            Loss::Logistic => -b * sigmoid(-b * dot(a, x)),
            Loss::Zero => 0.0,
            Loss::Network(net) => {
                net.loss_grad_add(x, a, b, w, out);
                return;
            }
        };
        let c = w * coef;
        out.iter_mut().zip(a).for_each(|(o, ai)| *o += c * ai);
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.data.n();
        let data = if n == 0 { 0.0 } else { (0..n).map(|i| self.sample_loss(i, x)).sum::<f64>() / n as f64 };
        data + self.reg.value(x)
    }

    /// Full (sub)gradient, with the zero subgradient chosen at kinks.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let n = self.data.n();
        let w = 1.0 / n.max(1) as f64;
        for i in 0..n {
            self.sample_grad_add(i, x, w, out);
        }
        self.reg.grad_add(x, out);
    }

    pub fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.gradient(x, &mut g);
        g
    }

    /// Mean of the per-sample gradients over `batch` (indices may repeat), plus the regularizer.
    pub fn minibatch_gradient(&self, x: &[f64], batch: &[usize], out: &mut [f64]) {
        out.fill(0.0);
        if !batch.is_empty() {
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                self.sample_grad_add(i, x, w, out);
            }
        }
        self.reg.grad_add(x, out);
    }

    /// Draws one oracle output at `x`. `batch` is scratch space.
    pub fn sample_gradient<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        oracle: &OracleSpec,
        rng: &mut R,
        batch: &mut Vec<usize>,
        out: &mut [f64],
    ) {
        match oracle.batch_size {
            Some(b) if self.data.n() > 0 => {
                batch.clear();
                batch.extend((0..b).map(|_| rng.random_range(0..self.data.n())));
                self.minibatch_gradient(x, batch, out);
            }
            _ => self.gradient(x, out),
        }
        if oracle.additive_sigma2 > 0.0 {
            let sd = (oracle.additive_sigma2 / self.dim as f64).sqrt();
            for o in out.iter_mut() {
                *o += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    /// Exact `E||g - grad f(x)||^2` of the oracle at `x`.
    pub fn oracle_variance(&self, x: &[f64], oracle: &OracleSpec) -> f64 {
        let mut var = oracle.additive_sigma2;
        if let (Some(b), n) = (oracle.batch_size, self.data.n()) {
            if n > 0 && b > 0 {
                let mut mean = vec![0.0; self.dim];
                for i in 0..n {
                    self.sample_grad_add(i, x, 1.0 / n as f64, &mut mean);
                }
                let mut spread = 0.0;
                let mut gi = vec![0.0; self.dim];
                for i in 0..n {
                    gi.fill(0.0);
                    self.sample_grad_add(i, x, 1.0, &mut gi);
                    spread += crate::linalg::dist_sq(&gi, &mean);
                }
                var += spread / (n as f64 * b as f64);
            }
        }
        var
    }

    /// Norm of the minimum-norm subgradient (the gradient norm for smooth objectives).
    pub fn stationarity(&self, x: &[f64]) -> f64 {
        match self.reg {
            Regularizer::Lasso(l) => {
                let mut g = vec![0.0; self.dim];
                let n = self.data.n();
                for i in 0..n {
                    self.sample_grad_add(i, x, 1.0 / n as f64, &mut g);
                }
                g.iter()
                    .zip(x)
                    .map(|(gi, xi)| {
                        let s = if *xi != 0.0 { gi + l * sign(*xi) } else { gi.signum() * (gi.abs() - l).max(0.0) };
                        s * s
                    })
                    .sum::<f64>()
                    .sqrt()
            }
            _ => norm(&self.gradient_vec(x)),
        }
    }

    /// True when a central difference with step `h` could straddle a kink.
    pub fn near_kink(&self, x: &[f64], h: f64) -> bool {
        let reach = 2.0 * h;
        if let Regularizer::Lasso(_) = self.reg {
            if x.iter().any(|v| v.abs() <= reach) {
                return true;
            }
        }
        match &self.loss {
            Loss::Phase => (0..self.data.n()).any(|i| {
                let a = self.data.row(i);
                let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                dot(a, x).abs() <= reach * amax
            }),
            Loss::Network(net) if net.activation() == Activation::Relu => {
                (0..self.data.n()).any(|i| net.min_abs_preactivation(x, self.data.row(i)) <= 1e-3)
            }
            _ => false,
        }
    }

    /// Plain gradient descent with Armijo backtracking (proximal steps for the
    /// l1 term) until the stationarity measure drops to `tol`.
    pub fn resolve_optimum(&self, start: &[f64], tol: f64) -> Result<Vec<f64>, ProblemError> {
        if start.len() != self.dim {
            return Err(ProblemError::Dimension { expected: self.dim, got: start.len() });
        }
        let lasso = match self.reg {
            Regularizer::Lasso(l) => Some(l),
            _ => None,
        };
        // smooth part only when the l1 term is handled by the prox step
        let smooth_value = |x: &[f64]| match lasso {
            Some(l) => self.value(x) - l * x.iter().map(|v| v.abs()).sum::<f64>(),
            None => self.value(x),
        };
        let smooth_grad = |x: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            let n = self.data.n();
            for i in 0..n {
                self.sample_grad_add(i, x, 1.0 / n as f64, g);
            }
            if lasso.is_none() {
                self.reg.grad_add(x, g);
            }
        };

        let mut x = start.to_vec();
        let mut g = vec![0.0; self.dim];
        let mut trial = vec![0.0; self.dim];
        let mut step = 1.0;
        // last step length that gave a decrease visible above rounding
        let mut trusted = match self.smoothness {
            Smoothness::Lipschitz(l) if l > 0.0 && l.is_finite() => Some(1.0 / l),
            _ => None,
        };
        let mut achieved = self.stationarity(&x);
        for _ in 0..MAX_RESOLVE_ITERS {
            if achieved <= tol {
                return Ok(x);
            }
            smooth_grad(&x, &mut g);
            let fx = smooth_value(&x);
            let slack = 8.0 * f64::EPSILON * (fx.abs() + 1.0);
            let mut visible;
            loop {
                for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                    let v = xi - step * gi;
                    *t = match lasso {
                        Some(l) => v.signum() * (v.abs() - step * l).max(0.0),
                        None => v,
                    };
                }
                let model = fx
                    + trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| gi * (t - xi)).sum::<f64>()
                    + crate::linalg::dist_sq(&trial, &x) / (2.0 * step);
                let ft = smooth_value(&trial);
                visible = fx - ft > slack;
                if step < 1e-300 {
                    break;
                }
                if ft <= model + slack {
                    // below the rounding floor the test accepts anything; fall back to a known-good length
                    match trusted {
                        Some(t) if !visible && step > t => step = t,
                        _ => break,
                    }
                    continue;
                }
                step *= 0.5;
            }
            std::mem::swap(&mut x, &mut trial);
            achieved = self.stationarity(&x);
            if visible {
                trusted = Some(step);
                step = (step * 2.0).min(1e6);
            }
        }
        Err(ProblemError::NoConvergence { iters: MAX_RESOLVE_ITERS, achieved, target: tol })
    }
}

fn positive(name: &str, v: f64) -> Result<(), ProblemError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ProblemError::Invalid(format!("{name} = {v} must be positive")))
    }
}

fn mean_abs(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|b| b.abs()).sum::<f64>() / v.len() as f64
    }
}

/// Upper bound on |h''| for `h(r) = -0.5 log(nu + exp(-r^2))`, by dense grid plus margin.
fn bz_curvature(nu: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..=20_000 {
        let r = i as f64 * 5e-4;
        let e = (-r * r).exp();
        let h2 = e * ((1.0 - 2.0 * r * r) * nu + e) / (nu + e).powi(2);
        worst = worst.max(h2.abs());
    }
    1.01 * worst
}

fn design_matrix(data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(data.n(), data.d(), data.features())
}

/// Smallest and largest eigenvalue of `A^T A`.
fn gram_extremes(data: &Dataset) -> Result<(f64, f64), ProblemError> {
    let a = design_matrix(data);
    let gram = a.transpose() * &a;
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(0.0, f64::max);
    if !(lo > 1e-12 * hi.max(1e-300)) {
        return Err(ProblemError::RankDeficient(lo));
    }
    Ok((lo, hi))
}

fn normal_equations(data: &Dataset) -> Result<Vec<f64>, ProblemError> {
    let a = design_matrix(data);
    let b = DVector::from_column_slice(data.labels());
    let gram = a.transpose() * &a;
    let rhs = a.transpose() * b;
    let chol = gram.cholesky().ok_or(ProblemError::RankDeficient(0.0))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient(problem: &Problem, x: &[f64], h: f64) -> Result<Vec<f64>, ProblemError> {
    if !(h > 0.0) {
        return Err(ProblemError::Invalid("h must be positive".into()));
    }
    if problem.near_kink(x, h) {
        return Err(ProblemError::NearKink);
    }
    let mut probe = x.to_vec();
    Ok((0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = problem.value(&probe);
            probe[i] = x[i] - h;
            let down = problem.value(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect())
}

#[cfg(test)]
mod tests;

//! Locally stationary short- and long-memory generators.
//!
//! Every filter is evaluated in its frozen-time (Bernoulli shift) form: the
//! observation at index `i` is the stationary process with coefficients
//! frozen at `t_i = i / n`, driven by the shared innovation sequence. Indices
//! before the sample (`i <= 0`) use coefficients frozen at `t = 0`.
//!
//! Innovations are drawn backwards in time, starting at `i = n`, so the draw
//! attached to a given index does not depend on how long the burn-in is.

use crate::error::{invalid, LrdError, Result};
use crate::rng::{stream_rng, Stream};
use crate::sample::RegressionSample;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal, StudentT};
use std::f64::consts::PI;

/// Tail threshold above which the truncated fractional filter is reported.
pub const DEFAULT_TAIL_THRESHOLD: f64 = 1e-4;

/// Lags kept by the frozen AR(1) filters; coefficients are bounded by 1/2.
const AR_WINDOW: usize = 64;
/// Warm-up of the frozen GARCH(1,1) variance recursion.
const GARCH_WINDOW: usize = 96;

/// Binomial weights of `(1 - B)^{-d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalWeights {
    pub d: f64,
    pub weights: Vec<f64>,
}

impl FractionalWeights {
    pub fn truncation(&self) -> usize {
        self.weights.len() - 1
    }
}

fn check_d(d: f64) -> Result<()> {
    if (0.0..0.5).contains(&d) {
        Ok(())
    } else {
        Err(LrdError::MemoryDomain(d))
    }
}

/// `psi_0..psi_J` by the recursion `psi_j = psi_{j-1} (j - 1 + d) / j`.
pub fn psi_weights(d: f64, truncation: usize) -> Result<FractionalWeights> {
    check_d(d)?;
    Ok(FractionalWeights {
        d,
        weights: psi_vec(d, truncation),
    })
}

fn psi_vec(d: f64, truncation: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(truncation + 1);
    w.push(1.0);
    let mut prev = 1.0;
    for j in 1..=truncation {
        prev *= (j as f64 - 1.0 + d) / j as f64;
        w.push(prev);
    }
    w
}

/// Memory parameter, either constant or a function of rescaled time.
#[derive(Debug, Clone, Copy)]
pub enum MemoryProfile {
    Constant(f64),
    TimeVarying(fn(f64) -> f64),
}

impl Default for MemoryProfile {
    fn default() -> Self {
        MemoryProfile::Constant(0.0)
    }
}

impl MemoryProfile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            MemoryProfile::Constant(d) => *d,
            MemoryProfile::TimeVarying(f) => f(t),
        }
    }

    fn is_short_memory(&self) -> bool {
        matches!(self, MemoryProfile::Constant(d) if *d == 0.0)
    }

    fn validate(&self) -> Result<()> {
        match self {
            MemoryProfile::Constant(d) => check_d(*d),
            MemoryProfile::TimeVarying(f) => {
                for k in 0..=1000 {
                    check_d(f(k as f64 / 1000.0))?;
                }
                Ok(())
            }
        }
    }
}

/// `d_2(t) = 0.35 + 0.1 cos(2 pi t)`.
pub fn d2_profile(t: f64) -> f64 {
    0.35 + 0.1 * (2.0 * PI * t).cos()
}

/// Infinite-past (Type I) or truncated-past (Type II) fractional integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FractionalType {
    #[default]
    TypeI,
    TypeII,
}

/// `e_i = sum_{k=0}^{J} psi_k(d(t_i)) u_{i-k}` for `i = 1..n`.
///
/// `u` holds `J` pre-sample values followed by the `n` in-sample values, so
/// `u.len() >= n + J`; only the last `n + J` entries are used.
pub fn fractional_integrate(u: &[f64], memory: &MemoryProfile, n: usize, truncation: usize) -> Result<Vec<f64>> {
    if u.len() < n + truncation {
        return Err(invalid(
            "u",
            format!("length {} shorter than n + J = {}", u.len(), n + truncation),
        ));
    }
    memory.validate()?;
    let u = &u[u.len() - n - truncation..];
    let mut e = vec![0.0; n];
    match memory {
        MemoryProfile::Constant(d) => {
            let psi = psi_vec(*d, truncation);
            if *d > 0.0 && psi[truncation] > DEFAULT_TAIL_THRESHOLD {
                log::warn!(
                    "fractional filter truncated at J = {truncation}: psi_J = {:.2e} exceeds {:.0e}",
                    psi[truncation],
                    DEFAULT_TAIL_THRESHOLD
                );
            }
            for (i, ei) in e.iter_mut().enumerate() {
                *ei = convolve_back(&psi, u, truncation + i);
            }
        }
        MemoryProfile::TimeVarying(f) => {
            for (i, ei) in e.iter_mut().enumerate() {
                let psi = psi_vec(f((i + 1) as f64 / n as f64), truncation);
                *ei = convolve_back(&psi, u, truncation + i);
            }
        }
    }
    Ok(e)
}

/// `sum_k w_k x_{at - k}` over the lags available in `x`.
#[inline]
fn convolve_back(w: &[f64], x: &[f64], at: usize) -> f64 {
    let lags = w.len().min(at + 1);
    let mut s = 0.0;
    for k in 0..lags {
        s += w[k] * x[at - k];
    }
    s
}

/// Distribution of the iid driving innovations (unit variance).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Innovation {
    #[default]
    Gaussian,
    /// Student t rescaled to unit variance; `df > 2`.
    StudentT { df: f64 },
    /// Degenerate zero innovations, for deterministic checks.
    Zero,
}

impl Innovation {
    fn sampler(&self) -> Result<Box<dyn Fn(&mut rand_chacha::ChaCha8Rng) -> f64>> {
        Ok(match *self {
            Innovation::Gaussian => Box::new(|rng| StandardNormal.sample(rng)),
            Innovation::Zero => Box::new(|_| 0.0),
            Innovation::StudentT { df } => {
                if !(df > 2.0) {
                    return Err(invalid("df", format!("Student t needs df > 2, got {df}")));
                }
                let dist = StudentT::new(df).map_err(|e| invalid("df", e.to_string()))?;
                let scale = ((df - 2.0) / df).sqrt();
                Box::new(move |rng| scale * dist.sample(rng))
            }
        })
    }
}

/// Time-varying GARCH(1,1) recursion
/// `sigma_j^2(t) = c(t) + alpha(t) G_{j-1}^2 + beta(t) sigma_{j-1}^2`.
#[derive(Debug, Clone, Copy)]
pub struct GarchParams {
    pub c: fn(f64) -> f64,
    pub alpha: fn(f64) -> f64,
    pub beta: fn(f64) -> f64,
}

impl GarchParams {
    /// The volatility recursion driving model M2.
    pub fn m2() -> Self {
        GarchParams {
            c: |t| 0.9 + 0.1 * (PI / 3.0 + 2.0 * PI * t).cos(),
            alpha: |t| 0.1 + 0.2 * t,
            beta: |t| 0.1 + 0.2 * t,
        }
    }

    /// Rejects `alpha(t) + beta(t) >= 1` or negative coefficients on a grid over `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let (c, a, b) = ((self.c)(t), (self.alpha)(t), (self.beta)(t));
            if !(c > 0.0 && a >= 0.0 && b >= 0.0) {
                return Err(invalid("garch", format!("coefficients must be c > 0, alpha, beta >= 0 (t = {t})")));
            }
            if a + b >= 1.0 {
                return Err(LrdError::GarchNotStationary { t, sum: a + b });
            }
        }
        Ok(())
    }
}

/// User-specified trend-only model: `y_i = mu(t_i) + e_i`, with `u` a frozen
/// AR(1) `u = a(t) u_{-1} + s(t) v` and `v` either iid or GARCH-modulated.
#[derive(Debug, Clone, Copy)]
pub struct CustomModel {
    pub trend: fn(f64) -> f64,
    pub ar: fn(f64) -> f64,
    pub scale: fn(f64) -> f64,
    pub garch: Option<GarchParams>,
}

impl Default for CustomModel {
    /// FARIMA(0, d, 0) noise around a zero trend.
    fn default() -> Self {
        CustomModel {
            trend: |_| 0.0,
            ar: |_| 0.0,
            scale: |_| 1.0,
            garch: None,
        }
    }
}

/// Data-generating process.
#[derive(Debug, Clone, Copy, Default)]
pub enum Model {
    /// Covariate and error independent tv-AR(1) processes.
    M0,
    /// Heteroscedastic error `B_1 sqrt(1 + W^2)` with tv-AR(1) `B_1`.
    #[default]
    M1,
    /// Heteroscedastic error `B_2 sqrt(1 + W^2)` with tv-AR(1)-GARCH(1,1) `B_2`.
    M2,
    Custom(CustomModel),
}

impl Model {
    /// Regression dimension including the intercept.
    pub fn p(&self) -> usize {
        match self {
            Model::Custom(_) => 1,
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::M0 => "M0",
            Model::M1 => "M1",
            Model::M2 => "M2",
            Model::Custom(_) => "custom",
        }
    }
}

/// Coefficient functions shared by M0-M2.
pub fn beta1(t: f64) -> f64 {
    4.0 * (PI * t).sin()
}

pub fn beta2(t: f64) -> f64 {
    4.0 * (-2.0 * (t - 0.5).powi(2)).exp()
}

/// Covariate filter `W = a(t) W_{-1} + s zeta + c(t)` for each model.
fn covariate_coefs(model: &Model, t: f64) -> (f64, f64, f64) {
    let c2 = (t - 0.5).powi(2);
    match model {
        Model::M0 => (0.25 + 0.25 * (2.0 * PI * t).cos(), 0.25, c2),
        _ => (0.1 + 0.1 * (2.0 * PI * t).cos(), 0.2, 0.7 * c2),
    }
}

/// Generative description of a simulated regression.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub n: usize,
    pub model: Model,
    pub memory: MemoryProfile,
    pub fractional_type: FractionalType,
    /// Truncation `J` of the fractional filter; defaults to `max(2000, n)`.
    pub truncation: Option<usize>,
    /// Pre-sample length; defaults to `J` and must be at least `J`.
    pub burn_in: Option<usize>,
    pub innovation: Innovation,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(model: Model, n: usize, d: f64, seed: u64) -> Self {
        SimulationSpec {
            n,
            model,
            memory: MemoryProfile::Constant(d),
            fractional_type: FractionalType::TypeI,
            truncation: None,
            burn_in: None,
            innovation: Innovation::Gaussian,
            seed,
        }
    }

    pub fn truncation(&self) -> usize {
        self.truncation.unwrap_or_else(|| self.n.max(2000))
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| self.truncation())
    }

    pub fn p(&self) -> usize {
        self.model.p()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(invalid("n", format!("need n >= 8, got {}", self.n)));
        }
        if self.burn_in() < self.truncation() {
            return Err(invalid(
                "burn_in",
                format!("burn-in {} shorter than truncation {}", self.burn_in(), self.truncation()),
            ));
        }
        self.memory.validate()?;
        match &self.model {
            Model::M2 => GarchParams::m2().validate()?,
            Model::Custom(CustomModel { garch: Some(g), .. }) => g.validate()?,
            _ => {}
        }
        Ok(())
    }
}

/// Everything a simulation produces, including the unobserved pieces.
#[derive(Debug, Clone)]
pub struct SimulatedPaths {
    pub sample: RegressionSample,
    /// Regression errors `e_i`.
    pub errors: Vec<f64>,
    /// Short-memory innovations `u_i` for `i = 1..n`.
    pub shocks: Vec<f64>,
    /// True coefficients, `n x p`.
    pub beta: DMatrix<f64>,
}

/// Simulate `(y, X)` for `spec`. Deterministic given `spec.seed`.
pub fn simulate_model(spec: &SimulationSpec) -> Result<RegressionSample> {
    simulate_paths(spec).map(|p| p.sample)
}

/// Innovation arrays over indices `lo..=n`, stored at offset `i - lo`.
struct Draws {
    lo: i64,
    zeta: Vec<f64>,
    eps: Vec<f64>,
}

impl Draws {
    fn new(spec: &SimulationSpec, lo: i64) -> Result<Self> {
        let len = (spec.n as i64 - lo + 1) as usize;
        let mut zeta = vec![0.0; len];
        let mut eps = vec![0.0; len];
        let draw = spec.innovation.sampler()?;
        let mut rng = stream_rng(spec.seed, Stream::Simulation, 0);
        for k in (0..len).rev() {
            zeta[k] = draw(&mut rng);
            eps[k] = draw(&mut rng);
        }
        Ok(Draws { lo, zeta, eps })
    }

    #[inline]
    fn at(&self, i: i64) -> usize {
        (i - self.lo) as usize
    }
}

/// Frozen-coefficient time for index `i`: pre-sample indices use `t = 0`.
#[inline]
fn frozen_t(i: i64, n: usize) -> f64 {
    (i as f64 / n as f64).max(0.0)
}

/// Stationary AR(1) with coefficient `a`, scale `s` and drift `c`, evaluated at
/// index `i` from the innovations `v` (absolute index `i` at position `at`).
#[inline]
fn frozen_ar(a: f64, s: f64, c: f64, v: &[f64], at: usize) -> f64 {
    let mut acc = 0.0;
    let mut w = 1.0;
    for k in 0..=AR_WINDOW {
        acc += w * v[at - k];
        w *= a;
    }
    s * acc + c / (1.0 - a)
}

fn frozen_garch_ar(g: &GarchParams, a: f64, s: f64, t: f64, eps: &[f64], at: usize) -> f64 {
    let (c, alpha, beta) = ((g.c)(t), (g.alpha)(t), (g.beta)(t));
    let start = at - AR_WINDOW - GARCH_WINDOW;
    let mut sigma2 = c / (1.0 - alpha - beta);
    let mut g_prev2 = sigma2;
    let mut gs = [0.0; AR_WINDOW + 1];
    for j in start..=at {
        sigma2 = c + alpha * g_prev2 + beta * sigma2;
        let gj = eps[j] * sigma2.sqrt();
        g_prev2 = gj * gj;
        if j + AR_WINDOW >= at {
            gs[at - j] = gj;
        }
    }
    let mut acc = 0.0;
    let mut w = 1.0;
    for gk in gs.iter() {
        acc += w * gk;
        w *= a;
    }
    s * acc
}

fn shock_at(model: &Model, draws: &Draws, i: i64, n: usize, w: f64) -> f64 {
    let t = frozen_t(i, n);
    let c2 = (t - 0.5).powi(2);
    let at = draws.at(i);
    match model {
        Model::M0 => frozen_ar(0.35 - 0.4 * c2, 0.8, 0.0, &draws.eps, at),
        Model::M1 => frozen_ar(0.3 - 0.4 * c2, 0.8, 0.0, &draws.eps, at) * (1.0 + w * w).sqrt(),
        Model::M2 => {
            frozen_garch_ar(&GarchParams::m2(), 0.15 - 0.4 * c2, 0.8, t, &draws.eps, at) * (1.0 + w * w).sqrt()
        }
        Model::Custom(m) => match &m.garch {
            None => frozen_ar((m.ar)(t), (m.scale)(t), 0.0, &draws.eps, at),
            Some(g) => frozen_garch_ar(g, (m.ar)(t), (m.scale)(t), t, &draws.eps, at),
        },
    }
}

/// Simulate and keep the latent paths.
pub fn simulate_paths(spec: &SimulationSpec) -> Result<SimulatedPaths> {
    spec.validate()?;
    let n = spec.n;
    let long = !spec.memory.is_short_memory();
    let pre = match (long, spec.fractional_type) {
        (true, FractionalType::TypeI) => spec.burn_in(),
        _ => 0,
    };
    let margin = (AR_WINDOW + GARCH_WINDOW + 1) as i64;
    let first = 1 - pre as i64;
    let draws = Draws::new(spec, first - margin)?;

    let has_covariate = spec.p() == 2;
    let span = (n as i64 - first + 1) as usize;
    let mut w = vec![0.0; span];
    let mut u = vec![0.0; span];
    for k in 0..span {
        let i = first + k as i64;
        if has_covariate {
            let (a, s, c) = covariate_coefs(&spec.model, frozen_t(i, n));
            w[k] = frozen_ar(a, s, c, &draws.zeta, draws.at(i));
        }
        u[k] = shock_at(&spec.model, &draws, i, n, w[k]);
    }

    let shocks = u[pre..].to_vec();
    let errors = if !long {
        shocks.clone()
    } else {
        match spec.fractional_type {
            // All `burn_in` pre-sample shocks feed the filter, truncated at J.
            FractionalType::TypeI => fractional_integrate(&u, &spec.memory, n, spec.truncation().min(pre))?,
            FractionalType::TypeII => (0..n)
                .map(|i| {
                    let psi = psi_vec(spec.memory.at((i + 1) as f64 / n as f64), i);
                    convolve_back(&psi, &shocks, i)
                })
                .collect(),
        }
    };

    let (sample, beta) = match &spec.model {
        Model::Custom(m) => {
            let y: Vec<f64> = (0..n).map(|i| (m.trend)((i + 1) as f64 / n as f64) + errors[i]).collect();
            let beta = DMatrix::from_fn(n, 1, |i, _| (m.trend)((i + 1) as f64 / n as f64));
            (RegressionSample::trend(y)?, beta)
        }
        _ => {
            let x = &w[pre..];
            let beta = DMatrix::from_fn(n, 2, |i, j| {
                let t = (i + 1) as f64 / n as f64;
                if j == 0 {
                    beta1(t)
                } else {
                    beta2(t)
                }
            });
            let y: Vec<f64> = (0..n).map(|i| beta[(i, 0)] + beta[(i, 1)] * x[i] + errors[i]).collect();
            let cov = DMatrix::from_column_slice(n, 1, x);
            (RegressionSample::new(y, &cov)?, beta)
        }
    };
    Ok(SimulatedPaths {
        sample,
        errors,
        shocks,
        beta,
    })
}

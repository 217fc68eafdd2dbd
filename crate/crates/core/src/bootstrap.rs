//! Gaussian multiplier bootstrap for the four partial-sum tests.
//!
//! Each replicate draws `n` iid standard normal `p`-vectors `V_j`, builds the
//! bootstrap partial-sum path `G_k` over the trimmed range, and evaluates all
//! four functionals on that one path.

use crate::error::{invalid, Result};
use crate::kernel::ParabolaSums;
use std::f64::consts::SQRT_2;
use crate::locreg::jackknife_fit;
use crate::lrcov::{checked_inverse, CovarianceCorrection, LrvEstimates, ModelKind};
use crate::rng::{stream_rng, Stream};
use crate::sample::RegressionSample;
use crate::stats::{all_stats, Statistics, TestKind, Trim};
use crate::tuning::{gcv_select_b, mv_select, BandwidthSet, GcvOptions, MvGrid};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Default number of bootstrap replicates.
pub const DEFAULT_REPLICATES: usize = 2000;
/// Replicates for real-data analyses.
pub const DATA_ANALYSIS_REPLICATES: usize = 5000;

/// Smoothing kernel inside the trend-model bootstrap path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TrendKernel {
    /// The plain kernel `K_b`.
    #[default]
    Plain,
    /// The jackknife equivalent kernel `K*_b`, as in the covariate path.
    Jackknife,
}

/// Banded kernel smoothing `sum_j (n b)^{-1} K((j - i) / (n b)) v_j` for the
/// Epanechnikov kernel and its jackknife counterpart. Each is a signed sum of
/// truncated parabolas `c (1 - d^2 / h^2)` in the offset `d`, so every band sum
/// follows from prefix sums of `v_j`, `j v_j` and `j^2 v_j`.
struct BandTable {
    /// `(c, h, reach)` per parabola.
    parts: Vec<(f64, f64, usize)>,
}

impl BandTable {
    fn new(n: usize, parts: &[(f64, f64)]) -> Self {
        let parts = parts
            .iter()
            .map(|&(c, h)| (c, h, (h.floor() as usize).min(n.saturating_sub(1))))
            .collect();
        BandTable { parts }
    }

    fn plain(n: usize, b: f64) -> Self {
        let nb = n as f64 * b;
        Self::new(n, &[(0.75 / nb, nb)])
    }

    fn star(n: usize, b: f64) -> Self {
        let nb = n as f64 * b;
        Self::new(n, &[(2.0 * SQRT_2 * 0.75 / nb, nb / SQRT_2), (-0.75 / nb, nb)])
    }

    /// Band sums at every grid point.
    fn apply_all(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let sums = ParabolaSums::new(v, 1);
        (0..n)
            .map(|i| {
                let mut out = [0.0];
                for &(c, h, reach) in &self.parts {
                    let lo = i.saturating_sub(reach);
                    let hi = (i + reach + 1).min(n);
                    sums.add_window(lo, hi, i as f64, h, c, &mut out);
                }
                out[0]
            })
            .collect()
    }
}

fn check_inputs(n: usize, b: f64, replicates: usize) -> Result<Trim> {
    if replicates == 0 {
        return Err(invalid("B", "need at least one bootstrap replicate"));
    }
    if !(b > 0.0 && b < 0.5) {
        return Err(invalid("b", format!("need 0 < b < 1/2, got {b}")));
    }
    Trim::new(n, b)
}

/// Standard normal multipliers for replicate `r`, `n * p` values row-major.
pub fn multipliers(seed: u64, r: usize, n: usize, p: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::Bootstrap, r as u64);
    (0..n * p).map(|_| rng.sample(StandardNormal)).collect()
}

fn trend_path_with(table: &BandTable, trim: &Trim, sigma: &[f64], v: &[f64]) -> Vec<f64> {
    let sv: Vec<f64> = sigma.iter().zip(v).map(|(s, v)| s * v).collect();
    let smoothed = table.apply_all(&sv);
    let mut acc = 0.0;
    trim.range()
        .map(|i| {
            acc += sv[i] - smoothed[i];
            acc
        })
        .collect()
}

/// Bootstrap partial sums `G_l..G_u` of the trend model for given multipliers.
pub fn trend_path(sigma_h: &[f64], v: &[f64], b: f64, kernel: TrendKernel) -> Result<Vec<f64>> {
    let n = sigma_h.len();
    if v.len() != n {
        return Err(invalid("V", format!("{} multipliers for n = {n}", v.len())));
    }
    let trim = check_inputs(n, b, 1)?;
    let table = match kernel {
        TrendKernel::Plain => BandTable::plain(n, b),
        TrendKernel::Jackknife => BandTable::star(n, b),
    };
    Ok(trend_path_with(&table, &trim, sigma_h, v))
}

/// Algorithm for the trend model: `B` replicates of all four statistics.
pub fn boot_trend(sigma_h: &[f64], b: f64, replicates: usize, seed: u64, kernel: TrendKernel) -> Result<Vec<Statistics>> {
    let n = sigma_h.len();
    let trim = check_inputs(n, b, replicates)?;
    let table = match kernel {
        TrendKernel::Plain => BandTable::plain(n, b),
        TrendKernel::Jackknife => BandTable::star(n, b),
    };
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| {
            let v = multipliers(seed, r, n, 1);
            Statistics::from_partial_sums(&trend_path_with(&table, &trim, sigma_h, &v), n)
        })
        .collect())
}

/// Read-only gridwise inputs of the covariate-model bootstrap.
pub struct CovariateInputs {
    n: usize,
    p: usize,
    /// `a_i = M^{-1}(t_i) x_i`, row-major.
    loadings: Vec<f64>,
    /// Lower-triangular factors of `Sigma(t_j)`, row-major blocks.
    roots: Vec<f64>,
    sigma_h: Vec<f64>,
    table: BandTable,
    trim: Trim,
}

impl CovariateInputs {
    pub fn new(
        x: &DMatrix<f64>,
        m_hat: &[DMatrix<f64>],
        sigma_factor: &[DMatrix<f64>],
        sigma_h: &[f64],
        b: f64,
    ) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if m_hat.len() != n || sigma_factor.len() != n || sigma_h.len() != n {
            return Err(invalid("grid", "estimate grids must have one entry per observation"));
        }
        let trim = check_inputs(n, b, 1)?;
        let mut loadings = vec![0.0; n * p];
        for i in trim.range() {
            let inv = checked_inverse(&m_hat[i], "M", (i + 1) as f64 / n as f64)?;
            let a = inv * x.row(i).transpose();
            loadings[i * p..(i + 1) * p].copy_from_slice(a.as_slice());
        }
        let mut roots = Vec::with_capacity(n * p * p);
        for r in sigma_factor {
            for a in 0..p {
                for c in 0..p {
                    roots.push(r[(a, c)]);
                }
            }
        }
        Ok(CovariateInputs {
            n,
            p,
            loadings,
            roots,
            sigma_h: sigma_h.to_vec(),
            table: BandTable::star(n, b),
            trim,
        })
    }

    pub fn from_estimates(sample: &RegressionSample, lrv: &LrvEstimates, b: f64) -> Result<Self> {
        Self::new(sample.x(), &lrv.m_hat, &lrv.sigma_factor, &lrv.sigma_h(), b)
    }

    /// `G_l..G_u` for multipliers `v` (`n * p`, row-major).
    pub fn path(&self, v: &[f64]) -> Vec<f64> {
        let (n, p) = (self.n, self.p);
        // r_j = L(t_j) V_j, stored coordinate-major for the band sums
        let mut r = vec![0.0; n * p];
        for j in 0..n {
            let root = &self.roots[j * p * p..(j + 1) * p * p];
            let vj = &v[j * p..(j + 1) * p];
            for a in 0..p {
                r[a * n + j] = (0..p).map(|c| root[a * p + c] * vj[c]).sum();
            }
        }
        let bands: Vec<Vec<f64>> = (0..p).map(|a| self.table.apply_all(&r[a * n..(a + 1) * n])).collect();
        let mut acc = 0.0;
        self.trim
            .range()
            .map(|i| {
                let smoothed: f64 = (0..p).map(|a| self.loadings[i * p + a] * bands[a][i]).sum();
                acc += self.sigma_h[i] * v[i * p] - smoothed;
                acc
            })
            .collect()
    }
}

/// Algorithm for the covariate model: `B` replicates of all four statistics.
pub fn boot_covariate(inputs: &CovariateInputs, replicates: usize, seed: u64) -> Result<Vec<Statistics>> {
    if replicates == 0 {
        return Err(invalid("B", "need at least one bootstrap replicate"));
    }
    let (n, p) = (inputs.n, inputs.p);
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| Statistics::from_partial_sums(&inputs.path(&multipliers(seed, r, n, p)), n))
        .collect())
}

/// `1 - #{boot <= statistic} / B`.
pub fn p_value(statistic: f64, boot: &[f64]) -> f64 {
    if boot.is_empty() {
        return f64::NAN;
    }
    let below = boot.iter().filter(|v| **v <= statistic).count();
    1.0 - below as f64 / boot.len() as f64
}

/// Bootstrap draws of every statistic for one parameter set.
pub fn bootstrap_draws(
    sample: &RegressionSample,
    kind: ModelKind,
    lrv: &LrvEstimates,
    b: f64,
    replicates: usize,
    seed: u64,
    trend_kernel: TrendKernel,
) -> Result<Vec<Statistics>> {
    match kind {
        ModelKind::Trend => boot_trend(&lrv.sigma_h(), b, replicates, seed, trend_kernel),
        ModelKind::Covariate => boot_covariate(&CovariateInputs::from_estimates(sample, lrv, b)?, replicates, seed),
    }
}

/// Outcome of one test on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub test: TestKind,
    pub model: ModelKind,
    pub statistic: f64,
    /// Bootstrap replicates, ascending.
    pub boot: Vec<f64>,
    pub p_value: f64,
    pub params: BandwidthSet,
    pub replicates: usize,
    pub seed: u64,
}

impl TestReport {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Smoothing parameters and bootstrap settings for [`run_test`]. `None`
/// requests automatic selection.
#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    pub b: Option<f64>,
    pub m: Option<usize>,
    pub tau: Option<f64>,
    pub eta: Option<f64>,
    pub replicates: usize,
    pub mv_replicates: usize,
    pub seed: u64,
    pub trend_kernel: TrendKernel,
    /// Long-run covariance estimator of the covariate-model bootstrap.
    pub covariance: CovarianceCorrection,
    pub gcv: GcvOptions,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            b: None,
            m: None,
            tau: None,
            eta: None,
            replicates: DEFAULT_REPLICATES,
            mv_replicates: crate::tuning::DEFAULT_MV_REPLICATES,
            seed: 0,
            trend_kernel: TrendKernel::Plain,
            covariance: CovarianceCorrection::default(),
            gcv: GcvOptions::default(),
        }
    }
}

/// Fit, test and bootstrap `sample` end to end.
///
/// The residual fit is shared by all tests. `(m, tau)` may be selected per
/// test; each distinct pair is bootstrapped once with the same seed.
pub fn run_test(
    sample: &RegressionSample,
    kind: ModelKind,
    tests: &[TestKind],
    config: &TestConfig,
) -> Result<Vec<TestReport>> {
    if tests.is_empty() {
        return Err(invalid("tests", "no tests requested"));
    }
    if config.replicates == 0 {
        return Err(invalid("B", "need at least one bootstrap replicate"));
    }
    let n = sample.n();
    let sample = match kind {
        ModelKind::Trend => sample.as_trend(),
        ModelKind::Covariate => sample.clone(),
    };
    let b = match config.b {
        Some(b) => b,
        None => gcv_select_b(&sample, &config.gcv)?.b,
    };
    Trim::new(n, b)?;
    let fit = jackknife_fit(&sample, b)?;
    let observed = all_stats(&fit.residuals, b)?;
    let eta = config.eta.unwrap_or(b);

    let grid = MvGrid::for_sample(n, config.m, config.tau);
    let chosen: Vec<(usize, f64)> = if grid.is_single() {
        vec![(grid.m[0], grid.tau[0]); tests.len()]
    } else {
        let sel = mv_select(&sample, kind, b, eta, &grid, config.mv_replicates, config.seed, config.trend_kernel, config.covariance)?;
        tests.iter().map(|t| sel.choice(*t)).collect()
    };

    let m_hat = match kind {
        ModelKind::Covariate => Some(crate::lrcov::m_hat_grid(sample.x(), eta)?),
        ModelKind::Trend => None,
    };
    let mut cache: BTreeMap<(usize, u64), Vec<Statistics>> = BTreeMap::new();
    let mut reports = Vec::with_capacity(tests.len());
    for (test, &(m, tau)) in tests.iter().zip(&chosen) {
        let params = BandwidthSet::new(n, b, m, tau, eta, config.mv_replicates)?;
        let key = (m, tau.to_bits());
        if !cache.contains_key(&key) {
            let lrv = LrvEstimates::estimate_with(&sample, kind, m, tau, eta, config.covariance, m_hat.clone())?;
            let draws = bootstrap_draws(&sample, kind, &lrv, b, config.replicates, config.seed, config.trend_kernel)?;
            cache.insert(key, draws);
        }
        let mut boot: Vec<f64> = cache[&key].iter().map(|s| s.get(*test)).collect();
        boot.sort_by(f64::total_cmp);
        let statistic = observed.get(*test);
        reports.push(TestReport {
            test: *test,
            model: kind,
            statistic,
            p_value: p_value(statistic, &boot),
            boot,
            params,
            replicates: config.replicates,
            seed: config.seed,
        });
    }
    Ok(reports)
}

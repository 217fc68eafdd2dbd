//! Smoothing-parameter selection: GCV for the regression bandwidth, minimum
//! volatility for the difference-based window and bandwidth, and the `eta`
//! rule for `M(t)`.

use crate::bootstrap::{bootstrap_draws, TrendKernel};
use crate::error::{invalid, Result};
use crate::locreg::{local_linear_path, smoothed, Smoother};
use crate::lrcov::{m_hat_grid, sigma_hat, sigmah_diff, CovarianceCorrection, LrvEstimates, ModelKind};
use crate::rng::{derive_seed, Stream};
use crate::sample::RegressionSample;
use crate::stats::{TestKind, Trim};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Bootstrap replicates per minimum-volatility cell.
pub const DEFAULT_MV_REPLICATES: usize = 100;
/// Points in the GCV bandwidth grid.
pub const DEFAULT_GCV_POINTS: usize = 20;
/// Largest bandwidth the GCV search will consider.
pub const MAX_BANDWIDTH: f64 = 0.45;

/// Validated smoothing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSet {
    pub b: f64,
    pub m: usize,
    pub tau: f64,
    pub eta: f64,
    pub mv_replicates: usize,
}

impl BandwidthSet {
    pub fn new(n: usize, b: f64, m: usize, tau: f64, eta: f64, mv_replicates: usize) -> Result<Self> {
        if !(b > 0.0 && b < 0.5) {
            return Err(invalid("b", format!("need 0 < b < 1/2, got {b}")));
        }
        Trim::new(n, b)?;
        if m < 2 || 4 * m > n {
            return Err(invalid("m", format!("need 2 <= m <= n/4, got m = {m}, n = {n}")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(invalid("tau", format!("need 0 < tau < 1, got {tau}")));
        }
        if !(eta > 0.0 && eta < 0.5) {
            return Err(invalid("eta", format!("need 0 < eta < 1/2, got {eta}")));
        }
        let gamma = tau + (m + 1) as f64 / n as f64;
        if gamma >= 0.5 {
            return Err(invalid("tau", format!("tau + (m + 1)/n = {gamma:.4} must be below 1/2")));
        }
        Ok(BandwidthSet {
            b,
            m,
            tau,
            eta,
            mv_replicates,
        })
    }
}

/// Pilot choices used before any data-driven selection.
pub fn pilot_b(n: usize) -> f64 {
    (n as f64).powf(-0.2)
}

pub fn pilot_m(n: usize) -> usize {
    ((n as f64).powf(2.0 / 7.0).floor() as usize).max(2)
}

pub fn pilot_tau(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 6.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvOptions {
    pub points: usize,
    pub smoother: Smoother,
}

impl Default for GcvOptions {
    fn default() -> Self {
        GcvOptions {
            points: DEFAULT_GCV_POINTS,
            smoother: Smoother::Jackknife,
        }
    }
}

/// Result of the GCV search.
#[derive(Debug, Clone, PartialEq)]
pub struct GcvSelection {
    pub b: f64,
    /// Scale constant of the search range; `None` when it could not be formed.
    pub c_hat: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    /// `(b, score)` over the grid.
    pub scores: Vec<(f64, f64)>,
}

/// Smallest bandwidth whose halved window still holds `2p + 1` points.
fn min_bandwidth(n: usize, p: usize) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * (2 * p + 1) as f64 / n as f64
}

/// `n^{-1} |Y - Y_hat|^2 / (1 - tr / n)^2`.
pub fn gcv_score(sample: &RegressionSample, b: f64, smoother: Smoother) -> Result<f64> {
    let n = sample.n() as f64;
    let (res, tr) = smoothed(sample, b, smoother)?;
    let rss: f64 = res.iter().map(|e| e * e).sum();
    Ok(rss / n / (1.0 - tr / n).powi(2))
}

/// Scale constant of the GCV range from pilot estimates of the long-run
/// covariance and the coefficient curvature.
pub fn c_hat(sample: &RegressionSample) -> Result<Option<f64>> {
    let n = sample.n();
    let (b0, m0, tau0) = (pilot_b(n), pilot_m(n), pilot_tau(n));
    let trace_sum: f64 = if sample.p() == 1 {
        sigmah_diff(sample.y(), m0, tau0)?.iter().sum()
    } else {
        sigma_hat(sample, m0, tau0)?.iter().map(|s| s.trace()).sum()
    };
    let slope = local_linear_path(sample, b0)?.slope;
    let cut = (n as f64 * b0).floor() as usize;
    // one-based i = floor(n b) + 2 ..= n - floor(n b)
    let curvature: f64 = (cut + 1..n - cut)
        .map(|i| (0..sample.p()).map(|k| (slope[(i, k)] - slope[(i - 1, k)]).powi(2)).sum::<f64>())
        .sum();
    let ratio = 15.0 * (trace_sum / n as f64) / (n as f64 * curvature);
    let c = ratio.powf(0.2);
    Ok(if c.is_finite() && c > 0.0 { Some(c) } else { None })
}

/// GCV bandwidth over a log-spaced grid on `[c n^{-1/4}, c n^{-1/6}]`.
pub fn gcv_select_b(sample: &RegressionSample, options: &GcvOptions) -> Result<GcvSelection> {
    let n = sample.n();
    let nf = n as f64;
    let floor = min_bandwidth(n, sample.p());
    let c = c_hat(sample)?;
    let Some(c) = c else {
        let b = pilot_b(n).clamp(floor, MAX_BANDWIDTH);
        log::warn!("GCV range undefined (flat pilot coefficients); using b = n^(-1/5) = {b:.4}");
        return Ok(GcvSelection {
            b,
            c_hat: None,
            lower: b,
            upper: b,
            scores: Vec::new(),
        });
    };
    let lower = (c * nf.powf(-0.25)).clamp(floor, MAX_BANDWIDTH);
    let upper = (c * nf.powf(-1.0 / 6.0)).clamp(floor, MAX_BANDWIDTH);
    let points = if upper > lower { options.points.max(2) } else { 1 };
    let grid: Vec<f64> = (0..points)
        .map(|k| {
            if points == 1 {
                lower
            } else {
                (lower.ln() + (upper.ln() - lower.ln()) * k as f64 / (points - 1) as f64).exp()
            }
        })
        .collect();
    let scores: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&b| gcv_score(sample, b, options.smoother).map(|s| (b, s)))
        .collect::<Result<_>>()?;
    let mut best = scores[0];
    for &(b, s) in &scores[1..] {
        if s < best.1 {
            best = (b, s);
        }
    }
    Ok(GcvSelection {
        b: best.0,
        c_hat: Some(c),
        lower,
        upper,
        scores,
    })
}

/// Candidate windows and bandwidths for minimum-volatility selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MvGrid {
    pub m: Vec<usize>,
    pub tau: Vec<f64>,
}

impl MvGrid {
    /// `m` over `floor((5/7) n^{2/7})..=floor(2 n^{2/7})` and
    /// `tau` over `{6/7, 1, 8/7} n^{-1/6}`. For small `n` the `tau` values
    /// that break `tau + (m + 1)/n < 1/2` at the largest `m` are dropped.
    pub fn default_for(n: usize) -> Self {
        let base = (n as f64).powf(2.0 / 7.0);
        let lo = ((5.0 / 7.0 * base).floor() as usize).max(2);
        let hi = ((2.0 * base).floor() as usize).min(n / 4).max(lo);
        let t = pilot_tau(n);
        let room = 0.5 - (hi + 1) as f64 / n as f64;
        let mut tau: Vec<f64> = [6.0 / 7.0, 1.0, 8.0 / 7.0].iter().map(|f| f * t).filter(|&v| v < room).collect();
        if tau.is_empty() {
            tau.push(0.9 * room);
        }
        MvGrid {
            m: (lo..=hi).collect(),
            tau,
        }
    }

    /// Default grid with any fixed coordinate collapsed to one value.
    pub fn for_sample(n: usize, m: Option<usize>, tau: Option<f64>) -> Self {
        let mut g = Self::default_for(n);
        if let Some(m) = m {
            g.m = vec![m];
        }
        if let Some(t) = tau {
            g.tau = vec![t];
        }
        g
    }

    pub fn is_single(&self) -> bool {
        self.m.len() == 1 && self.tau.len() == 1
    }
}

/// Minimum-volatility selection, one choice per test.
#[derive(Debug, Clone, PartialEq)]
pub struct MvSelection {
    pub grid: MvGrid,
    /// `variance[test][i][j]`: bootstrap variance at `(m_i, tau_j)`.
    pub variance: Vec<Vec<Vec<f64>>>,
    /// `volatility[test][i][j]`.
    pub volatility: Vec<Vec<Vec<f64>>>,
    /// Selected `(i, j)` per test.
    pub selected: Vec<(usize, usize)>,
}

impl MvSelection {
    pub fn choice(&self, test: TestKind) -> (usize, f64) {
        let (i, j) = self.selected[test.index()];
        (self.grid.m[i], self.grid.tau[j])
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Standard error of each cell's plus-shaped neighbourhood, truncated at the
/// grid edges.
pub fn mv_surface(s2: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = s2.len();
    let cols = s2.first().map_or(0, |r| r.len());
    (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| {
                    let mut cells = vec![s2[i][j]];
                    if j > 0 {
                        cells.push(s2[i][j - 1]);
                    }
                    if j + 1 < cols {
                        cells.push(s2[i][j + 1]);
                    }
                    if i > 0 {
                        cells.push(s2[i - 1][j]);
                    }
                    if i + 1 < rows {
                        cells.push(s2[i + 1][j]);
                    }
                    let k = cells.len() as f64;
                    if cells.len() < 2 {
                        return 0.0;
                    }
                    let mean = cells.iter().sum::<f64>() / k;
                    cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>().sqrt() / (k - 1.0)
                })
                .collect()
        })
        .collect()
}

/// Row-major argmin; ties go to the earlier cell.
pub fn mv_argmin(surface: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    let mut value = f64::INFINITY;
    for (i, row) in surface.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if *v < value {
                value = *v;
                best = (i, j);
            }
        }
    }
    best
}

/// Select `(m, tau)` by minimum volatility of the bootstrap variance.
///
/// Every cell is bootstrapped with the same multipliers.
#[allow(clippy::too_many_arguments)]
pub fn mv_select(
    sample: &RegressionSample,
    kind: ModelKind,
    b: f64,
    eta: f64,
    grid: &MvGrid,
    replicates: usize,
    seed: u64,
    trend_kernel: TrendKernel,
    correction: CovarianceCorrection,
) -> Result<MvSelection> {
    if grid.m.is_empty() || grid.tau.is_empty() {
        return Err(invalid("grid", "empty minimum-volatility grid"));
    }
    let m_hat = match kind {
        ModelKind::Covariate => Some(m_hat_grid(sample.x(), eta)?),
        ModelKind::Trend => None,
    };
    let boot_seed = derive_seed(seed, Stream::MinVolatility, 0);
    let cells: Vec<(usize, usize)> = (0..grid.m.len())
        .flat_map(|i| (0..grid.tau.len()).map(move |j| (i, j)))
        .collect();
    let variances: Vec<[f64; 4]> = cells
        .par_iter()
        .map(|&(i, j)| {
            let lrv = LrvEstimates::estimate_with(sample, kind, grid.m[i], grid.tau[j], eta, correction, m_hat.clone())?;
            let draws = bootstrap_draws(sample, kind, &lrv, b, replicates, boot_seed, trend_kernel)?;
            let mut out = [0.0; 4];
            for t in TestKind::ALL {
                let v: Vec<f64> = draws.iter().map(|s| s.get(t)).collect();
                out[t.index()] = sample_variance(&v);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let (rows, cols) = (grid.m.len(), grid.tau.len());
    let mut variance = Vec::with_capacity(4);
    let mut volatility = Vec::with_capacity(4);
    let mut selected = Vec::with_capacity(4);
    for t in TestKind::ALL {
        let s2: Vec<Vec<f64>> = (0..rows)
            .map(|i| (0..cols).map(|j| variances[i * cols + j][t.index()]).collect())
            .collect();
        let mv = mv_surface(&s2);
        selected.push(mv_argmin(&mv));
        variance.push(s2);
        volatility.push(mv);
    }
    Ok(MvSelection {
        grid: grid.clone(),
        variance,
        volatility,
        selected,
    })
}

/// Result of the `eta` rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSelection {
    pub eta: f64,
    /// `V(i)` per grid point; empty for the rule of thumb.
    pub criterion: Vec<f64>,
}

/// `eta = b` without a grid; otherwise the minimiser of the five-point
/// volatility of `M_eta(t)` maximised over `t`.
pub fn eta_select(sample: &RegressionSample, b: f64, grid: &[f64]) -> Result<EtaSelection> {
    if grid.is_empty() {
        return Ok(EtaSelection {
            eta: b,
            criterion: Vec::new(),
        });
    }
    let fits: Vec<Vec<DMatrix<f64>>> = grid.iter().map(|&e| m_hat_grid(sample.x(), e)).collect::<Result<_>>()?;
    let criterion = eta_criterion(&fits);
    let idx = mv_argmin(&[criterion.clone()]).1;
    Ok(EtaSelection {
        eta: grid[idx],
        criterion,
    })
}

/// `max_t sum_{r=-2..2} |M_{i+r}(t) - mean|^2` for each grid position `i`,
/// with the window truncated at the ends. `fits[i][t]` is `M_{eta_i}(t)`.
pub fn eta_criterion(fits: &[Vec<DMatrix<f64>>]) -> Vec<f64> {
    let len = fits.len();
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 2).min(len - 1);
            let k = (hi - lo + 1) as f64;
            (0..fits[i].len())
                .map(|t| {
                    let mean = (lo + 1..=hi).fold(fits[lo][t].clone(), |acc, r| acc + &fits[r][t]) / k;
                    (lo..=hi).map(|r| (&fits[r][t] - &mean).norm_squared()).sum::<f64>()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Rule-of-thumb parameter set: GCV `b`, pilot `m` and `tau`, `eta = b`.
pub fn rule_of_thumb(sample: &RegressionSample) -> Result<BandwidthSet> {
    let n = sample.n();
    let b = gcv_select_b(sample, &GcvOptions::default())?.b;
    BandwidthSet::new(n, b, pilot_m(n), pilot_tau(n), b, DEFAULT_MV_REPLICATES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_model, Model, SimulationSpec};

    #[test]
    fn bandwidth_set_invariants() {
        assert!(BandwidthSet::new(500, 0.15, 5, 0.3, 0.15, 100).is_ok());
        assert!(BandwidthSet::new(500, 0.15, 1, 0.3, 0.15, 100).is_err());
        assert!(BandwidthSet::new(500, 0.15, 200, 0.3, 0.15, 100).is_err());
        assert!(BandwidthSet::new(500, 0.15, 5, 0.49, 0.15, 100).is_err());
        assert!(BandwidthSet::new(500, 0.6, 5, 0.3, 0.15, 100).is_err());
    }

    #[test]
    fn default_grids_follow_rates() {
        let g = MvGrid::default_for(577);
        let base = 577f64.powf(2.0 / 7.0);
        assert_eq!(g.m[0], (5.0 / 7.0 * base).floor() as usize);
        assert_eq!(*g.m.last().unwrap(), (2.0 * base).floor() as usize);
        assert!((g.tau[1] - 577f64.powf(-1.0 / 6.0)).abs() < 1e-15);
        assert_eq!(g.tau.len(), 3);
        assert!(MvGrid::for_sample(577, Some(4), Some(0.3)).is_single());
    }

    #[test]
    fn small_samples_keep_only_feasible_tau() {
        for n in [60, 100, 150, 250] {
            let g = MvGrid::default_for(n);
            assert!(!g.tau.is_empty());
            let hi = *g.m.last().unwrap();
            for &t in &g.tau {
                assert!(BandwidthSet::new(n, 0.2, hi, t, 0.2, 100).is_ok(), "n={n} tau={t}");
            }
        }
        assert!(MvGrid::default_for(150).tau.len() < 3);
    }

    #[test]
    fn flat_surface_picks_first_cell() {
        let s2 = vec![vec![2.0; 3]; 4];
        let mv = mv_surface(&s2);
        assert!(mv.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(mv_argmin(&mv), (0, 0));
    }

    #[test]
    fn surface_uses_truncated_neighbourhoods() {
        let s2 = vec![vec![1.0, 2.0, 4.0], vec![3.0, 5.0, 9.0]];
        let mv = mv_surface(&s2);
        // corner (0,0): cells {1, 2, 3}
        let cells = [1.0, 2.0, 3.0];
        let mean = 2.0;
        let expect = cells.iter().map(|c: &f64| (c - mean).powi(2)).sum::<f64>().sqrt() / 2.0;
        assert!((mv[0][0] - expect).abs() < 1e-15);
        // (1,1): cells {5, 3, 9, 2}
        let cells = [5.0, 3.0, 9.0, 2.0];
        let mean = 19.0 / 4.0;
        let expect = cells.iter().map(|c: &f64| (c - mean).powi(2)).sum::<f64>().sqrt() / 3.0;
        assert!((mv[1][1] - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_response_falls_back_to_pilot() {
        let s = RegressionSample::trend(vec![1.0; 200]).unwrap();
        let sel = gcv_select_b(&s, &GcvOptions::default()).unwrap();
        assert!(sel.c_hat.is_none());
        assert!((sel.b - pilot_b(200)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_linear_trend_selects_upper_end() {
        let n = 300;
        let y = (0..n).map(|i| 1.0 + 2.0 * (i + 1) as f64 / n as f64).collect();
        let s = RegressionSample::trend(y).unwrap();
        let sel = gcv_select_b(&s, &GcvOptions::default()).unwrap();
        assert_eq!(sel.b, sel.upper);
    }

    #[test]
    fn gcv_lands_inside_its_range_and_recomputes() {
        let s = simulate_model(&SimulationSpec::new(Model::M1, 400, 0.0, 3)).unwrap();
        let sel = gcv_select_b(&s, &GcvOptions::default()).unwrap();
        let c = sel.c_hat.unwrap();
        assert!(sel.b >= sel.lower && sel.b <= sel.upper);
        assert!((sel.lower - (c * 400f64.powf(-0.25)).clamp(0.0, MAX_BANDWIDTH)).abs() < 1e-12);
        assert_eq!(sel.scores.len(), DEFAULT_GCV_POINTS);
        let best = sel.scores.iter().find(|(b, _)| *b == sel.b).unwrap().1;
        assert_eq!(gcv_score(&s, sel.b, Smoother::Jackknife).unwrap(), best);
        assert!(sel.scores.iter().all(|(_, v)| *v >= best));
    }

    #[test]
    fn eta_rule_of_thumb_and_grid() {
        let s = simulate_model(&SimulationSpec::new(Model::M0, 500, 0.0, 1)).unwrap();
        assert_eq!(eta_select(&s, 0.17, &[]).unwrap().eta, 0.17);
        let grid: Vec<f64> = (0..7).map(|k| 0.11 + 0.02 * k as f64).collect();
        let sel = eta_select(&s, 0.17, &grid).unwrap();
        assert!(sel.eta >= grid[0] && sel.eta <= grid[6]);
        assert!(sel.criterion.iter().all(|v| v.is_finite()));
        let same = vec![vec![DMatrix::from_element(2, 2, 1.5); 10]; 5];
        let crit = eta_criterion(&same);
        assert!(crit.iter().all(|v| *v == 0.0));
        assert_eq!(mv_argmin(&[crit]), (0, 0));
    }

    #[test]
    fn mv_is_deterministic_and_in_grid() {
        let s = simulate_model(&SimulationSpec::new(Model::M1, 300, 0.0, 2)).unwrap();
        let grid = MvGrid::default_for(300);
        let a = mv_select(&s, ModelKind::Covariate, 0.15, 0.15, &grid, 30, 5, TrendKernel::Plain, CovarianceCorrection::Residual).unwrap();
        let b = mv_select(&s, ModelKind::Covariate, 0.15, 0.15, &grid, 30, 5, TrendKernel::Plain, CovarianceCorrection::Residual).unwrap();
        assert_eq!(a, b);
        for t in TestKind::ALL {
            let (m, tau) = a.choice(t);
            assert!(grid.m.contains(&m) && grid.tau.contains(&tau));
        }
    }
}

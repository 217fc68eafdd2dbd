//! Difference-based long-run (co)variance estimation.
//!
//! All estimators share one shape: a per-lag term built from block
//! differences of width `m`, averaged over `j = m..=n-m` with kernel weights
//! `omega(t, j)` of bandwidth `tau`, and held flat outside `[m/n, 1 - m/n]`.

use crate::error::{invalid, LrdError, Result};
use crate::kernel::{eval_kstar_b, parabola_mass, ParabolaSums};
use crate::locreg::window;
use crate::sample::RegressionSample;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Condition number above which `M(t)` or `Omega(t)` is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;
/// Floor applied to the long-run variance before taking its root.
pub const SIGMA_FLOOR: f64 = 1e-12;

fn check_window(n: usize, m: usize, tau: f64) -> Result<()> {
    if m < 2 || 2 * m + 1 > n {
        return Err(invalid("m", format!("need 2 <= m <= (n - 1) / 2, got m = {m}, n = {n}")));
    }
    if !(tau > 0.0 && tau < 0.5) {
        return Err(invalid("tau", format!("need 0 < tau < 1/2, got {tau}")));
    }
    Ok(())
}

/// Kernel-average per-lag terms over `j = m..=n-m` at every grid point.
///
/// `terms` holds `q` values for each lag, lag `j` at offset `(j - m) q`
/// (one-based `j`). The result holds `q` values per grid point, with the
/// boundary values repeated outside `[m, n - m]`.
fn smooth_lags(terms: &[f64], q: usize, n: usize, m: usize, tau: f64) -> Result<Vec<f64>> {
    let lags = n - 2 * m + 1;
    debug_assert_eq!(terms.len(), lags * q);
    // Weights are 0.75 (1 - ((j - i) / (n tau))^2) on lags strictly inside the
    // band; the constant cancels in the normalization.
    let h = n as f64 * tau;
    let reach = h.floor() as usize;
    let sums = ParabolaSums::new(terms, q);
    let mut out = vec![0.0; n * q];
    for i in m..=n - m {
        let centre = i - m;
        let lo = centre.saturating_sub(reach);
        let hi = (centre + reach + 1).min(lags);
        let total = parabola_mass(lo, hi, centre as f64, h);
        if !(total > 0.0) {
            return Err(LrdError::EmptyWindow { t: i as f64 / n as f64 });
        }
        let cell = &mut out[(i - 1) * q..i * q];
        sums.add_window(lo, hi, centre as f64, h, 1.0 / total, cell);
    }
    let (first, last) = ((m - 1) * q, (n - m - 1) * q);
    for i in 0..m - 1 {
        out.copy_within(first..first + q, i * q);
    }
    for i in n - m..n {
        out.copy_within(last..last + q, i * q);
    }
    Ok(out)
}

/// Block differences `Delta_j = (Q_{j-m+1,m} - Q_{j+1,m}) / m` of a
/// `q`-dimensional series stored row-major, for `j = m..=n-m`.
fn block_differences(series: &[f64], q: usize, m: usize) -> Vec<f64> {
    let n = series.len() / q;
    let mut prefix = vec![0.0; (n + 1) * q];
    for i in 0..n {
        for a in 0..q {
            prefix[(i + 1) * q + a] = prefix[i * q + a] + series[i * q + a];
        }
    }
    let mut out = Vec::with_capacity((n - 2 * m + 1) * q);
    let mf = m as f64;
    for j in m..=n - m {
        for a in 0..q {
            // one-based Q_{j-m+1,m} covers zero-based j-m..j, Q_{j+1,m} covers j..j+m
            let left = prefix[j * q + a] - prefix[(j - m) * q + a];
            let right = prefix[(j + m) * q + a] - prefix[j * q + a];
            out.push((left - right) / mf);
        }
    }
    out
}

/// Outer-product terms `m Delta_j Delta_j' / 2` for each lag, flattened.
fn half_outer(deltas: &[f64], q: usize, m: usize) -> Vec<f64> {
    let mf = m as f64;
    deltas
        .chunks(q)
        .flat_map(|d| {
            let mut o = vec![0.0; q * q];
            for a in 0..q {
                for c in 0..q {
                    o[a * q + c] = mf * d[a] * d[c] / 2.0;
                }
            }
            o
        })
        .collect()
}

fn to_matrices(flat: &[f64], q: usize) -> Vec<DMatrix<f64>> {
    flat.chunks(q * q).map(|c| DMatrix::from_row_slice(q, q, c)).collect()
}

/// Difference-based local long-run variance of a scalar series at every `t_i`.
pub fn sigmah_diff(series: &[f64], m: usize, tau: f64) -> Result<Vec<f64>> {
    let n = series.len();
    check_window(n, m, tau)?;
    let deltas = block_differences(series, 1, m);
    smooth_lags(&half_outer(&deltas, 1, m), 1, n, m, tau)
}

/// `M(t) = (n eta)^{-1} sum_i x_i x_i' K*_eta(t_i - t*)` with `t*` clamped to `[eta, 1 - eta]`.
pub fn m_hat(x: &DMatrix<f64>, t: f64, eta: f64) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let p = x.ncols();
    if !(eta > 0.0 && eta < 0.5) {
        return Err(invalid("eta", format!("need 0 < eta < 1/2, got {eta}")));
    }
    let t_star = t.clamp(eta, 1.0 - eta);
    let mut out = DMatrix::zeros(p, p);
    for g in window(n, t_star, eta) {
        let w = eval_kstar_b((g + 1) as f64 / n as f64 - t_star, eta);
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = w * x[(g, a)];
            for c in 0..=a {
                out[(a, c)] += xa * x[(g, c)];
            }
        }
    }
    let scale = 1.0 / (n as f64 * eta);
    for a in 0..p {
        for c in 0..=a {
            out[(a, c)] *= scale;
            out[(c, a)] = out[(a, c)];
        }
    }
    Ok(out)
}

/// `M(t_i)` on the whole grid.
pub fn m_hat_grid(x: &DMatrix<f64>, eta: f64) -> Result<Vec<DMatrix<f64>>> {
    let n = x.nrows();
    if (n as f64) * eta * eta < 4.0 {
        log::warn!("n eta^2 = {:.2} is small; M(t) may be unstable", n as f64 * eta * eta);
    }
    (0..n).map(|i| m_hat(x, (i + 1) as f64 / n as f64, eta)).collect()
}

fn condition(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Invert a symmetric matrix, rejecting it when the condition number exceeds
/// [`MAX_CONDITION`].
pub(crate) fn checked_inverse(a: &DMatrix<f64>, what: &'static str, t: f64) -> Result<DMatrix<f64>> {
    if !(condition(a) <= MAX_CONDITION) {
        return Err(LrdError::SingularMatrix { what, t });
    }
    a.clone().try_inverse().ok_or(LrdError::SingularMatrix { what, t })
}

/// `x_i y_i` stored row-major.
fn xy_series(sample: &RegressionSample) -> Vec<f64> {
    let p = sample.p();
    let mut out = sample.rows_flat();
    for (i, y) in sample.y().iter().enumerate() {
        for v in &mut out[i * p..(i + 1) * p] {
            *v *= y;
        }
    }
    out
}

/// Uncorrected difference-based long-run covariance of `x_i y_i`.
pub fn sigma_acute(sample: &RegressionSample, m: usize, tau: f64) -> Result<Vec<DMatrix<f64>>> {
    let (n, p) = (sample.n(), sample.p());
    check_window(n, m, tau)?;
    let deltas = block_differences(&xy_series(sample), p, m);
    Ok(to_matrices(&smooth_lags(&half_outer(&deltas, p, m), p * p, n, m, tau)?, p))
}

/// `x_i x_i'` stored row-major as `p x p` blocks.
fn design_outer(sample: &RegressionSample) -> Vec<f64> {
    let (n, p) = (sample.n(), sample.p());
    let x = sample.rows_flat();
    let mut out = vec![0.0; n * p * p];
    for i in 0..n {
        let xi = &x[i * p..(i + 1) * p];
        for a in 0..p {
            for c in 0..p {
                out[i * p * p + a * p + c] = xi[a] * xi[c];
            }
        }
    }
    out
}

/// `Omega(t)` and `varpi(t)` on the grid, flattened (`p*p` and `p` per point).
fn omega_varpi(sample: &RegressionSample, m: usize, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, p) = (sample.n(), sample.p());
    let xx = design_outer(sample);
    let xy = xy_series(sample);
    let pp = p * p;
    let lags = n - 2 * m + 1;
    // Pair differences D_i = x_i x_i' - x_{i+m} x_{i+m}' and the matching xy differences.
    let pairs = n - m;
    let mut sq = vec![0.0; pairs * pp];
    let mut cross = vec![0.0; pairs * p];
    for i in 0..pairs {
        let d: Vec<f64> = (0..pp).map(|k| xx[i * pp + k] - xx[(i + m) * pp + k]).collect();
        let v: Vec<f64> = (0..p).map(|k| xy[i * p + k] - xy[(i + m) * p + k]).collect();
        for a in 0..p {
            for c in 0..p {
                sq[i * pp + a * p + c] = (0..p).map(|k| d[a * p + k] * d[k * p + c]).sum();
            }
            cross[i * p + a] = (0..p).map(|k| d[a * p + k] * v[k]).sum();
        }
    }
    let mf = m as f64;
    let mut sq_terms = vec![0.0; lags * pp];
    let mut cross_terms = vec![0.0; lags * p];
    for j in m..=n - m {
        // one-based i = j-m+1..=j, zero-based j-m..j
        let k = j - m;
        for i in j - m..j {
            for a in 0..pp {
                sq_terms[k * pp + a] += sq[i * pp + a];
            }
            for a in 0..p {
                cross_terms[k * p + a] += cross[i * p + a];
            }
        }
        for v in &mut sq_terms[k * pp..(k + 1) * pp] {
            *v /= 2.0 * mf;
        }
        for v in &mut cross_terms[k * p..(k + 1) * p] {
            *v /= 2.0 * mf;
        }
    }
    Ok((
        smooth_lags(&sq_terms, pp, n, m, tau)?,
        smooth_lags(&cross_terms, p, n, m, tau)?,
    ))
}

/// Difference-based coefficient estimate `Omega^{-1}(t) varpi(t)` on the grid.
pub fn breve_beta(sample: &RegressionSample, m: usize, tau: f64) -> Result<DMatrix<f64>> {
    let (n, p) = (sample.n(), sample.p());
    if p < 2 {
        return Err(invalid("p", "the difference-based coefficient estimate needs a non-intercept covariate"));
    }
    check_window(n, m, tau)?;
    let (omega, varpi) = omega_varpi(sample, m, tau)?;
    let mut beta = DMatrix::zeros(n, p);
    for i in 0..n {
        let t = (i + 1) as f64 / n as f64;
        let o = DMatrix::from_row_slice(p, p, &omega[i * p * p..(i + 1) * p * p]);
        let inv = checked_inverse(&o, "Omega", t)?;
        let b = inv * DVector::from_column_slice(&varpi[i * p..(i + 1) * p]);
        beta.row_mut(i).copy_from(&b.transpose());
    }
    Ok(beta)
}

/// Bias-corrected long-run covariance of `x_i e_i` on the grid, symmetrized.
pub fn sigma_hat(sample: &RegressionSample, m: usize, tau: f64) -> Result<Vec<DMatrix<f64>>> {
    let p = sample.p();
    let acute = sigma_acute(sample, m, tau)?;
    if p == 1 {
        return Ok(acute);
    }
    if sample.y().iter().all(|v| *v == 0.0) {
        log::warn!("response identically zero; skipping bias correction");
        return Ok(acute);
    }
    let beta = breve_beta(sample, m, tau)?;
    corrected(sample, acute, &beta, m, tau)
}

/// Difference-based long-run covariance of `x_i (y_i - x_i' beta_breve(t_i))`.
///
/// Removing the coefficient signal before differencing leaves an error that
/// is quadratic in the smoothing bias of `beta_breve`, where subtracting the
/// correction afterwards leaves one that is linear in it.
pub fn sigma_hat_residual(sample: &RegressionSample, m: usize, tau: f64) -> Result<Vec<DMatrix<f64>>> {
    let p = sample.p();
    if p == 1 || sample.y().iter().all(|v| *v == 0.0) {
        return sigma_acute(sample, m, tau);
    }
    let beta = breve_beta(sample, m, tau)?;
    let x = sample.x();
    let residuals = (0..sample.n())
        .map(|i| sample.y()[i] - (0..p).map(|c| x[(i, c)] * beta[(i, c)]).sum::<f64>())
        .collect();
    sigma_acute(&sample.with_response(residuals)?, m, tau)
}

/// How the coefficient signal is removed from the difference-based covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceCorrection {
    /// [`sigma_hat_residual`].
    #[default]
    Residual,
    /// [`sigma_hat`]: `Sigma_acute - Sigma_breve`.
    Subtracted,
}

impl CovarianceCorrection {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceCorrection::Residual => "residual",
            CovarianceCorrection::Subtracted => "subtracted",
        }
    }

    pub fn estimate(&self, sample: &RegressionSample, m: usize, tau: f64) -> Result<Vec<DMatrix<f64>>> {
        match self {
            CovarianceCorrection::Residual => sigma_hat_residual(sample, m, tau),
            CovarianceCorrection::Subtracted => sigma_hat(sample, m, tau),
        }
    }
}

impl std::str::FromStr for CovarianceCorrection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "residual" => Ok(CovarianceCorrection::Residual),
            "subtracted" => Ok(CovarianceCorrection::Subtracted),
            other => Err(format!("unknown covariance correction `{other}` (expected residual or subtracted)")),
        }
    }
}

/// `Sigma_acute` minus the correction built from an arbitrary coefficient path.
pub fn sigma_hat_with_coefficients(
    sample: &RegressionSample,
    beta: &DMatrix<f64>,
    m: usize,
    tau: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if beta.nrows() != sample.n() || beta.ncols() != sample.p() {
        return Err(invalid("beta", "coefficient path must be n x p"));
    }
    let acute = sigma_acute(sample, m, tau)?;
    corrected(sample, acute, beta, m, tau)
}

fn corrected(
    sample: &RegressionSample,
    acute: Vec<DMatrix<f64>>,
    beta: &DMatrix<f64>,
    m: usize,
    tau: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let (n, p) = (sample.n(), sample.p());
    let xx = design_outer(sample);
    let pp = p * p;
    // x_i x_i' beta(t_i)
    let mut fitted = vec![0.0; n * p];
    for i in 0..n {
        let blk = &xx[i * pp..(i + 1) * pp];
        for a in 0..p {
            fitted[i * p + a] = (0..p).map(|c| blk[a * p + c] * beta[(i, c)]).sum();
        }
    }
    let deltas = block_differences(&fitted, p, m);
    let breve = smooth_lags(&half_outer(&deltas, p, m), pp, n, m, tau)?;
    Ok(acute
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let s = a - DMatrix::from_row_slice(p, p, &breve[i * pp..(i + 1) * pp]);
            (&s + s.transpose()) / 2.0
        })
        .collect())
}

/// Symmetric PSD square root with negative eigenvalues clipped to zero.
/// Also returns the clipped mass `sum |lambda_-|`.
pub fn psd_sqrt_clipped(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LrdError::Eigen);
    }
    let sym = (a + a.transpose()) / 2.0;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or(LrdError::Eigen)?;
    let clipped: f64 = eig.eigenvalues.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok(((&root + root.transpose()) / 2.0, clipped))
}

pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    psd_sqrt_clipped(a).map(|r| r.0)
}

/// Lower-triangular `L` with `L L' = A+`, where `A+` is `a` with negative
/// eigenvalues clipped to zero. Rank-deficient pivots give zero columns.
/// Also returns the clipped mass.
pub fn psd_lower_factor(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (root, clipped) = psd_sqrt_clipped(a)?;
    let plus = &root * &root;
    let p = plus.nrows();
    let tol = f64::EPSILON * p as f64 * plus.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(p, p);
    for k in 0..p {
        let pivot = plus[(k, k)] - (0..k).map(|j| l[(k, j)] * l[(k, j)]).sum::<f64>();
        if pivot <= tol {
            continue;
        }
        let d = pivot.sqrt();
        l[(k, k)] = d;
        for i in k + 1..p {
            l[(i, k)] = (plus[(i, k)] - (0..k).map(|j| l[(i, j)] * l[(k, j)]).sum::<f64>()) / d;
        }
    }
    Ok((l, clipped))
}

/// Regression structure assumed by the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// `y_i = mu(t_i) + e_i`.
    Trend,
    /// `y_i = x_i' beta(t_i) + e_i` with stochastic covariates.
    #[default]
    Covariate,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Trend => "trend",
            ModelKind::Covariate => "covariate",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "trend" => Ok(ModelKind::Trend),
            "covariate" => Ok(ModelKind::Covariate),
            other => Err(format!("unknown model kind `{other}` (expected trend or covariate)")),
        }
    }
}

/// Gridwise inputs of the multiplier bootstrap.
#[derive(Debug, Clone)]
pub struct LrvEstimates {
    pub grid: Vec<f64>,
    /// Local long-run variance of the errors.
    pub sigma_h2: Vec<f64>,
    pub m_hat: Vec<DMatrix<f64>>,
    pub sigma_hat: Vec<DMatrix<f64>>,
    pub sigma_root: Vec<DMatrix<f64>>,
    /// Lower-triangular factors of the clipped `Sigma_hat`. Their leading
    /// entry is `sigma_H`, so the intercept coordinate of `L V` is
    /// `sigma_H V_1`; the bootstrap uses these rather than the symmetric roots.
    pub sigma_factor: Vec<DMatrix<f64>>,
    pub m: usize,
    pub tau: f64,
    pub eta: f64,
    /// Total negative eigenvalue mass removed by the PSD roots.
    pub clipped_mass: f64,
}

impl LrvEstimates {
    /// Estimate everything the bootstrap for `kind` needs.
    pub fn estimate(sample: &RegressionSample, kind: ModelKind, m: usize, tau: f64, eta: f64) -> Result<Self> {
        Self::estimate_with(sample, kind, m, tau, eta, CovarianceCorrection::default(), None)
    }

    /// As [`LrvEstimates::estimate`] with an explicit covariance correction,
    /// optionally reusing a precomputed `M(t)` grid for `eta`.
    pub fn estimate_with(
        sample: &RegressionSample,
        kind: ModelKind,
        m: usize,
        tau: f64,
        eta: f64,
        correction: CovarianceCorrection,
        m_hat: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let n = sample.n();
        let grid = sample.grid();
        match kind {
            ModelKind::Trend => {
                let s2 = sigmah_diff(sample.y(), m, tau)?;
                let sigma_hat: Vec<_> = s2.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect();
                let sigma_root: Vec<_> = s2.iter().map(|v| DMatrix::from_element(1, 1, v.max(0.0).sqrt())).collect();
                Ok(LrvEstimates {
                    grid,
                    sigma_h2: s2,
                    m_hat: vec![DMatrix::from_element(1, 1, 1.0); n],
                    sigma_hat,
                    sigma_factor: sigma_root.clone(),
                    sigma_root,
                    m,
                    tau,
                    eta,
                    clipped_mass: 0.0,
                })
            }
            ModelKind::Covariate => {
                let sigma_hat = correction.estimate(sample, m, tau)?;
                let m_hat = match m_hat {
                    Some(g) => g,
                    None => m_hat_grid(sample.x(), eta)?,
                };
                let mut clipped_mass = 0.0;
                let mut sigma_root = Vec::with_capacity(n);
                let mut sigma_factor = Vec::with_capacity(n);
                for s in &sigma_hat {
                    let (r, c) = psd_sqrt_clipped(s)?;
                    clipped_mass += c;
                    sigma_root.push(r);
                    sigma_factor.push(psd_lower_factor(s)?.0);
                }
                if clipped_mass > 0.0 {
                    log::debug!("PSD clipping removed eigenvalue mass {clipped_mass:.3e}");
                }
                let sigma_h2 = sigma_factor.iter().map(|l| (l[(0, 0)] * l[(0, 0)]).max(SIGMA_FLOOR)).collect();
                Ok(LrvEstimates {
                    grid,
                    sigma_h2,
                    m_hat,
                    sigma_hat,
                    sigma_root,
                    sigma_factor,
                    m,
                    tau,
                    eta,
                    clipped_mass,
                })
            }
        }
    }

    pub fn sigma_h(&self) -> Vec<f64> {
        self.sigma_h2.iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::sim::{simulate_paths, Model, SimulationSpec};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn fixture(n: usize, p: usize, seed: u64) -> RegressionSample {
        let mut rng = stream_rng(seed, Stream::Simulation, 11);
        let cov = DMatrix::from_fn(n, p - 1, |_, _| 1.0 + rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| (i as f64 / n as f64).sin() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        RegressionSample::new(y, &cov).unwrap()
    }

    /// Lag weights over `m..=n-m`, recomputed from scratch.
    fn naive_weights(n: usize, m: usize, tau: f64, i: usize) -> Vec<(usize, f64)> {
        let ti = i.clamp(m, n - m) as f64 / n as f64;
        let raw: Vec<(usize, f64)> = (m..=n - m)
            .map(|j| {
                let u = (j as f64 / n as f64 - ti) / tau;
                (j, if u.abs() <= 1.0 { 0.75 * (1.0 - u * u) } else { 0.0 })
            })
            .collect();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        raw.into_iter().map(|(j, w)| (j, w / total)).collect()
    }

    /// One-based `sum_{i=k}^{k+m-1} v_i` for a vector series.
    fn naive_q(v: &[Vec<f64>], k: usize, m: usize) -> Vec<f64> {
        let q = v[0].len();
        (0..q).map(|a| (k..k + m).map(|i| v[i - 1][a]).sum()).collect()
    }

    fn naive_diff_estimator(v: &[Vec<f64>], m: usize, tau: f64) -> Vec<DMatrix<f64>> {
        let n = v.len();
        let q = v[0].len();
        (1..=n)
            .map(|i| {
                let mut acc = DMatrix::zeros(q, q);
                for (j, w) in naive_weights(n, m, tau, i) {
                    let a = naive_q(v, j - m + 1, m);
                    let b = naive_q(v, j + 1, m);
                    let d = DVector::from_iterator(q, a.iter().zip(&b).map(|(x, y)| (x - y) / m as f64));
                    acc += &d * d.transpose() * (m as f64 / 2.0 * w);
                }
                acc
            })
            .collect()
    }

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        let scale = 1.0 + b.abs().max();
        (a - b).abs().max() <= tol * scale
    }

    #[test]
    fn constant_series_has_zero_variance() {
        let v = sigmah_diff(&[3.0; 100], 5, 0.2).unwrap();
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn linear_series_gives_deterministic_value() {
        let (n, m, c) = (400, 6, 2.0);
        let y: Vec<f64> = (1..=n).map(|i| c * i as f64 / n as f64).collect();
        let v = sigmah_diff(&y, m, 0.2).unwrap();
        let expect = m as f64 * (c * m as f64 / n as f64).powi(2) / 2.0;
        assert!(v.iter().all(|x| (x - expect).abs() < 1e-12));
    }

    #[test]
    fn flat_boundary_extension() {
        let s = fixture(80, 1, 2);
        let m = 5;
        let v = sigmah_diff(s.y(), m, 0.2).unwrap();
        for i in 0..m - 1 {
            assert_eq!(v[i], v[m - 1]);
        }
        for i in 80 - m..80 {
            assert_eq!(v[i], v[80 - m - 1]);
        }
    }

    #[test]
    fn rejects_bad_windows() {
        assert!(sigmah_diff(&[0.0; 20], 1, 0.2).is_err());
        assert!(sigmah_diff(&[0.0; 20], 10, 0.2).is_err());
        assert!(sigmah_diff(&[0.0; 20], 3, 0.6).is_err());
    }

    #[test]
    fn sigmah_matches_naive() {
        let s = fixture(60, 1, 3);
        let v = sigmah_diff(s.y(), 4, 0.25).unwrap();
        let series: Vec<Vec<f64>> = s.y().iter().map(|y| vec![*y]).collect();
        let o = naive_diff_estimator(&series, 4, 0.25);
        for i in 0..60 {
            assert!((v[i] - o[i][(0, 0)]).abs() <= 1e-12 * o[i][(0, 0)].abs().max(1.0));
        }
    }

    #[test]
    fn sigma_acute_matches_naive_and_reduces_for_trend() {
        let s = fixture(60, 3, 4);
        let (m, tau) = (4, 0.3);
        let a = sigma_acute(&s, m, tau).unwrap();
        let xy: Vec<Vec<f64>> = (0..60).map(|i| s.row(i).iter().map(|x| x * s.y()[i]).collect()).collect();
        let o = naive_diff_estimator(&xy, m, tau);
        for i in 0..60 {
            assert!(close(&a[i], &o[i], 1e-12));
        }
        let trend = s.as_trend();
        let at = sigma_acute(&trend, m, tau).unwrap();
        let h = sigmah_diff(s.y(), m, tau).unwrap();
        for i in 0..60 {
            assert_eq!(at[i][(0, 0)], h[i]);
        }
        let zero = s.with_response(vec![0.0; 60]).unwrap();
        assert!(sigma_acute(&zero, m, tau).unwrap().iter().all(|z| z.iter().all(|v| *v == 0.0)));
    }

    /// Naive assembly of Omega, varpi, beta and the bias term at one grid point.
    fn naive_corrected(s: &RegressionSample, m: usize, tau: f64) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let (n, p) = (s.n(), s.p());
        let x = |i: usize| DVector::from_vec(s.row(i - 1));
        let y = |i: usize| s.y()[i - 1];
        let dd = |i: usize| &x(i) * x(i).transpose() - &x(i + m) * x(i + m).transpose();
        let mut beta = DMatrix::zeros(n, p);
        for i in 1..=n {
            let mut om = DMatrix::zeros(p, p);
            let mut va = DVector::zeros(p);
            for (j, w) in naive_weights(n, m, tau, i) {
                for k in j - m + 1..=j {
                    let d = dd(k);
                    om += &d * &d * (w / (2.0 * m as f64));
                    va += &d * (x(k) * y(k) - x(k + m) * y(k + m)) * (w / (2.0 * m as f64));
                }
            }
            let b = om.lu().solve(&va).unwrap();
            beta.row_mut(i - 1).copy_from(&b.transpose());
        }
        let bt = |i: usize| DVector::from_iterator(p, beta.row(i - 1).iter().copied());
        let xy: Vec<Vec<f64>> = (1..=n).map(|i| (x(i) * y(i)).iter().copied().collect()).collect();
        let acute = naive_diff_estimator(&xy, m, tau);
        let sig = (1..=n)
            .map(|i| {
                let mut breve = DMatrix::zeros(p, p);
                for (j, w) in naive_weights(n, m, tau, i) {
                    let mut a = DVector::zeros(p);
                    for k in j - m + 1..=j {
                        a += (&x(k) * x(k).transpose() * bt(k) - &x(k + m) * x(k + m).transpose() * bt(k + m)) / m as f64;
                    }
                    breve += &a * a.transpose() * (m as f64 / 2.0 * w);
                }
                &acute[i - 1] - breve
            })
            .collect();
        (beta, sig)
    }

    #[test]
    fn corrected_estimator_matches_naive() {
        for seed in 0..3 {
            let s = fixture(60, 2, 20 + seed);
            let (m, tau) = (4, 0.3);
            let (ob, os) = naive_corrected(&s, m, tau);
            let b = breve_beta(&s, m, tau).unwrap();
            assert!(close(&b, &ob, 1e-10));
            let sh = sigma_hat(&s, m, tau).unwrap();
            for i in 0..60 {
                assert!(close(&sh[i], &os[i], 1e-10), "i = {i}");
                assert_eq!(sh[i], sh[i].transpose());
            }
        }
    }

    #[test]
    fn intercept_only_rejects_breve_beta() {
        let s = fixture(60, 1, 1);
        assert!(breve_beta(&s, 4, 0.3).is_err());
        let sh = sigma_hat(&s, 4, 0.3).unwrap();
        let h = sigmah_diff(s.y(), 4, 0.3).unwrap();
        for i in 0..60 {
            assert_eq!(sh[i][(0, 0)], h[i]);
        }
    }

    #[test]
    fn zero_response_gives_zero_covariance() {
        let s = fixture(60, 2, 1);
        let z = s.with_response(vec![0.0; 60]).unwrap();
        assert!(sigma_hat(&z, 4, 0.3).unwrap().iter().all(|m| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn m_hat_intercept_is_near_one() {
        let n = 2000;
        let x = DMatrix::from_element(n, 1, 1.0);
        let eta = 0.1;
        for &t in &[0.0, 0.3, 0.5, 0.9] {
            let v = m_hat(&x, t, eta).unwrap()[(0, 0)];
            assert!((v - 1.0).abs() < 2.0 / (n as f64 * eta) + eta, "t = {t}: {v}");
        }
        assert_eq!(m_hat(&x, 0.0, eta).unwrap(), m_hat(&x, eta, eta).unwrap());
        assert!(m_hat(&x, 0.5, 0.6).is_err());
    }

    #[test]
    fn m_hat_gaussian_covariate() {
        let (n, reps) = (2000, 100);
        let mut acc = DMatrix::zeros(2, 2);
        for r in 0..reps {
            let mut rng = stream_rng(r, Stream::Simulation, 5);
            let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) });
            acc += m_hat(&x, 0.5, 0.1).unwrap();
        }
        acc /= reps as f64;
        assert!((acc - DMatrix::<f64>::identity(2, 2)).abs().max() < 0.15);
    }

    #[test]
    fn psd_sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((psd_sqrt(&i).unwrap() - &i).abs().max() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = psd_sqrt(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).abs().max() < 1e-14);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (r, clipped) = psd_sqrt_clipped(&neg).unwrap();
        assert_eq!(clipped, 0.5);
        assert!((r[(1, 1)]).abs() < 1e-15);
    }

    #[test]
    fn psd_sqrt_reconstructs() {
        let mut rng = stream_rng(1, Stream::Simulation, 3);
        for _ in 0..100 {
            let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &g * g.transpose();
            let r = psd_sqrt(&a).unwrap();
            assert_eq!(r, r.transpose());
            assert!((&r * &r - &a).norm() <= 1e-8);
        }
    }

    #[test]
    fn lower_factor_matches_cholesky_and_clipping() {
        let mut rng = stream_rng(2, Stream::Simulation, 3);
        for _ in 0..50 {
            let g = DMatrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let a = &g * g.transpose() + DMatrix::identity(3, 3) * 0.1;
            let (l, clipped) = psd_lower_factor(&a).unwrap();
            assert_eq!(clipped, 0.0);
            assert!((&l - a.clone().cholesky().unwrap().l()).norm() < 1e-8);
            assert!((l[(0, 0)] - a[(0, 0)].sqrt()).abs() < 1e-10);
        }
        // rank one and indefinite inputs reconstruct the clipped matrix
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let rank_one = &v * v.transpose();
        let (l, _) = psd_lower_factor(&rank_one).unwrap();
        assert!((&l * l.transpose() - &rank_one).norm() < 1e-10);
        assert!((0..3).all(|i| (i + 1..3).all(|j| l[(i, j)] == 0.0)));
        let neg = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, -1.0]);
        let root = psd_sqrt(&neg).unwrap();
        let (l, clipped) = psd_lower_factor(&neg).unwrap();
        assert!(clipped > 0.0);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((&l * l.transpose() - &root * &root).norm() < 1e-10);
    }

    #[test]
    fn sigmah_unbiased_for_iid_noise() {
        let (n, reps, sigma2) = (2000, 200, 2.25);
        let m = (n as f64).powf(2.0 / 7.0).floor() as usize;
        let tau = (n as f64).powf(-1.0 / 6.0);
        let mut acc = 0.0;
        for r in 0..reps {
            let mut rng = stream_rng(r, Stream::Simulation, 77);
            let y: Vec<f64> = (0..n).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
            let v = sigmah_diff(&y, m, tau).unwrap();
            acc += v.iter().sum::<f64>() / n as f64;
        }
        let mean = acc / reps as f64;
        assert!((mean / sigma2 - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn residual_covariance_degenerate_inputs() {
        let s = fixture(80, 2, 4);
        let x = s.x().clone();
        let exact: Vec<f64> = (0..80).map(|i| 2.0 * x[(i, 0)] - 1.5 * x[(i, 1)]).collect();
        for m in sigma_hat_residual(&s.with_response(exact).unwrap(), 4, 0.3).unwrap() {
            assert!(m.abs().max() < 1e-10);
        }
        let zero = sigma_hat_residual(&s.with_response(vec![0.0; 80]).unwrap(), 4, 0.3).unwrap();
        assert!(zero.iter().all(|m| m.iter().all(|v| *v == 0.0)));
        let trend = s.as_trend();
        let direct = sigmah_diff(trend.y(), 4, 0.3).unwrap();
        let via = sigma_hat_residual(&trend, 4, 0.3).unwrap();
        assert!(direct.iter().zip(&via).all(|(a, b)| *a == b[(0, 0)]));
    }

    #[test]
    fn residual_covariance_tracks_error_oracle_closer() {
        // Oracle: the uncorrected estimator applied to x_i e_i with the true errors.
        let (n, m, tau, reps) = (500, 6, 0.355, 40);
        let (mut err_res, mut err_sub) = (0.0, 0.0);
        for r in 0..reps {
            let p = simulate_paths(&SimulationSpec::new(Model::M0, n, 0.0, 300 + r)).unwrap();
            let oracle = sigma_acute(&p.sample.with_response(p.errors.clone()).unwrap(), m, tau).unwrap();
            let res = sigma_hat_residual(&p.sample, m, tau).unwrap();
            let sub = sigma_hat(&p.sample, m, tau).unwrap();
            for i in (m..n - m).step_by(25) {
                err_res += (&res[i] - &oracle[i]).norm();
                err_sub += (&sub[i] - &oracle[i]).norm();
            }
        }
        assert!(err_res < 0.5 * err_sub, "residual {err_res}, subtracted {err_sub}");
    }

    #[test]
    fn breve_beta_recovers_constant_coefficients() {
        let n = 2000;
        let m = (n as f64).powf(2.0 / 7.0).floor() as usize;
        let tau = (n as f64).powf(-1.0 / 6.0);
        let reps = 20;
        let mut worst = 0.0f64;
        for r in 0..reps {
            let x = simulate_paths(&SimulationSpec::new(Model::M0, n, 0.0, r)).unwrap().sample;
            let y: Vec<f64> = (0..n).map(|i| 2.0 - 1.0 * x.x()[(i, 1)]).collect();
            let s = x.with_response(y).unwrap();
            let b = breve_beta(&s, m, tau).unwrap();
            let lo = (tau * n as f64) as usize;
            for i in lo..n - lo {
                worst = worst.max((b[(i, 0)] - 2.0).abs()).max((b[(i, 1)] + 1.0).abs());
            }
        }
        assert!(worst < 0.1, "{worst}");
    }
}

//! Local-linear estimation of time-varying coefficients with jackknife bias
//! correction.

use crate::error::{invalid, LrdError, Result};
use crate::kernel::eval_k;
use crate::sample::RegressionSample;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use std::f64::consts::SQRT_2;

/// Equilibrated condition number above which a local design is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Jackknife-corrected coefficients on the grid and the residuals they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    /// `n x p`, row `i` is the coefficient estimate at `t_i`.
    pub beta: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub bandwidth: f64,
}

impl CoefficientPath {
    pub fn fitted(&self, sample: &RegressionSample) -> Vec<f64> {
        sample.y().iter().zip(&self.residuals).map(|(y, e)| y - e).collect()
    }
}

/// Level and slope of the local-linear fit at every grid point.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub level: DMatrix<f64>,
    pub slope: DMatrix<f64>,
}

/// Grid indices covering `|t_j - t| <= b`, padded by one point on each side
/// against rounding; callers still evaluate the kernel.
pub(crate) fn window(n: usize, t: f64, b: f64) -> std::ops::Range<usize> {
    let nf = n as f64;
    // t_j = (j + 1) / n
    let lo = ((t - b) * nf - 2.0).floor().max(-1.0) as i64;
    let hi = ((t + b) * nf + 1.0).ceil().min(nf) as i64;
    let lo = lo.clamp(0, n as i64) as usize;
    let hi = hi.clamp(0, n as i64) as usize;
    lo..hi.max(lo)
}

fn check_bandwidth(b: f64) -> Result<()> {
    if b.is_finite() && b > 0.0 {
        Ok(())
    } else {
        Err(invalid("b", format!("bandwidth must be positive and finite, got {b}")))
    }
}

/// Local normal equations at `t`: the `2p x 2p` moment matrix of the stacked
/// regressor `(x, x (t_j - t) / b)` and its cross moment with `y`.
fn local_system(x: &[f64], y: &[f64], p: usize, t: f64, b: f64) -> (DMatrix<f64>, DVector<f64>, usize) {
    let n = y.len();
    let q = 2 * p;
    let mut s = DMatrix::<f64>::zeros(q, q);
    let mut r = DVector::<f64>::zeros(q);
    let mut z = vec![0.0; q];
    let mut used = 0;
    for j in window(n, t, b) {
        let u = ((j + 1) as f64 / n as f64 - t) / b;
        let w = eval_k(u);
        if w <= 0.0 {
            continue;
        }
        used += 1;
        let xj = &x[j * p..(j + 1) * p];
        for k in 0..p {
            z[k] = xj[k];
            z[p + k] = xj[k] * u;
        }
        for a in 0..q {
            let wa = w * z[a];
            r[a] += wa * y[j];
            for c in 0..=a {
                s[(a, c)] += wa * z[c];
            }
        }
    }
    for a in 0..q {
        for c in 0..a {
            s[(c, a)] = s[(a, c)];
        }
    }
    (s, r, used)
}

fn equilibrate(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d: Vec<f64> = s.diagonal().iter().map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 0.0 }).collect();
    if d.iter().any(|v| *v == 0.0) {
        return None;
    }
    Some(DMatrix::from_fn(s.nrows(), s.ncols(), |a, c| s[(a, c)] * d[a] * d[c]))
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Spectral condition number of `D^{-1/2} S D^{-1/2}` with `D = diag(S)`.
fn equilibrated_condition(s: &DMatrix<f64>) -> f64 {
    let Some(scaled) = equilibrate(s) else {
        return f64::INFINITY;
    };
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Factor a local moment matrix, rejecting ill-conditioned windows and adding a
/// small ridge if the factorization still fails. Well-conditioned systems are
/// screened by the 1-norm condition number of the equilibrated matrix, which
/// bounds the spectral one within a factor of the dimension.
fn factor(s: DMatrix<f64>, index: usize, t: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(scaled) = equilibrate(&s) {
        if let Some(chol) = Cholesky::new(scaled.clone()) {
            let cond = norm1(&scaled) * norm1(&chol.inverse());
            if cond <= MAX_CONDITION {
                if let Some(c) = Cholesky::new(s.clone()) {
                    return Ok(c);
                }
            }
        }
    }
    let cond = equilibrated_condition(&s);
    if !(cond <= MAX_CONDITION) {
        return Err(LrdError::SingularDesign { index, t, condition: cond });
    }
    let ridge = 1e-10 * s.trace();
    match Cholesky::new(s.clone()) {
        Some(c) => Ok(c),
        None => {
            log::warn!("local design at t = {t:.4} not positive definite, adding ridge {ridge:.3e}");
            let mut s = s;
            for a in 0..s.nrows() {
                s[(a, a)] += ridge;
            }
            Cholesky::new(s).ok_or(LrdError::SingularDesign { index, t, condition: cond })
        }
    }
}

/// One sweep of local-linear fits: level, slope and the smoother trace.
fn local_sweep(sample: &RegressionSample, b: f64) -> Result<(LocalFit, f64)> {
    check_bandwidth(b)?;
    let (n, p) = (sample.n(), sample.p());
    let x = sample.rows_flat();
    let y = sample.y();
    let k0 = eval_k(0.0);
    let mut level = DMatrix::zeros(n, p);
    let mut slope = DMatrix::zeros(n, p);
    let mut tr = 0.0;
    let mut e = DVector::zeros(2 * p);
    for i in 0..n {
        let t = sample.t(i);
        let (s, r, used) = local_system(&x, y, p, t, b);
        if used == 0 {
            return Err(LrdError::EmptyWindow { t });
        }
        if used < 2 * p {
            return Err(LrdError::SingularDesign {
                index: i + 1,
                t,
                condition: f64::INFINITY,
            });
        }
        let chol = factor(s, i + 1, t)?;
        let eta = chol.solve(&r);
        for k in 0..p {
            level[(i, k)] = eta[k];
            slope[(i, k)] = eta[p + k] / b;
            e[k] = x[i * p + k];
        }
        // The row of L at i is x_i' [I 0] S^{-1} (w_j z_j); at j = i the slope
        // block of z_i vanishes.
        let v = chol.solve(&e);
        tr += k0 * (0..p).map(|k| e[k] * v[k]).sum::<f64>();
    }
    Ok((LocalFit { level, slope }, tr))
}

/// Local-linear level and slope estimates at every grid point.
pub fn local_linear_path(sample: &RegressionSample, b: f64) -> Result<LocalFit> {
    local_sweep(sample, b).map(|(fit, _)| fit)
}

/// `n x p` local-linear coefficient estimates at bandwidth `b`.
pub fn local_linear_fit(sample: &RegressionSample, b: f64) -> Result<DMatrix<f64>> {
    local_linear_path(sample, b).map(|f| f.level)
}

fn residuals(sample: &RegressionSample, beta: &DMatrix<f64>) -> Vec<f64> {
    (0..sample.n())
        .map(|i| {
            let fit: f64 = (0..sample.p()).map(|k| sample.x()[(i, k)] * beta[(i, k)]).sum();
            sample.y()[i] - fit
        })
        .collect()
}

/// `2 beta_{b/sqrt 2} - beta_b` and its residuals.
pub fn jackknife_fit(sample: &RegressionSample, b: f64) -> Result<CoefficientPath> {
    let half = local_linear_fit(sample, b / SQRT_2)?;
    let full = local_linear_fit(sample, b)?;
    let beta = half * 2.0 - full;
    let residuals = residuals(sample, &beta);
    Ok(CoefficientPath {
        beta,
        residuals,
        bandwidth: b,
    })
}

/// Which linear smoother a trace or GCV score refers to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Smoother {
    /// `2 L_{b/sqrt 2} - L_b`, the smoother that produces the residuals.
    #[default]
    Jackknife,
    /// The plain local-linear smoother `L_b`.
    LocalLinear,
}

/// Trace of the smoother matrix mapping `y` to fitted values.
pub fn smoother_trace(sample: &RegressionSample, b: f64, smoother: Smoother) -> Result<f64> {
    smoothed(sample, b, smoother).map(|(_, tr)| tr)
}

/// Residuals of `smoother` at bandwidth `b` together with its trace.
pub fn smoothed(sample: &RegressionSample, b: f64, smoother: Smoother) -> Result<(Vec<f64>, f64)> {
    match smoother {
        Smoother::Jackknife => {
            let (half, tr_half) = local_sweep(sample, b / SQRT_2)?;
            let (full, tr_full) = local_sweep(sample, b)?;
            let beta = half.level * 2.0 - full.level;
            Ok((residuals(sample, &beta), 2.0 * tr_half - tr_full))
        }
        Smoother::LocalLinear => {
            let (fit, tr) = local_sweep(sample, b)?;
            Ok((residuals(sample, &fit.level), tr))
        }
    }
}

//! Kernel evaluations and kernel-derived constants.
//!
//! Every smoother in the crate uses the Epanechnikov kernel
//! `K(x) = 0.75 (1 - x^2)_+`. With `K_b(u) = K(u / b)` the jackknife
//! equivalent kernel at bandwidth `b` is
//!
//! ```text
//! K*_b(u) = 2 sqrt(2) K(sqrt(2) u / b) - K(u / b)
//! ```
//!
//! which integrates to `b` (density-normalized shape `2 sqrt(2) K(sqrt(2) x) - K(x)`),
//! so `(n b)^{-1} sum_i K*_b(t_i - t)` is a Riemann sum tending to one.

use crate::error::{LrdError, Result};
use std::f64::consts::SQRT_2;

/// Kernel family. Only Epanechnikov is used by the estimators; custom kernels
/// can be evaluated and validated here but must be supported on `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
    /// Symmetric, bounded kernel; values outside `[-1, 1]` are forced to zero.
    Custom(fn(f64) -> f64),
}

impl Kernel {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => eval_k(x),
            Kernel::Custom(f) => {
                if x.abs() > 1.0 {
                    0.0
                } else {
                    f(x)
                }
            }
        }
    }

    /// Jackknife equivalent kernel `2 sqrt(2) K(sqrt(2) x) - K(x)`.
    #[inline]
    pub fn eval_star(&self, x: f64) -> f64 {
        2.0 * SQRT_2 * self.eval(SQRT_2 * x) - self.eval(x)
    }

    /// Check symmetry on a grid and unit mass by quadrature.
    pub fn validate(&self) -> Result<()> {
        for k in 0..=200 {
            let x = k as f64 / 200.0;
            let (a, b) = (self.eval(x), self.eval(-x));
            if !a.is_finite() || (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(crate::error::invalid("kernel", format!("not symmetric at x = {x}")));
            }
        }
        let (mass, _) = gauss_kronrod(|x| self.eval(x), -1.0, 1.0, 1e-12)?;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(crate::error::invalid("kernel", format!("integrates to {mass}, not 1")));
        }
        Ok(())
    }
}

/// Prefix sums of `v_k`, `k v_k` and `k^2 v_k` over `q`-dimensional rows,
/// giving Epanechnikov-weighted window sums in constant time per window.
pub(crate) struct ParabolaSums {
    q: usize,
    /// `(sum v, sum k v, sum k^2 v)` over rows before each index, per coordinate.
    sums: Vec<[f64; 3]>,
}

impl ParabolaSums {
    pub(crate) fn new(rows: &[f64], q: usize) -> Self {
        let len = rows.len() / q;
        let mut sums = vec![[0.0; 3]; (len + 1) * q];
        for k in 0..len {
            let kf = k as f64;
            for a in 0..q {
                let v = rows[k * q + a];
                let [s0, s1, s2] = sums[k * q + a];
                sums[(k + 1) * q + a] = [s0 + v, s1 + kf * v, s2 + kf * kf * v];
            }
        }
        ParabolaSums { q, sums }
    }

    /// Adds `scale * sum_{k in [lo, hi)} (1 - (k - center)^2 / h^2) v_k` to `out`.
    #[inline]
    pub(crate) fn add_window(&self, lo: usize, hi: usize, center: f64, h: f64, scale: f64, out: &mut [f64]) {
        let q = self.q;
        let inv_h2 = 1.0 / (h * h);
        for (a, o) in out.iter_mut().enumerate() {
            let (top, bottom) = (self.sums[hi * q + a], self.sums[lo * q + a]);
            let (s0, s1, s2) = (top[0] - bottom[0], top[1] - bottom[1], top[2] - bottom[2]);
            *o += scale * (s0 - (s2 - 2.0 * center * s1 + center * center * s0) * inv_h2);
        }
    }
}

/// `sum_{k in [lo, hi)} (1 - (k - center)^2 / h^2)` in closed form.
pub(crate) fn parabola_mass(lo: usize, hi: usize, center: f64, h: f64) -> f64 {
    let cum = |k: f64| [k, k * (k - 1.0) / 2.0, (k - 1.0) * k * (2.0 * k - 1.0) / 6.0];
    let (a, b) = (cum(lo as f64), cum(hi as f64));
    let [s0, s1, s2] = [0, 1, 2].map(|d| b[d] - a[d]);
    s0 - (s2 - 2.0 * center * s1 + center * center * s0) / (h * h)
}

/// Epanechnikov kernel.
#[inline]
pub fn eval_k(x: f64) -> f64 {
    let v = 1.0 - x * x;
    if v > 0.0 {
        0.75 * v
    } else {
        0.0
    }
}

/// Bandwidth-scaled kernel `K(u / b)`.
#[inline]
pub fn eval_k_b(u: f64, b: f64) -> f64 {
    eval_k(u / b)
}

/// Jackknife equivalent kernel at bandwidth `b`, `2 sqrt(2) K(sqrt(2) u / b) - K(u / b)`.
/// Supported on `|u| <= b`.
#[inline]
pub fn eval_kstar_b(u: f64, b: f64) -> f64 {
    let x = u / b;
    2.0 * SQRT_2 * eval_k(SQRT_2 * x) - eval_k(x)
}

/// `x^d` for `x > 0`, zero otherwise (so `0^0 = 0` on the boundary).
#[inline]
fn pos_pow(x: f64, d: f64) -> f64 {
    if x > 0.0 {
        x.powf(d)
    } else {
        0.0
    }
}

/// Integrand of `kappa2` in a form that avoids cancellation for large `t`.
fn kappa2_integrand(t: f64, d: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t <= 2.0 {
        let a = pos_pow(t, d);
        let lag = pos_pow(t - 1.0, d);
        return (a - lag) * (2.0 * a - lag - pos_pow(t + 1.0, d));
    }
    // t^d - (t-1)^d = -t^d expm1(d ln(1 - 1/t)), and similarly for the second factor.
    let td = t.powf(d);
    let lo = (d * (-1.0 / t).ln_1p()).exp_m1();
    let hi = (d * (1.0 / t).ln_1p()).exp_m1();
    (-td * lo) * (-td * (lo + hi))
}

/// Cutoff beyond which the integrand is replaced by its leading-order tail
/// `d^2 (1 - d) t^{2d - 3}`.
pub const KAPPA2_CUTOFF: f64 = 1e6;

/// `kappa_2(d) = Gamma(d+1)^{-2} int_0^inf (t^d - (t-1)_+^d)(2 t^d - (t-1)_+^d - (t+1)^d) dt`.
pub fn kappa2(d: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&d) {
        return Err(LrdError::MemoryDomain(d));
    }
    let tol = 2.5e-10;
    let (a, _) = gauss_kronrod(|t| kappa2_integrand(t, d), 0.0, 1.0, tol)?;
    let (b, _) = gauss_kronrod(|t| kappa2_integrand(t, d), 1.0, 2.0, tol)?;
    let (c, _) = gauss_kronrod(
        |s| {
            let t = s.exp();
            kappa2_integrand(t, d) * t
        },
        2f64.ln(),
        KAPPA2_CUTOFF.ln(),
        tol,
    )?;
    let tail = 0.5 * d * d * KAPPA2_CUTOFF.powf(2.0 * d - 2.0);
    let g = statrs::function::gamma::gamma(d + 1.0);
    Ok((a + b + c + tail) / (g * g))
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature with global error control.
/// Returns the estimate and the summed error bound.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<(f64, f64)> {
    const MAX_INTERVALS: usize = 4000;
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let (total, err): (f64, f64) = pieces
            .iter()
            .fold((0.0, 0.0), |(s, r), p| (s + p.2, r + p.3));
        if err <= abs_tol {
            return Ok((total, err));
        }
        if pieces.len() >= MAX_INTERVALS || !total.is_finite() {
            return Err(LrdError::Quadrature {
                estimate: total,
                achieved: err,
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

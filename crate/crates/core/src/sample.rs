use crate::error::{invalid, Result};
use nalgebra::DMatrix;

/// Observed regression data `(y_i, x_i)` on the grid `t_i = i / n`, `i = 1..n`.
///
/// The first column of `x` is the intercept and is always all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    y: Vec<f64>,
    x: DMatrix<f64>,
}

impl RegressionSample {
    /// Build a sample from the response and the non-intercept covariates
    /// (`n x (p - 1)`, possibly zero columns). The intercept is prepended.
    pub fn new(y: Vec<f64>, covariates: &DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if covariates.nrows() != n {
            return Err(invalid(
                "covariates",
                format!("{} rows for {} responses", covariates.nrows(), n),
            ));
        }
        let p = covariates.ncols() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { covariates[(i, j - 1)] });
        Self::from_design(y, x)
    }

    /// Intercept-only (trend model) sample.
    pub fn trend(y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::from_design(y, DMatrix::from_element(n, 1, 1.0))
    }

    /// Build from a full design whose first column must be the intercept.
    pub fn from_design(y: Vec<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n < 8 {
            return Err(invalid("n", format!("need at least 8 observations, got {n}")));
        }
        if x.nrows() != n || x.ncols() == 0 {
            return Err(invalid("x", format!("design is {}x{}, expected {n}xp", x.nrows(), x.ncols())));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(invalid("x", "first design column must be the intercept"));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(invalid("y", format!("non-finite response at row {}", i + 1)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x", "non-finite covariate"));
        }
        Ok(Self { y, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Grid point `t_i = i / n` for the zero-based row `i`.
    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.n() as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.t(i)).collect()
    }

    /// Row `i` of the design as a contiguous vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Design stored row-major, `n * p` entries.
    pub fn rows_flat(&self) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                out.push(self.x[(i, j)]);
            }
        }
        out
    }

    /// Same design, different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::from_design(y, self.x.clone())
    }

    /// Intercept-only sample carrying the same response.
    pub fn as_trend(&self) -> Self {
        Self {
            y: self.y.clone(),
            x: DMatrix::from_element(self.n(), 1, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_is_prepended() {
        let cov = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let s = RegressionSample::new(vec![0.0; 10], &cov).unwrap();
        assert_eq!(s.p(), 2);
        assert_eq!(s.row(3), vec![1.0, 3.0]);
        assert_eq!(s.t(9), 1.0);
    }

    #[test]
    fn rejects_short_and_nonfinite() {
        assert!(RegressionSample::trend(vec![0.0; 7]).is_err());
        let mut y = vec![0.0; 9];
        y[4] = f64::NAN;
        assert!(RegressionSample::trend(y).is_err());
        let x = DMatrix::from_element(9, 1, 2.0);
        assert!(RegressionSample::from_design(vec![0.0; 9], x).is_err());
    }
}

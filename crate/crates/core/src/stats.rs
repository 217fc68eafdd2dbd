//! Partial-sum statistics over the trimmed residual range.

use crate::error::{LrdError, Result};

/// The four tests of short against long memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TestKind {
    Kpss,
    Rs,
    Vs,
    Ks,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [TestKind::Kpss, TestKind::Rs, TestKind::Vs, TestKind::Ks];

    pub fn name(&self) -> &'static str {
        match self {
            TestKind::Kpss => "KPSS",
            TestKind::Rs => "R/S",
            TestKind::Vs => "V/S",
            TestKind::Ks => "K/S",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl std::str::FromStr for TestKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('/', "").as_str() {
            "kpss" => Ok(TestKind::Kpss),
            "rs" => Ok(TestKind::Rs),
            "vs" => Ok(TestKind::Vs),
            "ks" => Ok(TestKind::Ks),
            other => Err(format!("unknown test `{other}` (expected kpss, rs, vs or ks)")),
        }
    }
}

impl std::fmt::Display for TestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trimming bounds for bandwidth `b`: zero-based `lower..=upper`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trim {
    pub n: usize,
    /// `floor(n b)`.
    pub cut: usize,
}

impl Trim {
    pub fn new(n: usize, b: f64) -> Result<Self> {
        let cut = (n as f64 * b).floor().max(0.0) as usize;
        if n < 2 * cut + 2 {
            return Err(LrdError::EmptyTrimmedRange { n, trim: cut });
        }
        Ok(Trim { n, cut })
    }

    /// Zero-based first index `floor(n b)`.
    pub fn lower(&self) -> usize {
        self.cut
    }

    /// Zero-based last index `n - floor(n b) - 1`.
    pub fn upper(&self) -> usize {
        self.n - self.cut - 1
    }

    /// `n - 2 floor(n b)`.
    pub fn len(&self) -> usize {
        self.n - 2 * self.cut
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.lower()..=self.upper()
    }
}

/// Running sums `S_r` of the residuals over the trimmed range.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedCumsum {
    pub trim: Trim,
    pub sums: Vec<f64>,
}

impl TrimmedCumsum {
    pub fn new(residuals: &[f64], b: f64) -> Result<Self> {
        let trim = Trim::new(residuals.len(), b)?;
        let sums = residuals[trim.range()]
            .iter()
            .scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            })
            .collect();
        Ok(TrimmedCumsum { trim, sums })
    }

    pub fn statistics(&self) -> Statistics {
        Statistics::from_partial_sums(&self.sums, self.trim.n)
    }
}

/// All four statistics from one partial-sum path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Statistics {
    pub kpss: f64,
    pub rs: f64,
    pub vs: f64,
    pub ks: f64,
}

impl Statistics {
    /// Functionals of `S_l..S_u` with normalisation `n (n - 2 floor(n b))`.
    pub fn from_partial_sums(sums: &[f64], n: usize) -> Self {
        let len = sums.len() as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        let (mut max, mut min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &s in sums {
            s1 += s;
            s2 += s * s;
            max = max.max(s);
            min = min.min(s);
        }
        let norm = n as f64 * len;
        Statistics {
            kpss: s2 / norm,
            rs: max - min,
            vs: (s2 - s1 * s1 / len).max(0.0) / norm,
            ks: max.abs().max(min.abs()),
        }
    }

    pub fn get(&self, kind: TestKind) -> f64 {
        match kind {
            TestKind::Kpss => self.kpss,
            TestKind::Rs => self.rs,
            TestKind::Vs => self.vs,
            TestKind::Ks => self.ks,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.kpss, self.rs, self.vs, self.ks]
    }
}

pub fn kpss_stat(residuals: &[f64], b: f64) -> Result<f64> {
    Ok(TrimmedCumsum::new(residuals, b)?.statistics().kpss)
}

pub fn rs_stat(residuals: &[f64], b: f64) -> Result<f64> {
    Ok(TrimmedCumsum::new(residuals, b)?.statistics().rs)
}

pub fn vs_stat(residuals: &[f64], b: f64) -> Result<f64> {
    Ok(TrimmedCumsum::new(residuals, b)?.statistics().vs)
}

pub fn ks_stat(residuals: &[f64], b: f64) -> Result<f64> {
    Ok(TrimmedCumsum::new(residuals, b)?.statistics().ks)
}

/// All four statistics of `residuals` at trimming bandwidth `b`.
pub fn all_stats(residuals: &[f64], b: f64) -> Result<Statistics> {
    Ok(TrimmedCumsum::new(residuals, b)?.statistics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Simulation, 7);
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    /// Each `S_k` re-summed from scratch.
    fn naive_sums(e: &[f64], b: f64) -> (Vec<f64>, usize) {
        let n = e.len();
        let c = (n as f64 * b).floor() as usize;
        let sums = (c..n - c).map(|k| (c..=k).map(|i| e[i]).sum()).collect();
        (sums, n)
    }

    #[test]
    fn trimmed_bounds() {
        let t = Trim::new(100, 0.155).unwrap();
        assert_eq!((t.lower(), t.upper(), t.len()), (15, 84, 70));
        let c = TrimmedCumsum::new(&random(100, 1), 0.155).unwrap();
        assert_eq!(c.sums.len(), 70);
        assert!(matches!(Trim::new(10, 0.5), Err(LrdError::EmptyTrimmedRange { .. })));
        assert_eq!(Trim::new(10, 0.45).unwrap().len(), 2);
    }

    #[test]
    fn zero_residuals_give_zero() {
        let s = all_stats(&[0.0; 30], 0.1).unwrap();
        assert_eq!(s.as_array(), [0.0; 4]);
    }

    #[test]
    fn unit_first_residual() {
        let mut e = vec![0.0; 40];
        e[0] = 1.0;
        let s = all_stats(&e, 0.0).unwrap();
        assert!((s.kpss - 1.0 / 40.0).abs() < 1e-15);
        assert_eq!(s.vs, 0.0);
    }

    #[test]
    fn alternating_range_is_one() {
        let e: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(rs_stat(&e, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn single_negative_residual() {
        let mut e = vec![0.0; 50];
        let t = Trim::new(50, 0.1).unwrap();
        e[t.lower()] = -2.0;
        assert_eq!(ks_stat(&e, 0.1).unwrap(), 2.0);
    }

    #[test]
    fn statistics_match_resummation() {
        for seed in 0..10 {
            let e = random(50, seed);
            let b = 0.12;
            let (sums, n) = naive_sums(&e, b);
            let len = sums.len() as f64;
            let t = sums.iter().map(|s| s * s).sum::<f64>() / (n as f64 * len);
            let mean = sums.iter().sum::<f64>() / len;
            let v = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n as f64 * len);
            let max = sums.iter().cloned().fold(f64::MIN, f64::max);
            let min = sums.iter().cloned().fold(f64::MAX, f64::min);
            let g = sums.iter().map(|s| s.abs()).fold(0.0, f64::max);
            let s = all_stats(&e, b).unwrap();
            assert!((s.kpss - t).abs() <= 1e-12 * t);
            assert!((s.vs - v).abs() <= 1e-12 * v);
            assert_eq!(s.rs, max - min);
            assert_eq!(s.ks, g);
            assert_eq!(kpss_stat(&e, b).unwrap(), s.kpss);
            assert_eq!(vs_stat(&e, b).unwrap(), s.vs);
        }
    }

    #[test]
    fn constant_partial_sums_have_zero_variance() {
        let s = Statistics::from_partial_sums(&[3.0; 20], 30);
        assert_eq!(s.vs, 0.0);
    }

    #[test]
    fn parse_names() {
        assert_eq!("R/S".parse::<TestKind>().unwrap(), TestKind::Rs);
        assert_eq!("kpss".parse::<TestKind>().unwrap(), TestKind::Kpss);
        assert!("adf".parse::<TestKind>().is_err());
    }

    proptest! {
        #[test]
        fn inequalities_and_scaling(seed in 0u64..10_000, c in 0.01f64..100.0, b in 0.0f64..0.3) {
            let e = random(64, seed);
            let s = all_stats(&e, b).unwrap();
            prop_assert!(s.vs <= s.kpss * (1.0 + 1e-12));
            // the path starts at S_l rather than 0, so K/S is bounded by R/S plus |S_l|
            let first = TrimmedCumsum::new(&e, b).unwrap().sums[0].abs();
            prop_assert!(s.ks <= (s.rs + first) * (1.0 + 1e-12));
            prop_assert!(s.rs <= 2.0 * s.ks * (1.0 + 1e-12));
            let neg: Vec<f64> = e.iter().map(|v| -v).collect();
            let sn = all_stats(&neg, b).unwrap();
            prop_assert_eq!(sn.kpss, s.kpss);
            prop_assert_eq!(sn.rs, s.rs);
            prop_assert_eq!(sn.ks, s.ks);
            prop_assert!((sn.vs - s.vs).abs() <= 1e-15 * s.vs.max(1e-300));
            let scaled: Vec<f64> = e.iter().map(|v| c * v).collect();
            let sc = all_stats(&scaled, b).unwrap();
            prop_assert!((sc.kpss - c * c * s.kpss).abs() <= 1e-12 * c * c * s.kpss);
            prop_assert!((sc.vs - c * c * s.vs).abs() <= 1e-12 * c * c * s.vs.max(1e-300));
            prop_assert!((sc.rs - c * s.rs).abs() <= 1e-12 * c * s.rs);
            prop_assert!((sc.ks - c * s.ks).abs() <= 1e-12 * c * s.ks);
        }
    }
}

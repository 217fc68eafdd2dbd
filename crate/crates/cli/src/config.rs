//! Run settings merged from command-line flags, an optional JSON file and
//! automatic defaults, in that order of precedence.

use crate::error::{CliError, CliResult};
use lrd_core::stats::Trim;
use lrd_core::{ModelKind, TestKind};
use serde::de::{self, Deserializer};
use serde::Deserialize;
use std::path::Path;
use std::str::FromStr;

/// A smoothing parameter that is either fixed or left to automatic selection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Setting<T> {
    #[default]
    Auto,
    Fixed(T),
}

impl<T: Copy> Setting<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            Setting::Auto => None,
            Setting::Fixed(v) => Some(*v),
        }
    }
}

impl<T: FromStr> FromStr for Setting<T> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Setting::Auto);
        }
        s.parse().map(Setting::Fixed).map_err(|_| format!("expected `auto` or a number, got `{s}`"))
    }
}

impl<'de, T: FromStr + Deserialize<'de>> Deserialize<'de> for Setting<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw<T> {
            Value(T),
            Text(String),
        }
        match Raw::<T>::deserialize(d)? {
            Raw::Value(v) => Ok(Setting::Fixed(v)),
            Raw::Text(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<String>,
    pub tests: Option<Vec<String>>,
    pub replicates: Option<usize>,
    pub mv_replicates: Option<usize>,
    pub seed: Option<u64>,
    pub b: Option<Setting<f64>>,
    pub m: Option<Setting<usize>>,
    pub tau: Option<Setting<f64>>,
    pub eta: Option<Setting<f64>>,
    pub alpha: Option<f64>,
    pub format: Option<String>,
    pub threads: Option<usize>,
    pub trend_kernel: Option<String>,
    pub covariance: Option<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// `flag`, else `file`, else `fallback`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, fallback: T) -> T {
    flag.or(file).unwrap_or(fallback)
}

pub fn parse_model_kind(s: &str) -> CliResult<ModelKind> {
    s.parse().map_err(CliError::Config)
}

/// Comma-separated list of tests, or `all`.
pub fn parse_tests(items: &[String]) -> CliResult<Vec<TestKind>> {
    let mut out = Vec::new();
    for item in items.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        if item.eq_ignore_ascii_case("all") {
            out.extend(TestKind::ALL);
            continue;
        }
        let t: TestKind = item.parse().map_err(CliError::Config)?;
        out.push(t);
    }
    let mut seen = Vec::new();
    out.retain(|t| {
        let fresh = !seen.contains(t);
        seen.push(*t);
        fresh
    });
    if out.is_empty() {
        return Err(CliError::Config("no tests selected".into()));
    }
    Ok(out)
}

/// Fixed smoothing parameters, validated before any computation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Overrides {
    pub b: Setting<f64>,
    pub m: Setting<usize>,
    pub tau: Setting<f64>,
    pub eta: Setting<f64>,
}

impl Overrides {
    pub fn validate(&self, n: usize) -> CliResult<()> {
        let bad = |what: &str, msg: String| Err(CliError::Config(format!("{what}: {msg}")));
        if let Some(b) = self.b.value() {
            if !(b > 0.0 && b < 0.5) {
                return bad("b", format!("need 0 < b < 1/2, got {b}"));
            }
            Trim::new(n, b).map_err(CliError::from)?;
        }
        if let Some(m) = self.m.value() {
            if m < 2 || 4 * m > n {
                return bad("m", format!("need 2 <= m <= n/4 = {}, got {m}", n / 4));
            }
        }
        if let Some(tau) = self.tau.value() {
            if !(tau > 0.0 && tau < 1.0) {
                return bad("tau", format!("need 0 < tau < 1, got {tau}"));
            }
            if let Some(m) = self.m.value() {
                let gamma = tau + (m + 1) as f64 / n as f64;
                if gamma >= 0.5 {
                    return bad("tau", format!("tau + (m + 1)/n = {gamma:.4} must be below 1/2"));
                }
            }
        }
        if let Some(eta) = self.eta.value() {
            if !(eta > 0.0 && eta < 0.5) {
                return bad("eta", format!("need 0 < eta < 1/2, got {eta}"));
            }
        }
        Ok(())
    }
}

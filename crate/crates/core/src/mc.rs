//! Monte Carlo size and power experiments.

use crate::bootstrap::{run_test, TestConfig};
use crate::error::{invalid, LrdError, Result};
use crate::lrcov::ModelKind;
use crate::rng::{derive_seed, Stream};
use crate::sim::{simulate_model, FractionalType, MemoryProfile, Model, SimulationSpec};
use crate::stats::TestKind;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::Instant;

/// Nominal levels every experiment reports.
pub const LEVELS: [f64; 2] = [0.05, 0.10];
/// Smallest replication count accepted by the harness.
pub const MIN_REPLICATIONS: usize = 50;

/// Settings shared by every replication of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: Model,
    pub n: usize,
    pub memory: MemoryProfile,
    pub replications: usize,
    pub seed: u64,
    pub kind: ModelKind,
    pub fractional_type: FractionalType,
    /// Bootstrap and smoothing settings; its seed is replaced per replication.
    pub test: TestConfig,
}

impl Experiment {
    pub fn new(model: Model, n: usize, d: f64, replications: usize, replicates: usize, seed: u64) -> Self {
        let kind = match model {
            Model::Custom(_) => ModelKind::Trend,
            _ => ModelKind::Covariate,
        };
        Experiment {
            model,
            n,
            memory: MemoryProfile::Constant(d),
            replications,
            seed,
            kind,
            fractional_type: FractionalType::TypeI,
            test: TestConfig {
                replicates,
                ..TestConfig::default()
            },
        }
    }

    /// Seed of replication `r`; drives both the sample and its bootstrap.
    pub fn replication_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, Stream::Replication, r as u64)
    }

    /// Rejection decisions of replication `r`, `[test][level]`.
    pub fn replicate(&self, r: usize) -> Result<[[bool; 2]; 4]> {
        let seed = self.replication_seed(r);
        let spec = SimulationSpec {
            memory: self.memory,
            fractional_type: self.fractional_type,
            ..SimulationSpec::new(self.model, self.n, 0.0, seed)
        };
        let sample = simulate_model(&spec)?;
        let config = TestConfig {
            seed,
            ..self.test.clone()
        };
        let reports = run_test(&sample, self.kind, &TestKind::ALL, &config)?;
        let mut out = [[false; 2]; 4];
        for rep in reports {
            for (l, alpha) in LEVELS.iter().enumerate() {
                out[rep.test.index()][l] = rep.rejects(*alpha);
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(invalid(
                "R",
                format!("need at least {MIN_REPLICATIONS} replications, got {}", self.replications),
            ));
        }
        if self.test.replicates < 100 {
            return Err(invalid("B", format!("need at least 100 bootstrap replicates, got {}", self.test.replicates)));
        }
        Ok(())
    }

    /// Run every replication and tabulate rejection rates.
    pub fn run(&self, x: f64) -> Result<MonteCarloReport> {
        self.validate()?;
        let work = self.n as f64 * self.replications as f64 * self.test.replicates as f64;
        if work > 1e9 {
            log::warn!(
                "full-scale run: n = {}, R = {}, B = {}; expect a long runtime",
                self.n,
                self.replications,
                self.test.replicates
            );
        }
        let start = Instant::now();
        let outcomes: Vec<Result<[[bool; 2]; 4]>> =
            (0..self.replications).into_par_iter().map(|r| self.replicate(r)).collect();
        let mut counts = [[0usize; 2]; 4];
        let mut failures = 0;
        for (r, o) in outcomes.iter().enumerate() {
            match o {
                Ok(dec) => {
                    for t in 0..4 {
                        for l in 0..2 {
                            counts[t][l] += dec[t][l] as usize;
                        }
                    }
                }
                Err(e) => {
                    log::warn!("replication {r} failed: {e}");
                    failures += 1;
                }
            }
        }
        let limit = self.replications / 100;
        if failures > limit {
            return Err(LrdError::TooManyFailures {
                failed: failures,
                total: self.replications,
                limit,
            });
        }
        let decided = self.replications - failures;
        let rows = TestKind::ALL
            .iter()
            .flat_map(|t| {
                LEVELS.iter().enumerate().map(move |(l, alpha)| (t, l, alpha))
            })
            .map(|(t, l, alpha)| RateRow {
                test: *t,
                level: *alpha,
                rejections: counts[t.index()][l],
                rate: counts[t.index()][l] as f64 / decided as f64,
                half_width: binomial_half_width(*alpha, decided),
            })
            .collect();
        Ok(MonteCarloReport {
            model: self.model.name().to_string(),
            kind: self.kind,
            n: self.n,
            x,
            replications: self.replications,
            replicates: self.test.replicates,
            seed: self.seed,
            failures,
            rows,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// `3 sqrt(alpha (1 - alpha) / R)`.
pub fn binomial_half_width(alpha: f64, replications: usize) -> f64 {
    3.0 * (alpha * (1.0 - alpha) / replications as f64).sqrt()
}

/// Rejection rate of one test at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub test: TestKind,
    pub level: f64,
    pub rejections: usize,
    pub rate: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub model: String,
    pub kind: ModelKind,
    pub n: usize,
    /// Value of the swept variable (`d` or `n`) for this point.
    pub x: f64,
    pub replications: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Replications without a decision, excluded from the rates.
    pub failures: usize,
    pub rows: Vec<RateRow>,
    pub wall_seconds: f64,
}

impl MonteCarloReport {
    pub fn rate(&self, test: TestKind, level: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.test == test && (r.level - level).abs() < 1e-12)
            .map(|r| r.rate)
    }
}

pub const TSV_HEADER: &str = "test\tlevel\tx\trate\thalf_width";

/// Tidy TSV over several reports, one row per `(report, test, level)`.
pub fn to_tsv(reports: &[MonteCarloReport]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for rep in reports {
        for row in &rep.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", row.test.name(), row.level, rep.x, row.rate, row.half_width);
        }
    }
    out
}

/// Size at `d = 0`.
pub fn size_experiment(model: Model, n: usize, replications: usize, replicates: usize, seed: u64) -> Result<MonteCarloReport> {
    Experiment::new(model, n, 0.0, replications, replicates, seed).run(0.0)
}

/// Axis swept by a power experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum PowerAxis {
    /// Constant memory parameters at a fixed sample size.
    Memory(Vec<f64>),
    /// Sample sizes at a fixed memory profile.
    SampleSize(Vec<usize>),
}

/// Rejection rates along `axis`. With [`PowerAxis::SampleSize`] every point
/// uses `memory`; with [`PowerAxis::Memory`] every point uses `n`.
pub fn power_experiment(
    model: Model,
    axis: &PowerAxis,
    n: usize,
    memory: MemoryProfile,
    replications: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<MonteCarloReport>> {
    match axis {
        PowerAxis::Memory(ds) => ds
            .iter()
            .map(|&d| Experiment::new(model, n, d, replications, replicates, seed).run(d))
            .collect(),
        PowerAxis::SampleSize(ns) => ns
            .iter()
            .map(|&size| {
                let mut e = Experiment::new(model, size, 0.0, replications, replicates, seed);
                e.memory = memory;
                e.run(size as f64)
            })
            .collect(),
    }
}

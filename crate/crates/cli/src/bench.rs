//! Runtime of the attacks over a grid of `(n, d_A)` on random full-rank
//! instances.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vfl_recon_core::attack::{
    attack_linear_equations_with, attack_linear_regression_with, Algorithm, AttackMatrix,
    EquationsConfig, RegressionConfig, DEFAULT_DIMENSION_CAP,
};
use vfl_recon_core::linalg::{least_squares, Matrix};
use vfl_recon_core::{Error as CoreError, RankTolerance};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Serialize)]
pub struct BenchSpec {
    pub ns: Vec<usize>,
    pub d_min: usize,
    pub d_max: usize,
    /// Each cell reports the fastest of this many runs.
    pub reps: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub dimension_cap: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            ns: vec![5000, 10000],
            d_min: 10,
            d_max: 20,
            reps: 3,
            algorithm: Algorithm::Equations,
            seed: 0,
            dimension_cap: DEFAULT_DIMENSION_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchCell {
    pub n: usize,
    pub d_a: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingRatio {
    pub n: usize,
    /// Geometric mean over the shared `d_A` values of `t(2n) / t(n)`.
    pub ratio: f64,
    pub per_d: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    pub spec: BenchSpec,
    pub cells: Vec<BenchCell>,
    /// Least-squares fit of `log2(seconds)` against `d_A`, per `n`.
    pub slopes: Vec<SlopeFit>,
    pub doubling: Vec<DoublingRatio>,
}

/// Gaussian `n x d` matrix; full column rank with probability one.
pub fn random_instance(n: usize, d: usize, seed: u64) -> Result<AttackMatrix> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::from_fn(n, d, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    Ok(AttackMatrix::new(a, RankTolerance::default())?)
}

fn time_once(am: &AttackMatrix, spec: &BenchSpec) -> Result<f64> {
    let started = Instant::now();
    match spec.algorithm {
        Algorithm::Equations => {
            let cfg = EquationsConfig {
                dimension_cap: spec.dimension_cap,
                ..EquationsConfig::default()
            };
            attack_linear_equations_with(am, &cfg)?;
        }
        Algorithm::Regression => {
            let mut cfg = RegressionConfig::new(am.dim() + 1, spec.seed, 1);
            cfg.dimension_cap = spec.dimension_cap;
            attack_linear_regression_with(am, &cfg)?;
        }
    }
    Ok(started.elapsed().as_secs_f64())
}

pub fn run_bench(spec: &BenchSpec) -> Result<BenchResult> {
    if spec.ns.is_empty() || spec.d_min == 0 || spec.d_min > spec.d_max || spec.reps == 0 {
        return Err(CliError::Config(
            "bench needs at least one n, 1 <= d_min <= d_max and reps >= 1".into(),
        ));
    }
    let widest = match spec.algorithm {
        Algorithm::Equations => spec.d_max,
        Algorithm::Regression => spec.d_max + 1,
    };
    if widest > spec.dimension_cap {
        return Err(CoreError::DimensionCap {
            d: widest,
            cap: spec.dimension_cap,
        }
        .into());
    }
    let mut cells = Vec::new();
    for &n in &spec.ns {
        for d in spec.d_min..=spec.d_max {
            if n < d {
                return Err(CliError::Config(format!("n = {n} is smaller than d_A = {d}")));
            }
            let am = random_instance(n, d, spec.seed ^ ((n as u64) << 8) ^ d as u64)?;
            let mut best = f64::INFINITY;
            for _ in 0..spec.reps {
                best = best.min(time_once(&am, spec)?);
            }
            cells.push(BenchCell {
                n,
                d_a: d,
                seconds: best,
            });
        }
    }
    let slopes = spec
        .ns
        .iter()
        .filter_map(|&n| {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.n == n)
                .map(|c| (c.d_a as f64, c.seconds.max(1e-9).log2()))
                .collect();
            fit_line(&pts).map(|(slope, intercept)| SlopeFit {
                n,
                slope,
                intercept,
            })
        })
        .collect();
    let doubling = doubling_ratios(&cells);
    Ok(BenchResult {
        spec: spec.clone(),
        cells,
        slopes,
        doubling,
    })
}

/// `(slope, intercept)` of the least-squares line; `None` below two points.
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|&(x, _)| vec![1.0, x]).collect();
    let design = Matrix::from_rows(&rows).ok()?;
    let y: Vec<f64> = points.iter().map(|&(_, y)| y).collect();
    let (w, _) = least_squares(&design, &y).ok()?;
    Some((w[1], w[0]))
}

fn doubling_ratios(cells: &[BenchCell]) -> Vec<DoublingRatio> {
    let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let time = |n: usize, d: usize| {
        cells
            .iter()
            .find(|c| c.n == n && c.d_a == d)
            .map(|c| c.seconds)
    };
    ns.iter()
        .filter(|&&n| ns.contains(&(2 * n)))
        .map(|&n| {
            let per_d: Vec<(usize, f64)> = cells
                .iter()
                .filter(|c| c.n == n)
                .filter_map(|c| time(2 * n, c.d_a).map(|t2| (c.d_a, t2 / c.seconds)))
                .collect();
            let log_mean =
                per_d.iter().map(|(_, r)| r.ln()).sum::<f64>() / per_d.len().max(1) as f64;
            DoublingRatio {
                n,
                ratio: log_mean.exp(),
                per_d,
            }
        })
        .collect()
}

pub fn cells_csv(cells: &[BenchCell], provenance: &str) -> Result<Vec<u8>> {
    let mut buf = format!("# config_sha256: {provenance}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["n", "d_a", "seconds"])?;
        for c in cells {
            w.write_record([c.n.to_string(), c.d_a.to_string(), c.seconds.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
    }
    Ok(buf)
}

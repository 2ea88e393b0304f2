//! End-to-end experiment suites with pinned seeds. Each suite returns raw
//! per-run records, a list of pass/fail checks and tidy tables.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use vfl_recon_core::attack::{
    attack_accuracy, solve_exact_cover_via_attack, verify_cover, Algorithm, BinaryVector,
};
use vfl_recon_core::data::{Dataset, FeatureKind, SynthSpec};
use vfl_recon_core::exactcover::{brute_force_cover, random_instance, ExactCoverInstance};
use vfl_recon_core::linalg::random_orthogonal;
use vfl_recon_core::model::init_model;
use vfl_recon_core::vfl::{invariance_harness, DefenseSpec};

use crate::bench::{run_bench, BenchResult, BenchSpec};
use crate::config::{default_seeds, AttackSpec, DatasetSpec, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{attack_transcript, prepare, train, TrainRun};

pub const SUITES: [&str; 6] = [
    "no-defense",
    "gaussian-sweep",
    "masquerade",
    "exact-cover",
    "invariance",
    "scaling",
];

pub const SIGMAS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const PASSIVE_WIDTHS: [usize; 3] = [8, 10, 15];
const ACTIVE_WIDTH: usize = 4;

#[derive(Clone, Debug)]
pub struct ReproOptions {
    pub seeds: Vec<u64>,
    pub n: usize,
    pub epochs: usize,
}

impl Default for ReproOptions {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            n: 5000,
            epochs: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self, provenance: &str) -> Result<Vec<u8>> {
        let mut buf = format!("# config_sha256: {provenance}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header)?;
            for r in &self.rows {
                w.write_record(r)?;
            }
            w.flush().map_err(csv::Error::from)?;
        }
        Ok(buf)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Synthetic task with `d_a` passive columns (the given ones binary or
/// one-hot) and a few numeric active columns.
pub fn synth_config(
    n: usize,
    d_a: usize,
    binary: Vec<usize>,
    onehot: Option<Vec<usize>>,
    defense: DefenseSpec,
    epochs: usize,
) -> RunConfig {
    let mut spec = SynthSpec::new(n, d_a, ACTIVE_WIDTH, 0).with_binary(binary);
    spec.onehot_group = onehot;
    let mut c = RunConfig {
        dataset: DatasetSpec::Synth(spec),
        defense,
        ..RunConfig::default()
    };
    c.train.epochs = epochs;
    c
}

fn equations() -> AttackSpec {
    AttackSpec::default()
}

fn regression(trials: usize) -> AttackSpec {
    AttackSpec {
        algorithm: Algorithm::Regression,
        trials,
        ..AttackSpec::default()
    }
}

/// Runs the attack with the passive width as the rank bound.
fn attack_run(run: &TrainRun, spec: &AttackSpec) -> Result<vfl_recon_core::attack::AttackReport> {
    let d_a = run.prepared.split.passive_cols.len();
    attack_transcript(&run.inference, spec, Some(d_a), run.prepared.seed)
}

fn match_fraction(a: &[u8], column: impl Iterator<Item = f64>) -> f64 {
    let n = a.len();
    let hits = a
        .iter()
        .zip(column)
        .filter(|(&x, v)| (x == 1) == (*v > 0.5))
        .count();
    hits as f64 / n.max(1) as f64
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

// ---------------------------------------------------------------- no defense

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryRun {
    pub d_a: usize,
    pub seed: u64,
    pub planted: Vec<usize>,
    pub solutions: Vec<BinaryVector>,
    /// Per planted column, the best match fraction over all solutions.
    pub per_feature: Vec<f64>,
    pub seconds: f64,
}

impl RecoveryRun {
    pub fn accuracy(&self) -> f64 {
        self.per_feature.iter().copied().fold(1.0, f64::min)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OneHotRun {
    pub seed: u64,
    pub config: RunConfig,
    pub solutions: Vec<BinaryVector>,
}

/// Planted-column layout: `1 + seed % 5` binaries at the front.
pub fn planted_for(seed: u64) -> Vec<usize> {
    (0..1 + (seed % 5) as usize).collect()
}

pub fn recovery_runs(opts: &ReproOptions) -> Result<Vec<RecoveryRun>> {
    let cells: Vec<(usize, u64)> = PASSIVE_WIDTHS
        .iter()
        .flat_map(|&d| opts.seeds.iter().map(move |&s| (d, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(d_a, seed)| {
            let planted = planted_for(seed);
            let cfg = synth_config(opts.n, d_a, planted.clone(), None, DefenseSpec::None, opts.epochs);
            let run = train(&cfg, seed)?;
            let report = attack_run(&run, &equations())?;
            let x = run.prepared.dataset.features();
            let per_feature = planted
                .iter()
                .map(|&c| {
                    report
                        .solutions
                        .iter()
                        .map(|s| match_fraction(s.bits(), (0..x.rows()).map(|i| x.get(i, c))))
                        .fold(0.0, f64::max)
                })
                .collect();
            Ok(RecoveryRun {
                d_a,
                seed,
                planted,
                solutions: report.solutions,
                per_feature,
                seconds: report.elapsed_secs,
            })
        })
        .collect()
}

/// Passive layout for the one-hot experiment: a 4-column group plus one
/// binary column, in an 8-column passive block.
pub const ONEHOT_GROUP: [usize; 4] = [0, 1, 2, 3];
pub const ONEHOT_EXTRA_BINARY: usize = 4;

pub fn onehot_runs(opts: &ReproOptions) -> Result<Vec<OneHotRun>> {
    opts.seeds
        .par_iter()
        .map(|&seed| {
            let cfg = synth_config(
                opts.n,
                8,
                vec![ONEHOT_EXTRA_BINARY],
                Some(ONEHOT_GROUP.to_vec()),
                DefenseSpec::None,
                opts.epochs,
            );
            let run = train(&cfg, seed)?;
            let report = attack_run(&run, &equations())?;
            Ok(OneHotRun {
                seed,
                config: cfg,
                solutions: report.solutions,
            })
        })
        .collect()
}

/// Every nonzero 0/1 vector of the form `sum c_j x_j` over the binary and
/// one-hot columns with `c_j` in `{-1, 0, 1}`.
pub fn signed_binary_combinations(ds: &Dataset) -> BTreeSet<BinaryVector> {
    let cols: Vec<usize> = ds
        .schema()
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| !matches!(c.kind, FeatureKind::Numeric))
        .map(|(i, _)| i)
        .collect();
    let x = ds.features();
    let mut out = BTreeSet::new();
    let total = 3usize.pow(cols.len() as u32);
    for code in 1..total {
        let mut coef = Vec::with_capacity(cols.len());
        let mut c = code;
        for _ in &cols {
            coef.push((c % 3) as f64 - 1.0);
            c /= 3;
        }
        let v: Vec<f64> = (0..x.rows())
            .map(|i| cols.iter().zip(&coef).map(|(&j, w)| w * x.get(i, j)).sum())
            .collect();
        if v.iter().all(|&t| t == 0.0 || t == 1.0) && v.contains(&1.0) {
            out.insert(BinaryVector(v.iter().map(|&t| t as u8).collect()));
        }
    }
    out
}

pub fn no_defense(opts: &ReproOptions) -> Result<SuiteReport> {
    let runs = recovery_runs(opts)?;
    let mut table = Table::new(
        "no_defense.csv",
        &["d_a", "seed", "planted", "solutions", "accuracy", "seconds"],
    );
    for r in &runs {
        table.push(vec![
            r.d_a.to_string(),
            r.seed.to_string(),
            r.planted.len().to_string(),
            r.solutions.len().to_string(),
            r.accuracy().to_string(),
            r.seconds.to_string(),
        ]);
    }
    let perfect = runs.iter().filter(|r| r.accuracy() == 1.0).count();
    let mut checks = vec![Check::new(
        "undefended recovery is exact",
        perfect == runs.len(),
        format!("{perfect}/{} runs with accuracy 1.0", runs.len()),
    )];

    let onehot = onehot_runs(opts)?;
    let mut oh_table = Table::new("onehot.csv", &["seed", "solutions", "expected", "equal"]);
    let mut equal = 0;
    for r in &onehot {
        let ds = crate::pipeline::load_dataset(&r.config, r.seed)?;
        let expected = signed_binary_combinations(&ds);
        let got: BTreeSet<BinaryVector> = r.solutions.iter().cloned().collect();
        let same = got == expected && got.len() == r.solutions.len();
        equal += usize::from(same);
        oh_table.push(vec![
            r.seed.to_string(),
            r.solutions.len().to_string(),
            expected.len().to_string(),
            same.to_string(),
        ]);
    }
    checks.push(Check::new(
        "one-hot solution set equals the in-span combinations",
        equal == onehot.len(),
        format!("{equal}/{} seeds with exact set equality", onehot.len()),
    ));
    Ok(SuiteReport {
        suite: "no-defense".into(),
        checks,
        tables: vec![table, oh_table],
    })
}

// ----------------------------------------------------------- gaussian sweep

#[derive(Clone, Debug, Serialize)]
pub struct GaussianRun {
    pub sigma: f64,
    pub seed: u64,
    pub equations_solutions: usize,
    pub regression_accuracy: f64,
    pub regression_residual: f64,
}

pub fn gaussian_runs(opts: &ReproOptions, sigmas: &[f64], trials: usize) -> Result<Vec<GaussianRun>> {
    let cells: Vec<(f64, u64)> = sigmas
        .iter()
        .flat_map(|&s| opts.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    cells
        .par_iter()
        .map(|&(sigma, seed)| {
            let cfg = synth_config(
                opts.n,
                8,
                planted_for(seed),
                None,
                DefenseSpec::Gaussian { sigma },
                opts.epochs,
            );
            let run = train(&cfg, seed)?;
            let eq = attack_run(&run, &equations())?;
            let reg = attack_run(&run, &regression(trials))?;
            let best = reg.solutions.first().ok_or_else(|| {
                CliError::Config("regression search returned no candidate".into())
            })?;
            let p = &run.prepared;
            Ok(GaussianRun {
                sigma,
                seed,
                equations_solutions: eq.solutions.len(),
                regression_accuracy: attack_accuracy(best.bits(), &p.dataset, &p.split.passive_cols)?,
                regression_residual: reg.residuals[0],
            })
        })
        .collect()
}

pub fn gaussian_sweep(opts: &ReproOptions) -> Result<SuiteReport> {
    let runs = gaussian_runs(opts, &SIGMAS, 20)?;
    let mut table = Table::new(
        "gaussian_sweep.csv",
        &["sigma", "seed", "equations_solutions", "regression_accuracy", "regression_residual"],
    );
    for r in &runs {
        table.push(vec![
            r.sigma.to_string(),
            r.seed.to_string(),
            r.equations_solutions.to_string(),
            r.regression_accuracy.to_string(),
            r.regression_residual.to_string(),
        ]);
    }
    let mut summary = Table::new("gaussian_summary.csv", &["sigma", "mean_accuracy", "seeds"]);
    let mut means = Vec::new();
    for &s in &SIGMAS {
        let accs: Vec<f64> = runs
            .iter()
            .filter(|r| r.sigma == s)
            .map(|r| r.regression_accuracy)
            .collect();
        means.push(mean(&accs));
        summary.push(vec![s.to_string(), mean(&accs).to_string(), accs.len().to_string()]);
    }
    let top: Vec<&GaussianRun> = runs.iter().filter(|r| r.sigma == 0.5).collect();
    let empty = top.iter().filter(|r| r.equations_solutions == 0).count();
    let (lo, hi) = (means[0], means[means.len() - 1]);
    let checks = vec![
        Check::new(
            "largest noise level empties the exhaustive search",
            empty == top.len(),
            format!("{empty}/{} seeds with no solution at sigma 0.5", top.len()),
        ),
        Check::new(
            "regression accuracy drops with noise",
            hi < lo - 0.05,
            format!("mean accuracy per sigma {means:.4?}; need {hi:.4} < {lo:.4} - 0.05"),
        ),
    ];
    Ok(SuiteReport {
        suite: "gaussian-sweep".into(),
        checks,
        tables: vec![table, summary],
    })
}

// --------------------------------------------------------------- masquerade

#[derive(Clone, Debug, Serialize)]
pub struct MasqueradeRun {
    pub d_a: usize,
    pub seed: u64,
    pub solutions: usize,
    pub equals_fabricated: bool,
    /// Accuracy of the returned vector against the true features.
    pub accuracy: Option<f64>,
    pub final_loss: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UtilityRun {
    pub seed: u64,
    pub plain_loss: f64,
    pub masquerade_loss: f64,
}

pub fn masquerade_runs(opts: &ReproOptions) -> Result<Vec<MasqueradeRun>> {
    let cells: Vec<(usize, u64)> = PASSIVE_WIDTHS
        .iter()
        .flat_map(|&d| opts.seeds.iter().map(move |&s| (d, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(d_a, seed)| {
            let cfg = synth_config(
                opts.n,
                d_a,
                planted_for(seed),
                None,
                DefenseSpec::Masquerade,
                opts.epochs,
            );
            let run = train(&cfg, seed)?;
            let report = attack_run(&run, &equations())?;
            let fabricated = run.fabricated_bits().map(<[u8]>::to_vec).unwrap_or_default();
            let equals_fabricated =
                report.solutions.len() == 1 && report.solutions[0].bits() == fabricated.as_slice();
            let p = &run.prepared;
            let accuracy = match report.solutions.first() {
                Some(s) => Some(attack_accuracy(s.bits(), &p.dataset, &p.split.passive_cols)?),
                None => None,
            };
            Ok(MasqueradeRun {
                d_a,
                seed,
                solutions: report.solutions.len(),
                equals_fabricated,
                accuracy,
                final_loss: run.metrics().final_loss().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

/// Final training loss with and without masquerade on the same task.
pub fn utility_runs(opts: &ReproOptions, d_a: usize) -> Result<Vec<UtilityRun>> {
    opts.seeds
        .par_iter()
        .map(|&seed| {
            let loss = |defense: DefenseSpec| -> Result<f64> {
                let cfg = synth_config(opts.n, d_a, planted_for(seed), None, defense, opts.epochs);
                Ok(train(&cfg, seed)?.metrics().final_loss().unwrap_or(f64::NAN))
            };
            Ok(UtilityRun {
                seed,
                plain_loss: loss(DefenseSpec::None)?,
                masquerade_loss: loss(DefenseSpec::Masquerade)?,
            })
        })
        .collect()
}

pub fn masquerade(opts: &ReproOptions) -> Result<SuiteReport> {
    let runs = masquerade_runs(opts)?;
    let mut table = Table::new(
        "masquerade.csv",
        &["d_a", "seed", "solutions", "equals_fabricated", "accuracy", "final_loss"],
    );
    for r in &runs {
        table.push(vec![
            r.d_a.to_string(),
            r.seed.to_string(),
            r.solutions.to_string(),
            r.equals_fabricated.to_string(),
            r.accuracy.map_or_else(|| "n/a".into(), |a| a.to_string()),
            r.final_loss.to_string(),
        ]);
    }
    let decoy = runs.iter().filter(|r| r.equals_fabricated).count();
    let worst = runs
        .iter()
        .filter_map(|r| r.accuracy)
        .fold(0.0f64, f64::max);
    let hidden = runs.iter().all(|r| r.accuracy.is_some_and(|a| a <= 0.65));

    let utility = utility_runs(opts, PASSIVE_WIDTHS[0])?;
    let mut ut = Table::new("masquerade_utility.csv", &["seed", "plain_loss", "masquerade_loss"]);
    for u in &utility {
        ut.push(vec![
            u.seed.to_string(),
            u.plain_loss.to_string(),
            u.masquerade_loss.to_string(),
        ]);
    }
    let plain = mean(&utility.iter().map(|u| u.plain_loss).collect::<Vec<_>>());
    let masq = mean(&utility.iter().map(|u| u.masquerade_loss).collect::<Vec<_>>());
    let rel = (masq - plain).abs() / plain;
    let checks = vec![
        Check::new(
            "exhaustive search returns only the fabricated vector",
            decoy == runs.len(),
            format!("{decoy}/{} runs", runs.len()),
        ),
        Check::new(
            "returned vector stays near chance against true features",
            hidden,
            format!("worst accuracy {worst:.4} (limit 0.65)"),
        ),
        Check::new(
            "masquerade keeps the training loss",
            rel <= 0.10,
            format!("mean final loss {masq:.4} vs {plain:.4} undefended, relative gap {rel:.4}"),
        ),
    ];
    Ok(SuiteReport {
        suite: "masquerade".into(),
        checks,
        tables: vec![table, ut],
    })
}

// -------------------------------------------------------------- exact cover

#[derive(Clone, Debug, Serialize)]
pub struct CoverRun {
    pub instance: ExactCoverInstance,
    pub oracle: bool,
    pub attack: bool,
    pub cover_verified: Option<bool>,
}

/// `count` random instances with `n <= 8`, `m <= 6` and mixed densities.
pub fn cover_instances(count: usize, seed: u64) -> Result<Vec<ExactCoverInstance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count as u64)
        .map(|i| {
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=6);
            let density = rng.random_range(0.15..0.6);
            Ok(random_instance(n, m, density, seed.wrapping_add(i))?)
        })
        .collect()
}

pub fn cover_runs(count: usize, seed: u64) -> Result<Vec<CoverRun>> {
    cover_instances(count, seed)?
        .into_iter()
        .map(|inst| {
            let (oracle, _) = brute_force_cover(&inst)?;
            let (attack, cover) = solve_exact_cover_via_attack(inst.n(), inst.subsets())?;
            let cover_verified = cover.map(|c| verify_cover(inst.n(), inst.subsets(), &c));
            Ok(CoverRun {
                instance: inst,
                oracle,
                attack,
                cover_verified,
            })
        })
        .collect()
}

pub fn exact_cover(seed: u64) -> Result<SuiteReport> {
    let started = std::time::Instant::now();
    let runs = cover_runs(100, seed)?;
    let secs = started.elapsed().as_secs_f64();
    let mut table = Table::new("exact_cover.csv", &["index", "n", "m", "oracle", "attack", "cover_verified"]);
    for (i, r) in runs.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            r.instance.n().to_string(),
            r.instance.m().to_string(),
            r.oracle.to_string(),
            r.attack.to_string(),
            r.cover_verified.map_or_else(|| "n/a".into(), |v| v.to_string()),
        ]);
    }
    let agree = runs.iter().filter(|r| r.oracle == r.attack).count();
    let yes = runs.iter().filter(|r| r.attack).count();
    let verified = runs.iter().filter(|r| r.cover_verified == Some(true)).count();
    let checks = vec![
        Check::new(
            "decisions agree with brute force",
            agree == runs.len(),
            format!("{agree}/{} agree ({yes} YES)", runs.len()),
        ),
        Check::new(
            "every YES comes with a verified cover",
            verified == yes,
            format!("{verified}/{yes} covers verified"),
        ),
        Check::new("runs under 10 s", secs < 10.0, format!("{secs:.3} s")),
    ];
    Ok(SuiteReport {
        suite: "exact-cover".into(),
        checks,
        tables: vec![table],
    })
}

// --------------------------------------------------------------- invariance

#[derive(Clone, Debug, Serialize)]
pub struct InvarianceRun {
    pub index: usize,
    pub identity: bool,
    pub max_divergence: f64,
}

/// `rotations` random orthogonal matrices plus the identity, each trained
/// for `iterations` steps alongside an unrotated twin.
pub fn invariance_runs(rotations: usize, iterations: usize, seed: u64) -> Result<Vec<InvarianceRun>> {
    let d_a = 8;
    let cfg = synth_config(2000, d_a, vec![0, 1], None, DefenseSpec::None, 100);
    let p = prepare(&cfg, seed)?;
    let hidden = p.config.hidden_sizes.clone().unwrap_or_default();
    let model = init_model(d_a, p.split.active_cols.len(), &hidden, p.dataset.class_count(), seed)?;
    let mut train_cfg = p.config.train_config();
    train_cfg.max_iterations = Some(iterations);
    (0..=rotations)
        .into_par_iter()
        .map(|i| {
            let identity = i == rotations;
            let u = if identity {
                vfl_recon_core::Matrix::identity(d_a)
            } else {
                random_orthogonal(d_a, seed.wrapping_add(i as u64))?
            };
            let r = invariance_harness(&model, &p.train, &u, &train_cfg, seed)?;
            Ok(InvarianceRun {
                index: i,
                identity,
                max_divergence: r.max_divergence,
            })
        })
        .collect()
}

pub fn invariance(seed: u64) -> Result<SuiteReport> {
    let runs = invariance_runs(10, 50, seed)?;
    let mut table = Table::new("invariance.csv", &["index", "identity", "max_divergence"]);
    for r in &runs {
        table.push(vec![
            r.index.to_string(),
            r.identity.to_string(),
            format!("{:e}", r.max_divergence),
        ]);
    }
    let worst = runs
        .iter()
        .filter(|r| !r.identity)
        .map(|r| r.max_divergence)
        .fold(0.0f64, f64::max);
    let ident = runs.iter().find(|r| r.identity).map_or(f64::NAN, |r| r.max_divergence);
    let checks = vec![
        Check::new(
            "rotated inputs give the same messages",
            worst <= 1e-6,
            format!("max divergence {worst:e} over {} rotations", runs.len() - 1),
        ),
        Check::new("identity gives exactly zero", ident == 0.0, format!("{ident:e}")),
    ];
    Ok(SuiteReport {
        suite: "invariance".into(),
        checks,
        tables: vec![table],
    })
}

// ------------------------------------------------------------------ scaling

pub fn scaling_spec(seed: u64) -> BenchSpec {
    BenchSpec {
        ns: vec![5000, 10000],
        d_min: 14,
        d_max: 20,
        reps: 2,
        seed,
        ..BenchSpec::default()
    }
}

pub fn judge_scaling(result: &BenchResult) -> Vec<Check> {
    let slopes: Vec<f64> = result.slopes.iter().map(|s| s.slope).collect();
    let ratios: Vec<f64> = result.doubling.iter().map(|d| d.ratio).collect();
    vec![
        Check::new(
            "log2 runtime grows one per added dimension",
            !slopes.is_empty() && slopes.iter().all(|s| (s - 1.0).abs() <= 0.2),
            format!("slopes {slopes:.3?}"),
        ),
        Check::new(
            "doubling n roughly doubles runtime",
            !ratios.is_empty() && ratios.iter().all(|r| (1.5..=3.0).contains(r)),
            format!("ratios {ratios:.3?}"),
        ),
    ]
}

pub fn scaling(seed: u64) -> Result<SuiteReport> {
    let result = run_bench(&scaling_spec(seed))?;
    let mut table = Table::new("scaling.csv", &["n", "d_a", "seconds"]);
    for c in &result.cells {
        table.push(vec![c.n.to_string(), c.d_a.to_string(), c.seconds.to_string()]);
    }
    Ok(SuiteReport {
        suite: "scaling".into(),
        checks: judge_scaling(&result),
        tables: vec![table],
    })
}

pub fn run_suite(name: &str, opts: &ReproOptions) -> Result<SuiteReport> {
    let seed = opts.seeds.first().copied().unwrap_or(0);
    match name {
        "no-defense" => no_defense(opts),
        "gaussian-sweep" => gaussian_sweep(opts),
        "masquerade" => masquerade(opts),
        "exact-cover" => exact_cover(seed),
        "invariance" => invariance(seed),
        "scaling" => scaling(seed),
        other => Err(CliError::Config(format!(
            "unknown suite `{other}`; expected one of {}",
            SUITES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_counts_cycle_through_one_to_five() {
        let counts: Vec<usize> = (1..=10).map(|s| planted_for(s).len()).collect();
        assert_eq!(counts, vec![2, 3, 4, 5, 1, 2, 3, 4, 5, 1]);
    }

    #[test]
    fn signed_combinations_of_a_lone_binary_column() {
        let ds = vfl_recon_core::data::synth_planted(50, 3, &[1], None, 4).unwrap();
        let combos = signed_binary_combinations(&ds);
        let col: Vec<u8> = (0..50).map(|i| ds.features().get(i, 1) as u8).collect();
        assert_eq!(combos.into_iter().collect::<Vec<_>>(), vec![BinaryVector(col)]);
    }

    #[test]
    fn unknown_suite_is_a_config_error() {
        let err = run_suite("nope", &ReproOptions::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn small_exact_cover_suite_passes() {
        let runs = cover_runs(20, 5).unwrap();
        assert!(runs.iter().all(|r| r.oracle == r.attack));
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vfl_recon::bench::{cells_csv, run_bench, BenchSpec};
use vfl_recon::config::sha256_json;
use vfl_recon::pipeline::{
    attack_with_reference, load_reference, train, transcript_config, write_attack_outputs,
    write_file, write_train_outputs,
};
use vfl_recon::repro::{run_suite, ReproOptions, SUITES};
use vfl_recon::{CliError, Result, RunConfig};
use vfl_recon_core::attack::Algorithm;
use vfl_recon_core::vfl::Transcript;

#[derive(Parser)]
#[command(name = "vfl-recon", version, about = "Split-learning feature reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Equations,
    Regression,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Equations => Algorithm::Equations,
            AlgorithmArg::Regression => Algorithm::Regression,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train both parties, then record an inference transcript over the full dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack a recorded transcript and optionally score it against a training output directory.
    Attack {
        #[arg(long)]
        transcript: PathBuf,
        /// Attack settings; defaults to the config recorded in the transcript.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory written by `train`, holding the true features.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum)]
        algorithm: Option<AlgorithmArg>,
        #[arg(long)]
        max_rank: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the attack over a grid of sample counts and passive widths.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "n", value_delimiter = ',', default_values_t = [5000usize, 10000])]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        d_min: usize,
        #[arg(long, default_value_t = 20)]
        d_max: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, value_enum, default_value = "equations")]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a reproduction suite end to end and print a pass/fail summary.
    Repro {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: String,
        /// Seeds and training settings; `dataset.n` and `train.epochs` are used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transcript utilities.
    Transcript {
        #[command(subcommand)]
        action: TranscriptAction,
    },
    /// Print the default run configuration.
    DefaultConfig,
}

#[derive(Subcommand)]
enum TranscriptAction {
    /// Print the header and a content summary.
    Inspect { file: PathBuf },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(cli: Option<PathBuf>, config: &RunConfig, fallback: &str) -> PathBuf {
    cli.or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("VFL_RECON_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Config(format!("VFL_RECON_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))
}

fn cmd_train(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let out = out_dir(out, &cfg, "out");
    let run = train(&cfg, seed)?;
    let written = write_train_outputs(&run, &out)?;
    let last = run.metrics().epochs.last();
    eprintln!(
        "trained {} epochs (seed {seed}): loss {:.4}, test accuracy {}",
        run.metrics().epochs.len(),
        last.map_or(f64::NAN, |e| e.loss),
        last.and_then(|e| e.test_acc)
            .map_or_else(|| "n/a".into(), |a| format!("{a:.4}")),
    );
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    transcript: PathBuf,
    config: Option<PathBuf>,
    reference: Option<PathBuf>,
    algorithm: Option<AlgorithmArg>,
    max_rank: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let t = Transcript::load(&transcript)?;
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p)?,
        None => transcript_config(&t).unwrap_or_default(),
    };
    if let Some(a) = algorithm {
        cfg.attack.algorithm = a.into();
    }
    if max_rank.is_some() {
        cfg.attack.max_rank = max_rank;
    }
    cfg.validate()?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let reference = reference.as_deref().map(load_reference).transpose()?;
    let out_path = out_dir(out, &cfg, "out");
    let result = attack_with_reference(&t, &cfg, seed, reference.as_ref())?;
    write_attack_outputs(&result, &out_path)?;
    eprintln!(
        "{} solution(s) in {:.3} s (n = {}, d = {}); best accuracy {}",
        result.report.solutions.len(),
        result.report.elapsed_secs,
        result.report.n,
        result.report.d,
        result.best_accuracy.map_or_else(|| "n/a".into(), |a| format!("{a:.4}")),
    );
    if let Some(m) = result.matches_fabricated {
        eprintln!("solution set equals the fabricated vector: {m}");
    }
    println!("{}", out_path.join(vfl_recon::pipeline::ATTACK_FILE).display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    config: Option<PathBuf>,
    ns: Vec<usize>,
    d_min: usize,
    d_max: usize,
    reps: usize,
    algorithm: AlgorithmArg,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let spec = BenchSpec {
        ns,
        d_min,
        d_max,
        reps,
        algorithm: algorithm.into(),
        seed,
        dimension_cap: cfg.attack.dimension_cap,
    };
    let hash = sha256_json(&spec);
    let result = run_bench(&spec)?;
    let out = out_dir(out, &cfg, "bench");
    write_file(&out.join("bench.csv"), cells_csv(&result.cells, &hash)?)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config_sha256: &'a str,
        #[serde(flatten)]
        result: &'a vfl_recon::bench::BenchResult,
    }
    let summary = Summary {
        config_sha256: &hash,
        result: &result,
    };
    write_file(&out.join("bench_summary.json"), serde_json::to_string_pretty(&summary)?)?;
    for s in &result.slopes {
        println!("n = {:>6}: log2(seconds) slope per d_A = {:.3}", s.n, s.slope);
    }
    for d in &result.doubling {
        println!("n = {:>6} -> {}: runtime ratio {:.3}", d.n, 2 * d.n, d.ratio);
    }
    Ok(())
}

/// Returns whether every check passed.
fn cmd_repro(
    suite: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let cfg = load_config(config.as_deref())?;
    let mut opts = ReproOptions {
        seeds: seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]),
        epochs: cfg.train.epochs,
        ..ReproOptions::default()
    };
    if let vfl_recon::config::DatasetSpec::Synth(s) = &cfg.dataset {
        opts.n = s.n;
    }
    #[derive(Serialize)]
    struct Provenance<'a> {
        suite: &'a str,
        seeds: &'a [u64],
        n: usize,
        epochs: usize,
    }
    let hash = sha256_json(&Provenance {
        suite: &suite,
        seeds: &opts.seeds,
        n: opts.n,
        epochs: opts.epochs,
    });
    let report = run_suite(&suite, &opts)?;
    let dir = out_dir(out, &cfg, "repro").join(&suite);
    for t in &report.tables {
        write_file(&dir.join(&t.file), t.to_csv(&hash)?)?;
    }
    #[derive(Serialize)]
    struct Report<'a> {
        config_sha256: &'a str,
        #[serde(flatten)]
        report: &'a vfl_recon::repro::SuiteReport,
    }
    write_file(
        &dir.join("report.json"),
        serde_json::to_string_pretty(&Report {
            config_sha256: &hash,
            report: &report,
        })?,
    )?;
    for c in &report.checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", c.name, c.detail);
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => cmd_train(config, seed, out)?,
        Command::Attack {
            transcript,
            config,
            reference,
            algorithm,
            max_rank,
            seed,
            out,
        } => cmd_attack(transcript, config, reference, algorithm, max_rank, seed, out)?,
        Command::Bench {
            config,
            ns,
            d_min,
            d_max,
            reps,
            algorithm,
            seed,
            out,
        } => cmd_bench(config, ns, d_min, d_max, reps, algorithm, seed, out)?,
        Command::Repro {
            suite,
            config,
            seed,
            out,
        } => return cmd_repro(suite, config, seed, out),
        Command::Transcript {
            action: TranscriptAction::Inspect { file },
        } => {
            let t = Transcript::load(&file)?;
            #[derive(Serialize)]
            struct Inspect<'a> {
                header: &'a vfl_recon_core::vfl::TranscriptHeader,
                summary: vfl_recon_core::vfl::TranscriptSummary,
            }
            print_json(&Inspect {
                header: t.header(),
                summary: t.summary(),
            })?;
        }
        Command::DefaultConfig => print_json(&RunConfig::default())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Train → record → attack → evaluate, plus the files each step leaves on
//! disk.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vfl_recon_core::attack::{
    attack_accuracy, attack_linear_equations_with, attack_linear_regression_with,
    build_attack_matrix, Algorithm, AttackReport, BinaryVector, EquationsConfig, RegressionConfig,
};
use vfl_recon_core::data::{
    load_cache, load_csv, load_schema_hints, save_cache, synth_dataset, train_test_split,
    vertical_split, Dataset, VerticalSplit,
};
use vfl_recon_core::linalg::Matrix;
use vfl_recon_core::model::{init_model, save_checkpoint};
use vfl_recon_core::vfl::{
    collect_inference_transcript, run_training, Phase, TrainMetrics, TrainOutcome, Transcript,
    TranscriptSummary, VflData,
};
use vfl_recon_core::{Error as CoreError, RankTolerance};

use crate::config::{AttackSpec, DatasetSpec, RunConfig};
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_STEM: &str = "checkpoint";
pub const TRANSCRIPT_FILE: &str = "transcript.vflt";
pub const TRAIN_TRANSCRIPT_FILE: &str = "transcript_train.vflt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const DATASET_STEM: &str = "dataset";
pub const REFERENCE_FILE: &str = "reference.json";
pub const ATTACK_FILE: &str = "attack.json";
pub const ACCURACY_FILE: &str = "accuracy.csv";

/// Keeps the train/test shuffle independent of the model initialisation,
/// which is seeded with the run seed directly.
const SPLIT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

/// Synthetic datasets are re-drawn per run seed; CSV files are loaded as is.
pub fn load_dataset(config: &RunConfig, seed: u64) -> Result<Dataset> {
    match &config.dataset {
        DatasetSpec::Synth(s) => {
            let mut spec = s.clone();
            spec.seed = s.seed.wrapping_add(seed);
            Ok(synth_dataset(&spec)?)
        }
        DatasetSpec::Csv {
            path,
            label_column,
            schema_hints,
        } => {
            let hints = match schema_hints {
                Some(p) => Some(load_schema_hints(p).map_err(|e| read_err(p, e))?),
                None => None,
            };
            load_csv(path, label_column, hints.as_ref()).map_err(|e| read_err(path, e))
        }
    }
}

fn read_err(path: &Path, e: CoreError) -> CliError {
    match e {
        CoreError::Io(source) => CliError::Read {
            path: path.to_owned(),
            source,
        },
        other => CliError::Core(other),
    }
}

/// Everything a run needs before training starts.
pub struct Prepared {
    pub config: RunConfig,
    pub hash: String,
    pub seed: u64,
    pub dataset: Dataset,
    pub split: VerticalSplit,
    pub train: VflData,
    pub test: VflData,
    /// Passive features of the full dataset, in row order.
    pub x_a: Matrix,
}

pub fn prepare(config: &RunConfig, seed: u64) -> Result<Prepared> {
    let dataset = load_dataset(config, seed)?;
    let resolved = config.resolve(dataset.schema())?;
    let passive = resolved.passive().to_vec();
    let active: Vec<usize> = (0..dataset.cols()).filter(|c| !passive.contains(c)).collect();
    let split = VerticalSplit::new(passive, active);
    let (x_a, _) = vertical_split(&dataset, &split)?;
    let (tr, te) = train_test_split(&dataset, resolved.test_fraction, seed ^ SPLIT_SEED_SALT)?;
    let to_data = |ds: &Dataset| -> Result<VflData> {
        let (a, b) = vertical_split(ds, &split)?;
        Ok(VflData::new(a, b, ds.labels().to_vec())?)
    };
    Ok(Prepared {
        hash: resolved.hash(),
        train: to_data(&tr)?,
        test: to_data(&te)?,
        config: resolved,
        seed,
        dataset,
        split,
        x_a,
    })
}

pub struct TrainRun {
    pub prepared: Prepared,
    pub outcome: TrainOutcome,
    /// One frame covering every dataset row, in dataset order.
    pub inference: Transcript,
}

impl TrainRun {
    pub fn metrics(&self) -> &TrainMetrics {
        &self.outcome.metrics
    }

    pub fn fabricated_bits(&self) -> Option<&[u8]> {
        self.outcome.passive.fabricated_bits()
    }
}

pub fn train(config: &RunConfig, seed: u64) -> Result<TrainRun> {
    let p = prepare(config, seed)?;
    let cfg = &p.config;
    let hidden = cfg.hidden_sizes.clone().unwrap_or_default();
    let model = init_model(
        p.split.passive_cols.len(),
        p.split.active_cols.len(),
        &hidden,
        p.dataset.class_count(),
        seed,
    )?;
    let mut outcome = run_training(&model, &p.train, &cfg.train_config(), seed, Some(&p.test))?;
    let mut inference = collect_inference_transcript(&mut outcome.passive, &p.x_a)?;
    let echo = serde_json::to_value(cfg)?;
    for t in [&mut inference, &mut outcome.transcript] {
        let h = t.header_mut();
        h.config = echo.clone();
        h.config_hash = Some(p.hash.clone());
    }
    Ok(TrainRun {
        prepared: p,
        outcome,
        inference,
    })
}

/// What the evaluator keeps next to a run: never shown to the attacker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub config_sha256: String,
    pub seed: u64,
    pub passive_cols: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabricated_bits: Option<BinaryVector>,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    config_sha256: &'a str,
    seed: u64,
    config: &'a RunConfig,
}

fn csv_with_provenance(hash: &str) -> Result<csv::Writer<Vec<u8>>> {
    let mut buf = Vec::new();
    writeln!(buf, "# config_sha256: {hash}").expect("write to Vec");
    Ok(csv::Writer::from_writer(buf))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CliError::Config(format!("csv buffer: {e}")))
}

pub fn metrics_csv(metrics: &TrainMetrics, hash: &str) -> Result<Vec<u8>> {
    let mut w = csv_with_provenance(hash)?;
    w.write_record(["epoch", "loss", "test_acc"])?;
    for e in &metrics.epochs {
        let acc = e.test_acc.map_or_else(String::new, |a| a.to_string());
        w.write_record([e.epoch.to_string(), e.loss.to_string(), acc])?;
    }
    finish_csv(w)
}

/// Writes the config echo, checkpoint, transcripts, metrics and the
/// evaluation reference into `out`. Returns the paths written.
pub fn write_train_outputs(run: &TrainRun, out: &Path) -> Result<Vec<PathBuf>> {
    let p = &run.prepared;
    let mut written = Vec::new();

    let echo = ConfigEcho {
        config_sha256: &p.hash,
        seed: p.seed,
        config: &p.config,
    };
    let path = out.join(CONFIG_FILE);
    write_file(&path, serde_json::to_string_pretty(&echo)?)?;
    written.push(path);

    save_checkpoint(
        &run.outcome.model,
        None,
        p.config.train.epochs,
        Some(&p.hash),
        out,
        CHECKPOINT_STEM,
    )?;
    written.push(out.join(format!("{CHECKPOINT_STEM}.json")));
    written.push(out.join(format!("{CHECKPOINT_STEM}.bin")));

    let path = out.join(TRANSCRIPT_FILE);
    run.inference.save(&path)?;
    written.push(path);
    if p.config.transcript.record_training {
        let path = out.join(TRAIN_TRANSCRIPT_FILE);
        run.outcome.transcript.save(&path)?;
        written.push(path);
    }

    let path = out.join(METRICS_FILE);
    write_file(&path, metrics_csv(run.metrics(), &p.hash)?)?;
    written.push(path);

    save_cache(&p.dataset, out, DATASET_STEM)?;
    written.push(out.join(format!("{DATASET_STEM}.json")));
    written.push(out.join(format!("{DATASET_STEM}.bin")));
    let reference = ReferenceInfo {
        config_sha256: p.hash.clone(),
        seed: p.seed,
        passive_cols: p.split.passive_cols.clone(),
        fabricated_bits: run.fabricated_bits().map(|b| BinaryVector(b.to_vec())),
    };
    let path = out.join(REFERENCE_FILE);
    write_file(&path, serde_json::to_string_pretty(&reference)?)?;
    written.push(path);
    Ok(written)
}

/// Ground truth written by [`write_train_outputs`].
pub struct Reference {
    pub dataset: Dataset,
    pub info: ReferenceInfo,
}

pub fn load_reference(dir: &Path) -> Result<Reference> {
    let path = dir.join(REFERENCE_FILE);
    let text = fs::read_to_string(&path).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })?;
    let info: ReferenceInfo = serde_json::from_str(&text)?;
    let dataset = load_cache(dir, DATASET_STEM).map_err(|e| read_err(dir, e))?;
    Ok(Reference { dataset, info })
}

/// The run config recorded in a transcript header, if any.
pub fn transcript_config(t: &Transcript) -> Option<RunConfig> {
    serde_json::from_value(t.header().config.clone()).ok()
}

/// Runs the configured algorithm on a transcript. `max_rank` falls back to
/// the passive width recorded in the header.
pub fn run_attack(t: &Transcript, spec: &AttackSpec, seed: u64) -> Result<AttackReport> {
    let bound = spec.max_rank.or_else(|| {
        transcript_config(t)
            .and_then(|c| c.passive_cols)
            .map(|p| p.len())
    });
    attack_transcript(t, spec, bound, seed)
}

pub fn attack_transcript(
    t: &Transcript,
    spec: &AttackSpec,
    max_rank: Option<usize>,
    seed: u64,
) -> Result<AttackReport> {
    let tol = RankTolerance::default();
    let am = build_attack_matrix(t, tol, max_rank)?;
    let report = match spec.algorithm {
        Algorithm::Equations => attack_linear_equations_with(
            &am,
            &EquationsConfig {
                binary_tol: spec.binary_tol,
                dimension_cap: spec.dimension_cap,
                rank_tol: tol,
            },
        )?,
        Algorithm::Regression => {
            let mut rc = RegressionConfig::new(spec.r.unwrap_or(am.dim() + 1), seed, spec.trials);
            rc.dimension_cap = spec.dimension_cap;
            attack_linear_regression_with(&am, &rc)?
        }
    };
    Ok(report)
}

/// Attack accuracy of each solution against the reference features; `None`
/// when the reference has no binary feature to compare with.
pub fn score_solutions(
    report: &AttackReport,
    dataset: &Dataset,
    passive_cols: &[usize],
) -> Result<Vec<Option<f64>>> {
    report
        .solutions
        .iter()
        .map(|s| match attack_accuracy(s.bits(), dataset, passive_cols) {
            Ok(a) => Ok(Some(a)),
            Err(CoreError::NoBinaryFeatures) => Ok(None),
            Err(e) => Err(e.into()),
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct AttackOutput {
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transcript_config_sha256: Option<String>,
    pub transcript: TranscriptSummary,
    pub report: AttackReport,
    pub accuracy: Vec<Option<f64>>,
    pub best_accuracy: Option<f64>,
    /// Under masquerade: whether the solution set is exactly the
    /// fabricated vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches_fabricated: Option<bool>,
}

/// Attack plus optional scoring against a reference directory.
pub fn attack_with_reference(
    t: &Transcript,
    config: &RunConfig,
    seed: u64,
    reference: Option<&Reference>,
) -> Result<AttackOutput> {
    let report = run_attack(t, &config.attack, seed)?;
    let mut accuracy = vec![None; report.solutions.len()];
    let mut matches_fabricated = None;
    if let Some(r) = reference {
        if t.header().phase != Phase::Inference {
            return Err(CliError::Config(
                "accuracy scoring needs an inference transcript (rows in dataset order)".into(),
            ));
        }
        if r.dataset.rows() != report.n {
            return Err(CliError::Config(format!(
                "reference has {} rows but the transcript has {}",
                r.dataset.rows(),
                report.n
            )));
        }
        accuracy = score_solutions(&report, &r.dataset, &r.info.passive_cols)?;
        matches_fabricated = r
            .info
            .fabricated_bits
            .as_ref()
            .map(|f| report.solutions.len() == 1 && &report.solutions[0] == f);
    }
    let best_accuracy = accuracy.iter().flatten().copied().reduce(f64::max);
    Ok(AttackOutput {
        config_sha256: config.hash(),
        transcript_config_sha256: t.header().config_hash.clone(),
        transcript: t.summary(),
        report,
        accuracy,
        best_accuracy,
        matches_fabricated,
    })
}

pub fn accuracy_csv(out: &AttackOutput) -> Result<Vec<u8>> {
    let mut w = csv_with_provenance(&out.config_sha256)?;
    w.write_record(["solution", "ones", "residual", "accuracy"])?;
    if out.report.solutions.is_empty() {
        w.write_record(["none", "", "", "n/a"])?;
    }
    for (i, s) in out.report.solutions.iter().enumerate() {
        let acc = out.accuracy[i].map_or_else(|| "n/a".to_string(), |a| a.to_string());
        w.write_record([
            i.to_string(),
            s.count_ones().to_string(),
            format!("{:e}", out.report.residuals[i]),
            acc,
        ])?;
    }
    finish_csv(w)
}

pub fn write_attack_outputs(out: &AttackOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    let json = dir.join(ATTACK_FILE);
    write_file(&json, serde_json::to_string_pretty(out)?)?;
    let csv = dir.join(ACCURACY_FILE);
    write_file(&csv, accuracy_csv(out)?)?;
    Ok(vec![json, csv])
}

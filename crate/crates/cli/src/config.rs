//! Run configuration: one JSON document, defaults filled in, echoed back
//! with a SHA-256 of its canonical serialization.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vfl_recon_core::attack::{Algorithm, DEFAULT_BINARY_TOL, DEFAULT_DIMENSION_CAP};
use vfl_recon_core::data::{FeatureKind, FeatureSchema, SynthSpec};
use vfl_recon_core::model::SgdConfig;
use vfl_recon_core::vfl::{DefenseSpec, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synth(SynthSpec),
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema_hints: Option<PathBuf>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synth(SynthSpec::new(5000, 8, 4, 0).with_binary(vec![0, 1, 2]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
}

impl Default for Hyper {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self {
            epochs: 100,
            batch_size: 256,
            base_lr: sgd.base_lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            decay_epochs: sgd.decay_epochs,
        }
    }
}

impl Hyper {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            base_lr: self.base_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            decay_epochs: self.decay_epochs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub algorithm: Algorithm,
    /// Rows sampled per regression trial; `d + 1` when unset.
    pub r: Option<usize>,
    pub trials: usize,
    pub binary_tol: f64,
    pub dimension_cap: usize,
    /// Upper bound on the attack-matrix width. When unset, the passive
    /// width recorded in the transcript header is used if present.
    pub max_rank: Option<usize>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Equations,
            r: None,
            trials: 20,
            binary_tol: DEFAULT_BINARY_TOL,
            dimension_cap: DEFAULT_DIMENSION_CAP,
            max_rank: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptSpec {
    /// Also save every training-phase message.
    pub record_training: bool,
    /// Include `dL/dz` in the training transcript.
    pub record_grads: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Feature columns held by the passive party; the rest go to the
    /// active party.
    pub passive_cols: Option<Vec<usize>>,
    pub test_fraction: f64,
    pub hidden_sizes: Option<Vec<usize>>,
    pub train: Hyper,
    pub defense: DefenseSpec,
    pub attack: AttackSpec,
    pub transcript: TranscriptSpec,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

pub fn default_seeds() -> Vec<u64> {
    (1..=20).collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            passive_cols: None,
            test_fraction: 0.2,
            hidden_sizes: None,
            train: Hyper::default(),
            defense: DefenseSpec::None,
            attack: AttackSpec::default(),
            transcript: TranscriptSpec::default(),
            seeds: default_seeds(),
            out_dir: None,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| bad(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Range checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        let h = &self.train;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(bad(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if h.epochs == 0 || h.batch_size == 0 {
            return Err(bad("train.epochs and train.batch_size must be >= 1"));
        }
        if !(h.base_lr.is_finite() && h.base_lr > 0.0) {
            return Err(bad(format!("train.base_lr must be positive, got {}", h.base_lr)));
        }
        if !(0.0..1.0).contains(&h.momentum) {
            return Err(bad(format!("train.momentum must lie in [0, 1), got {}", h.momentum)));
        }
        if !(h.weight_decay.is_finite() && h.weight_decay >= 0.0) {
            return Err(bad("train.weight_decay must be finite and >= 0"));
        }
        if let DefenseSpec::Gaussian { sigma } = self.defense {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(bad(format!("defense.sigma must be finite and >= 0, got {sigma}")));
            }
        }
        let a = &self.attack;
        if a.trials == 0 {
            return Err(bad("attack.trials must be >= 1"));
        }
        if !(a.binary_tol > 0.0 && a.binary_tol < 0.5) {
            return Err(bad(format!(
                "attack.binary_tol must lie in (0, 0.5), got {}",
                a.binary_tol
            )));
        }
        if a.dimension_cap == 0 || a.dimension_cap > 62 {
            return Err(bad(format!(
                "attack.dimension_cap must lie in 1..=62, got {}",
                a.dimension_cap
            )));
        }
        if a.r == Some(0) || a.max_rank == Some(0) {
            return Err(bad("attack.r and attack.max_rank must be >= 1 when set"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds must not be empty"));
        }
        if let Some(hs) = &self.hidden_sizes {
            if hs.is_empty() || hs.contains(&0) {
                return Err(bad("hidden_sizes must be a non-empty list of positive widths"));
            }
        }
        if let DatasetSpec::Synth(s) = &self.dataset {
            if s.n < 2 || s.d_a == 0 {
                return Err(bad("synthetic dataset needs n >= 2 and d_a >= 1"));
            }
        }
        Ok(())
    }

    /// Fills in everything that depends on the loaded feature schema.
    pub fn resolve(&self, schema: &FeatureSchema) -> Result<RunConfig> {
        self.validate()?;
        let total = schema.len();
        let passive = match (&self.passive_cols, &self.dataset) {
            (Some(cols), _) => cols.clone(),
            (None, DatasetSpec::Synth(s)) => (0..s.d_a).collect(),
            (None, DatasetSpec::Csv { .. }) => leading_half(schema),
        };
        if passive.is_empty() {
            return Err(bad("the passive party needs at least one column"));
        }
        if let Some(&c) = passive.iter().find(|&&c| c >= total) {
            return Err(bad(format!(
                "passive column {c} does not exist (dataset has {total} feature columns)"
            )));
        }
        let d_b = total - passive.len();
        let hidden = self
            .hidden_sizes
            .clone()
            .unwrap_or_else(|| vec![32.max(passive.len() + d_b), 16]);
        let mut out = self.clone();
        out.passive_cols = Some(passive);
        out.hidden_sizes = Some(hidden);
        out.out_dir = None;
        Ok(out)
    }

    pub fn passive(&self) -> &[usize] {
        self.passive_cols.as_deref().unwrap_or(&[])
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            sgd: self.train.sgd(),
            defense: self.defense.clone(),
            max_iterations: None,
            record_transcript: self.transcript.record_training,
            record_grads: self.transcript.record_grads,
        }
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        sha256_json(self)
    }
}

/// Hex SHA-256 of a value's compact JSON serialization.
pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    hex::encode(Sha256::digest(&bytes))
}

/// The leading half of the columns, widened so a one-hot group is never
/// split between the parties.
fn leading_half(schema: &FeatureSchema) -> Vec<usize> {
    let total = schema.len();
    let mut cut = total.div_ceil(2).max(1);
    while cut < total {
        let straddles = match (&schema.columns[cut - 1].kind, &schema.columns[cut].kind) {
            (FeatureKind::OneHot { group: a, .. }, FeatureKind::OneHot { group: b, .. }) => a == b,
            _ => false,
        };
        if !straddles {
            break;
        }
        cut += 1;
    }
    (0..cut).collect()
}

//! Two-party split training with the cut at the input layer.
//!
//! The passive party owns `X_A` and its bottom model; the active party owns
//! `X_B`, the labels, `W_B` and the head. The two structs never share state:
//! the only values crossing the boundary are [`ForwardMessage`] (`z_A`) and
//! [`BackwardMessage`] (`dL/dz`). Everything the active party receives is
//! appended to a [`Transcript`].

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{f64s_to_le_bytes, le_bytes_to_f64s};
use crate::defense::{
    draw_bits, gaussian_masked_forward, masquerade_backward, masquerade_forward, MasqueradeParams,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{
    accuracy, add_scaled, check_cols, cross_entropy, Head, OptimizerState, SgdConfig, VflModel,
};

const TRANSCRIPT_FORMAT: &str = "vfl-transcript/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Inference,
}

/// Which defense the passive party runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseSpec {
    #[default]
    None,
    Gaussian {
        sigma: f64,
    },
    Masquerade,
}

impl DefenseSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DefenseSpec::None => "none",
            DefenseSpec::Gaussian { .. } => "gaussian",
            DefenseSpec::Masquerade => "masquerade",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub format: String,
    pub k: usize,
    pub phase: Phase,
    pub defense: DefenseSpec,
    #[serde(default)]
    pub config: serde_json::Value,
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// One message as observed by the active party.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub iteration: usize,
    pub epoch: usize,
    pub row_ids: Vec<usize>,
    pub z_a: Matrix,
    pub grad: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transcript {
    header: TranscriptHeader,
    frames: Vec<Frame>,
}

#[derive(Serialize, Deserialize)]
struct FrameHeader {
    iteration: usize,
    epoch: usize,
    rows: usize,
    row_ids: Vec<usize>,
    has_grad: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranscriptSummary {
    pub phase: Phase,
    pub defense: String,
    pub frames: usize,
    pub rows: usize,
    pub k: usize,
    pub has_grads: bool,
    pub z_sha256: String,
    pub grad_sha256: Option<String>,
}

impl Transcript {
    pub fn new(k: usize, phase: Phase, defense: DefenseSpec) -> Self {
        Self {
            header: TranscriptHeader {
                format: TRANSCRIPT_FORMAT.into(),
                k,
                phase,
                defense,
                config: serde_json::Value::Null,
                config_hash: None,
            },
            frames: Vec::new(),
        }
    }

    pub fn header(&self) -> &TranscriptHeader {
        &self.header
    }

    pub fn header_mut(&mut self) -> &mut TranscriptHeader {
        &mut self.header
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn k(&self) -> usize {
        self.header.k
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn push(&mut self, frame: Frame) -> Result<()> {
        if frame.z_a.cols() != self.header.k {
            return Err(Error::DimensionMismatch {
                context: "transcript frame width",
                expected: self.header.k,
                got: frame.z_a.cols(),
            });
        }
        if frame.row_ids.len() != frame.z_a.rows() {
            return Err(Error::DimensionMismatch {
                context: "transcript frame rows",
                expected: frame.z_a.rows(),
                got: frame.row_ids.len(),
            });
        }
        if let Some(g) = &frame.grad {
            if g.shape() != frame.z_a.shape() {
                return Err(Error::DimensionMismatch {
                    context: "transcript gradient shape",
                    expected: frame.z_a.data().len(),
                    got: g.data().len(),
                });
            }
        }
        if !frame.z_a.is_finite() {
            return Err(Error::InvalidMatrix("non-finite z_A in transcript".into()));
        }
        if let Some(last) = self.frames.last() {
            if frame.iteration <= last.iteration {
                return Err(Error::Format(format!(
                    "iteration {} does not follow {}",
                    frame.iteration, last.iteration
                )));
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    /// All recorded `z_A` rows stacked in frame order.
    pub fn stacked_z(&self) -> Result<Matrix> {
        let rows: usize = self.frames.iter().map(|f| f.z_a.rows()).sum();
        if rows == 0 {
            return Err(Error::DegenerateTranscript);
        }
        let mut data = Vec::with_capacity(rows * self.k());
        for f in &self.frames {
            data.extend_from_slice(f.z_a.data());
        }
        Matrix::new(rows, self.k(), data)
    }

    /// Largest entry-wise `|z_A|` difference between two transcripts with
    /// matching frame shapes.
    pub fn max_divergence(&self, other: &Transcript) -> Result<f64> {
        if self.frames.len() != other.frames.len() {
            return Err(Error::DimensionMismatch {
                context: "transcript frame count",
                expected: self.frames.len(),
                got: other.frames.len(),
            });
        }
        let mut worst = 0.0f64;
        for (a, b) in self.frames.iter().zip(&other.frames) {
            if a.z_a.shape() != b.z_a.shape() {
                return Err(Error::DimensionMismatch {
                    context: "transcript frame shape",
                    expected: a.z_a.data().len(),
                    got: b.z_a.data().len(),
                });
            }
            worst = worst.max(a.z_a.max_abs_diff(&b.z_a));
        }
        Ok(worst)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for f in &self.frames {
            let fh = FrameHeader {
                iteration: f.iteration,
                epoch: f.epoch,
                rows: f.z_a.rows(),
                row_ids: f.row_ids.clone(),
                has_grad: f.grad.is_some(),
            };
            serde_json::to_writer(&mut w, &fh)?;
            w.write_all(b"\n")?;
            w.write_all(&f64s_to_le_bytes(f.z_a.data()))?;
            if let Some(g) = &f.grad {
                w.write_all(&f64s_to_le_bytes(g.data()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(fs::File::create(path)?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.is_empty() {
            return Err(Error::Format("empty transcript".into()));
        }
        let header: TranscriptHeader = serde_json::from_slice(&line)?;
        if header.format != TRANSCRIPT_FORMAT {
            return Err(Error::Format(format!("unknown format `{}`", header.format)));
        }
        let k = header.k;
        let mut t = Transcript {
            header,
            frames: Vec::new(),
        };
        loop {
            line.clear();
            if r.read_until(b'\n', &mut line)? == 0 {
                break;
            }
            let fh: FrameHeader = serde_json::from_slice(&line)?;
            let read_block = |r: &mut BufReader<R>| -> Result<Matrix> {
                let mut buf = vec![0u8; fh.rows * k * 8];
                r.read_exact(&mut buf)
                    .map_err(|e| Error::Format(format!("truncated frame: {e}")))?;
                Matrix::new(fh.rows, k, le_bytes_to_f64s(&buf)?)
            };
            let z_a = read_block(&mut r)?;
            let grad = if fh.has_grad {
                Some(read_block(&mut r)?)
            } else {
                None
            };
            t.push(Frame {
                iteration: fh.iteration,
                epoch: fh.epoch,
                row_ids: fh.row_ids,
                z_a,
                grad,
            })?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }

    pub fn summary(&self) -> TranscriptSummary {
        let mut zh = Sha256::new();
        let mut gh = Sha256::new();
        let mut has_grads = false;
        for f in &self.frames {
            zh.update(f64s_to_le_bytes(f.z_a.data()));
            if let Some(g) = &f.grad {
                has_grads = true;
                gh.update(f64s_to_le_bytes(g.data()));
            }
        }
        TranscriptSummary {
            phase: self.header.phase,
            defense: self.header.defense.name().into(),
            frames: self.frames.len(),
            rows: self.frames.iter().map(|f| f.z_a.rows()).sum(),
            k: self.k(),
            has_grads,
            z_sha256: hex::encode(zh.finalize()),
            grad_sha256: has_grads.then(|| hex::encode(gh.finalize())),
        }
    }
}

/// Passive to active: the (possibly defended) bottom output for a batch.
#[derive(Clone, Debug)]
pub struct ForwardMessage {
    pub z_a: Matrix,
}

/// Active to passive: `dL/dz` for the same batch.
#[derive(Clone, Debug)]
pub struct BackwardMessage {
    pub dl_dz: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PassiveBottom {
    Plain { w_a: Matrix },
    Gaussian { w_a: Matrix, sigma: f64 },
    Masquerade(MasqueradeParams),
}

impl PassiveBottom {
    pub fn k(&self) -> usize {
        match self {
            PassiveBottom::Plain { w_a } | PassiveBottom::Gaussian { w_a, .. } => w_a.rows(),
            PassiveBottom::Masquerade(mp) => mp.k(),
        }
    }

    /// The linear map the bottom model applies (for masquerade, `P Q`).
    pub fn effective_weight(&self) -> Matrix {
        match self {
            PassiveBottom::Plain { w_a } | PassiveBottom::Gaussian { w_a, .. } => w_a.clone(),
            PassiveBottom::Masquerade(mp) => mp.effective_weight(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            PassiveBottom::Plain { w_a } | PassiveBottom::Gaussian { w_a, .. } => {
                vec![w_a.data_mut()]
            }
            PassiveBottom::Masquerade(mp) => mp.params_mut(),
        }
    }

    fn params(&self) -> Vec<&[f64]> {
        match self {
            PassiveBottom::Plain { w_a } | PassiveBottom::Gaussian { w_a, .. } => vec![w_a.data()],
            PassiveBottom::Masquerade(mp) => mp.params(),
        }
    }
}

/// Everything the passive party knows: its features, bottom model, optimizer
/// and randomness.
#[derive(Clone, Debug)]
pub struct PassiveParty {
    x_a: Matrix,
    bottom: PassiveBottom,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    eval_rng: ChaCha8Rng,
    pending: Option<(Vec<usize>, Vec<u8>)>,
}

impl PassiveParty {
    pub fn new(x_a: Matrix, bottom: PassiveBottom, sgd: SgdConfig, seed: u64) -> Self {
        let opt = OptimizerState::for_params(sgd, &bottom.params());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
        eval_rng.set_stream(3);
        Self {
            x_a,
            bottom,
            opt,
            rng,
            eval_rng,
            pending: None,
        }
    }

    pub fn bottom(&self) -> &PassiveBottom {
        &self.bottom
    }

    pub fn bottom_mut(&mut self) -> &mut PassiveBottom {
        &mut self.bottom
    }

    pub fn x_a(&self) -> &Matrix {
        &self.x_a
    }

    /// Fabricated bits of the last inference pass (masquerade only).
    pub fn fabricated_bits(&self) -> Option<&[u8]> {
        match &self.bottom {
            PassiveBottom::Masquerade(mp) if !mp.fabricated_bits.is_empty() => {
                Some(&mp.fabricated_bits)
            }
            _ => None,
        }
    }

    fn bottom_forward(&mut self, x: &Matrix, bits: Option<&[u8]>, eval: bool) -> Result<Matrix> {
        let rng = if eval { &mut self.eval_rng } else { &mut self.rng };
        match &self.bottom {
            PassiveBottom::Plain { w_a } => {
                check_cols("passive forward", w_a.cols(), x)?;
                Ok(x.matmul_t(w_a))
            }
            PassiveBottom::Gaussian { w_a, sigma } => gaussian_masked_forward(w_a, x, *sigma, rng),
            PassiveBottom::Masquerade(mp) => {
                let drawn;
                let bits = match bits {
                    Some(b) => b,
                    None => {
                        drawn = draw_bits(x.rows(), rng);
                        &drawn
                    }
                };
                masquerade_forward(mp, x, bits)
            }
        }
    }

    /// Forward pass for a training batch; remembers the batch for `backward`.
    pub fn forward(&mut self, rows: &[usize]) -> Result<ForwardMessage> {
        let x = self.x_a.select_rows(rows);
        let bits = match self.bottom {
            PassiveBottom::Masquerade(_) => draw_bits(rows.len(), &mut self.rng),
            _ => Vec::new(),
        };
        let z_a = match self.bottom {
            PassiveBottom::Masquerade(_) => self.bottom_forward(&x, Some(&bits), false)?,
            _ => self.bottom_forward(&x, None, false)?,
        };
        self.pending = Some((rows.to_vec(), bits));
        Ok(ForwardMessage { z_a })
    }

    /// Applies the gradient message to the bottom model.
    pub fn backward(&mut self, msg: &BackwardMessage, epoch: usize) -> Result<()> {
        let (rows, bits) = self
            .pending
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward without a pending forward".into()))?;
        let x = self.x_a.select_rows(&rows);
        let wd = self.opt.config.weight_decay;
        match &mut self.bottom {
            PassiveBottom::Plain { w_a } | PassiveBottom::Gaussian { w_a, .. } => {
                check_cols("passive backward dL/dz", w_a.rows(), &msg.dl_dz)?;
                let mut g = msg.dl_dz.t_matmul(&x);
                add_scaled(g.data_mut(), w_a.data(), wd);
                self.opt.step(vec![w_a.data_mut()], &[g.data()], epoch)
            }
            PassiveBottom::Masquerade(mp) => {
                let mut g = masquerade_backward(mp, &x, &bits, &msg.dl_dz)?;
                add_scaled(g.p.data_mut(), mp.p.data(), wd);
                add_scaled(g.q.data_mut(), mp.q.data(), wd);
                add_scaled(&mut g.u, &mp.u, wd);
                let flat = g.flat();
                self.opt.step(mp.params_mut(), &flat, epoch)
            }
        }
    }

    /// Evaluation forward on arbitrary rows (fresh masquerade bits and noise
    /// from a separate stream, so evaluation does not perturb training).
    pub fn eval_forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.bottom_forward(x, None, true)
    }

    pub fn param_snapshot(&self) -> Vec<Vec<f64>> {
        self.bottom.params().iter().map(|p| p.to_vec()).collect()
    }

    #[doc(hidden)]
    pub fn bottom_params_mut(&mut self) -> Vec<&mut [f64]> {
        self.bottom.params_mut()
    }
}

/// Everything the active party knows. There is no field through which it
/// could reach `X_A` or the passive parameters.
#[derive(Clone, Debug)]
pub struct ActiveParty {
    x_b: Matrix,
    labels: Vec<usize>,
    w_b: Matrix,
    head: Head,
    opt: OptimizerState,
}

impl ActiveParty {
    pub fn new(x_b: Matrix, labels: Vec<usize>, w_b: Matrix, head: Head, sgd: SgdConfig) -> Self {
        let mut params: Vec<&[f64]> = vec![w_b.data()];
        for l in &head.layers {
            params.push(l.weight.data());
            params.push(&l.bias);
        }
        let opt = OptimizerState::for_params(sgd, &params);
        Self {
            x_b,
            labels,
            w_b,
            head,
            opt,
        }
    }

    pub fn w_b(&self) -> &Matrix {
        &self.w_b
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    fn aggregate(&self, z_a: &Matrix, x_b: &Matrix) -> Result<Matrix> {
        check_cols("active z_A", self.w_b.rows(), z_a)?;
        if z_a.rows() != x_b.rows() {
            return Err(Error::DimensionMismatch {
                context: "active batch rows",
                expected: x_b.rows(),
                got: z_a.rows(),
            });
        }
        Ok(z_a.add(&x_b.matmul_t(&self.w_b)))
    }

    /// Completes forward and backward for one batch, updates the active
    /// parameters and returns (mean cross-entropy, message for the passive side).
    pub fn train_step(
        &mut self,
        rows: &[usize],
        fwd: &ForwardMessage,
        epoch: usize,
    ) -> Result<(f64, BackwardMessage)> {
        let x_b = self.x_b.select_rows(rows);
        let y: Vec<usize> = rows.iter().map(|&r| self.labels[r]).collect();
        let z = self.aggregate(&fwd.z_a, &x_b)?;
        let (logits, cache) = self.head.forward(&z);
        let (ce, dlogits) = cross_entropy(&logits, &y);
        let (mut head_grads, dl_dz) = self.head.backward(&cache, &dlogits);
        let wd = self.opt.config.weight_decay;
        let mut gw_b = dl_dz.t_matmul(&x_b);
        add_scaled(gw_b.data_mut(), self.w_b.data(), wd);
        for (g, l) in head_grads.iter_mut().zip(&self.head.layers) {
            add_scaled(g.weight.data_mut(), l.weight.data(), wd);
        }
        let mut grads: Vec<&[f64]> = vec![gw_b.data()];
        for g in &head_grads {
            grads.push(g.weight.data());
            grads.push(&g.bias);
        }
        let mut params: Vec<&mut [f64]> = vec![self.w_b.data_mut()];
        for l in &mut self.head.layers {
            params.push(l.weight.data_mut());
            params.push(&mut l.bias);
        }
        self.opt.step(params, &grads, epoch)?;
        Ok((ce, BackwardMessage { dl_dz }))
    }

    pub fn evaluate(&self, z_a: &Matrix, x_b: &Matrix, labels: &[usize]) -> Result<f64> {
        let z = self.aggregate(z_a, x_b)?;
        Ok(accuracy(&self.head.forward(&z).0, labels))
    }
}

/// Training inputs as row-aligned blocks.
#[derive(Clone, Debug)]
pub struct VflData {
    pub x_a: Matrix,
    pub x_b: Matrix,
    pub y: Vec<usize>,
}

impl VflData {
    pub fn new(x_a: Matrix, x_b: Matrix, y: Vec<usize>) -> Result<Self> {
        if x_a.rows() != x_b.rows() || x_a.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "vfl data rows",
                expected: x_a.rows(),
                got: x_b.rows().min(y.len()),
            });
        }
        Ok(Self { x_a, x_b, y })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub defense: DefenseSpec,
    /// Stop after this many iterations (0 epochs still means none).
    pub max_iterations: Option<usize>,
    /// Record every training-phase `z_A` message.
    pub record_transcript: bool,
    /// Also record `dL/dz` in the training transcript.
    pub record_grads: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 256,
            sgd: SgdConfig::default(),
            defense: DefenseSpec::None,
            max_iterations: None,
            record_transcript: false,
            record_grads: false,
        }
    }
}

/// Seeded per-epoch shuffles split into consecutive mini-batches.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self {
            n,
            batch_size: batch_size.max(1),
            rng,
        }
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(&mut self.rng);
        perm.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's samples (no weight-decay term).
    pub loss: f64,
    pub test_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub iteration_losses: Vec<f64>,
}

impl TrainMetrics {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

pub struct TrainOutcome {
    /// Trained parameters; for masquerade, `w_a` holds `P Q`.
    pub model: VflModel,
    pub passive: PassiveParty,
    pub active: ActiveParty,
    pub transcript: Transcript,
    pub metrics: TrainMetrics,
}

/// Splits a model into the two parties.
pub fn build_parties(
    model: &VflModel,
    data: &VflData,
    config: &TrainConfig,
    seed: u64,
) -> Result<(PassiveParty, ActiveParty)> {
    check_cols("x_A", model.d_a(), &data.x_a)?;
    check_cols("x_B", model.d_b(), &data.x_b)?;
    let bottom = match &config.defense {
        DefenseSpec::None => PassiveBottom::Plain {
            w_a: model.w_a.clone(),
        },
        DefenseSpec::Gaussian { sigma } => {
            crate::defense::GaussianDefense::new(*sigma)?;
            PassiveBottom::Gaussian {
                w_a: model.w_a.clone(),
                sigma: *sigma,
            }
        }
        DefenseSpec::Masquerade => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            init_rng.set_stream(4);
            PassiveBottom::Masquerade(MasqueradeParams::init(
                model.k(),
                model.d_a(),
                &mut init_rng,
            )?)
        }
    };
    let passive = PassiveParty::new(data.x_a.clone(), bottom, config.sgd.clone(), seed);
    let active = ActiveParty::new(
        data.x_b.clone(),
        data.y.clone(),
        model.w_b.clone(),
        model.head.clone(),
        config.sgd.clone(),
    );
    Ok((passive, active))
}

/// Runs the protocol loop on already-built parties.
pub fn run_parties(
    passive: &mut PassiveParty,
    active: &mut ActiveParty,
    n: usize,
    config: &TrainConfig,
    seed: u64,
    test: Option<&VflData>,
) -> Result<(Transcript, TrainMetrics)> {
    let mut transcript = Transcript::new(passive.bottom.k(), Phase::Train, config.defense.clone());
    let mut metrics = TrainMetrics::default();
    let mut schedule = BatchSchedule::new(n, config.batch_size, seed);
    let mut iteration = 0;
    'epochs: for epoch in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for rows in schedule.next_epoch() {
            if config.max_iterations.is_some_and(|m| iteration >= m) {
                break 'epochs;
            }
            iteration += 1;
            let fwd = passive.forward(&rows)?;
            let (loss, back) = active.train_step(&rows, &fwd, epoch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration });
            }
            passive.backward(&back, epoch)?;
            if config.record_transcript {
                transcript.push(Frame {
                    iteration,
                    epoch,
                    row_ids: rows.clone(),
                    z_a: fwd.z_a,
                    grad: config.record_grads.then(|| back.dl_dz.clone()),
                })?;
            }
            metrics.iteration_losses.push(loss);
            loss_sum += loss * rows.len() as f64;
            seen += rows.len();
        }
        let test_acc = match test {
            Some(t) => {
                let z_a = passive.eval_forward(&t.x_a)?;
                Some(active.evaluate(&z_a, &t.x_b, &t.y)?)
            }
            None => None,
        };
        metrics.epochs.push(EpochMetrics {
            epoch,
            loss: loss_sum / seen.max(1) as f64,
            test_acc,
        });
    }
    Ok((transcript, metrics))
}

pub fn run_training(
    model: &VflModel,
    data: &VflData,
    config: &TrainConfig,
    seed: u64,
    test: Option<&VflData>,
) -> Result<TrainOutcome> {
    let (mut passive, mut active) = build_parties(model, data, config, seed)?;
    let (transcript, metrics) =
        run_parties(&mut passive, &mut active, data.rows(), config, seed, test)?;
    let trained = VflModel {
        w_a: passive.bottom.effective_weight(),
        w_b: active.w_b.clone(),
        head: active.head.clone(),
        class_count: model.class_count,
    };
    Ok(TrainOutcome {
        model: trained,
        passive,
        active,
        transcript,
        metrics,
    })
}

/// One inference pass over `x_a` without parameter updates; a single frame
/// whose rows align with `x_a`. Under masquerade the fabricated bits are
/// drawn once per sample and kept on the passive side for evaluation.
pub fn collect_inference_transcript(passive: &mut PassiveParty, x_a: &Matrix) -> Result<Transcript> {
    if x_a.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let z_a = match &mut passive.bottom {
        PassiveBottom::Masquerade(mp) => {
            if mp.fabricated_bits.len() != x_a.rows() {
                mp.fabricated_bits = draw_bits(x_a.rows(), &mut passive.rng);
            }
            masquerade_forward(mp, x_a, &mp.fabricated_bits)?
        }
        _ => passive.bottom_forward(x_a, None, false)?,
    };
    let defense = match &passive.bottom {
        PassiveBottom::Plain { .. } => DefenseSpec::None,
        PassiveBottom::Gaussian { sigma, .. } => DefenseSpec::Gaussian { sigma: *sigma },
        PassiveBottom::Masquerade(_) => DefenseSpec::Masquerade,
    };
    let mut t = Transcript::new(z_a.cols(), Phase::Inference, defense);
    t.push(Frame {
        iteration: 1,
        epoch: 0,
        row_ids: (0..x_a.rows()).collect(),
        z_a,
        grad: None,
    })?;
    Ok(t)
}

/// Replays the active side from its initial state and a recorded training
/// transcript, returning the per-iteration losses and the `dL/dz` messages.
pub fn replay_active(
    initial: &ActiveParty,
    transcript: &Transcript,
) -> Result<(Vec<f64>, Vec<Matrix>, ActiveParty)> {
    let mut active = initial.clone();
    let mut losses = Vec::with_capacity(transcript.len());
    let mut grads = Vec::with_capacity(transcript.len());
    for f in transcript.frames() {
        let fwd = ForwardMessage { z_a: f.z_a.clone() };
        let (loss, back) = active.train_step(&f.row_ids, &fwd, f.epoch)?;
        losses.push(loss);
        grads.push(back.dl_dz);
    }
    Ok((losses, grads, active))
}

pub struct InvarianceResult {
    pub baseline: Transcript,
    pub transformed: Transcript,
    pub max_divergence: f64,
}

/// Trains twice with matched randomness: once from `(W_A, X_A)` and once
/// from `(W_A U^T, X_A U^T)` (each input row mapped to `U x`), recording
/// the training transcripts and their largest entry-wise difference.
pub fn invariance_harness(
    model: &VflModel,
    data: &VflData,
    u: &Matrix,
    config: &TrainConfig,
    seed: u64,
) -> Result<InvarianceResult> {
    let d = model.d_a();
    if u.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            context: "invariance U",
            expected: d,
            got: u.rows(),
        });
    }
    let deviation = u.t_matmul(u).max_abs_diff(&Matrix::identity(d));
    if deviation > 1e-12 {
        return Err(Error::NotOrthogonal { deviation });
    }
    let mut cfg = config.clone();
    cfg.record_transcript = true;
    cfg.defense = DefenseSpec::None;

    let base = run_training(model, data, &cfg, seed, None)?;

    let mut rotated_model = model.clone();
    rotated_model.w_a = model.w_a.matmul_t(u);
    let rotated_data = VflData {
        x_a: data.x_a.matmul_t(u),
        x_b: data.x_b.clone(),
        y: data.y.clone(),
    };
    let rot = run_training(&rotated_model, &rotated_data, &cfg, seed, None)?;
    let max_divergence = base.transcript.max_divergence(&rot.transcript)?;
    Ok(InvarianceResult {
        baseline: base.transcript,
        transformed: rot.transcript,
        max_divergence,
    })
}

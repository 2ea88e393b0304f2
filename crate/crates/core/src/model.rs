//! Multi-layer perceptron whose input layer is partitioned column-wise into
//! the passive block `W_A` and the active block `W_B`, trained with
//! cross-entropy and SGD with momentum.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{f64s_to_le_bytes, le_bytes_to_f64s};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Fully connected layer `y = W a + b` with `W` of shape out x in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// The layers above the cut: ReLU on the aggregated `z`, then dense layers
/// with ReLU between them and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub layers: Vec<DenseLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VflModel {
    /// k x d_A, owned by the passive party.
    pub w_a: Matrix,
    /// k x d_B, owned by the active party.
    pub w_b: Matrix,
    pub head: Head,
    pub class_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_a: usize,
    pub d_b: usize,
    pub hidden_sizes: Vec<usize>,
    pub class_count: usize,
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Glorot-style bound `sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn init_model(
    d_a: usize,
    d_b: usize,
    hidden_sizes: &[usize],
    class_count: usize,
    seed: u64,
) -> Result<VflModel> {
    let k = *hidden_sizes
        .first()
        .ok_or_else(|| Error::InvalidArchitecture("hidden_sizes is empty".into()))?;
    if d_a == 0 {
        return Err(Error::InvalidArchitecture("d_A must be >= 1".into()));
    }
    if k < d_a + d_b {
        return Err(Error::InvalidArchitecture(format!(
            "first hidden width {k} is below the input width d_A + d_B = {}",
            d_a + d_b
        )));
    }
    if class_count < 2 || hidden_sizes.contains(&0) {
        return Err(Error::InvalidArchitecture(
            "need >= 2 classes and non-zero layer widths".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform_matrix(k, d_a + d_b, glorot_bound(d_a + d_b, k), &mut rng);
    let a_idx: Vec<usize> = (0..d_a).collect();
    let b_idx: Vec<usize> = (d_a..d_a + d_b).collect();
    let mut sizes = hidden_sizes.to_vec();
    sizes.push(class_count);
    let layers = sizes
        .windows(2)
        .map(|pair| DenseLayer {
            weight: uniform_matrix(pair[1], pair[0], glorot_bound(pair[0], pair[1]), &mut rng),
            bias: vec![0.0; pair[1]],
        })
        .collect();
    Ok(VflModel {
        w_a: w.select_columns(&a_idx),
        w_b: w.select_columns(&b_idx),
        head: Head { layers },
        class_count,
    })
}

impl VflModel {
    pub fn k(&self) -> usize {
        self.w_a.rows()
    }

    pub fn d_a(&self) -> usize {
        self.w_a.cols()
    }

    pub fn d_b(&self) -> usize {
        self.w_b.cols()
    }

    pub fn architecture(&self) -> Architecture {
        let mut hidden_sizes = vec![self.k()];
        hidden_sizes.extend(
            self.head.layers[..self.head.layers.len() - 1]
                .iter()
                .map(|l| l.weight.rows()),
        );
        Architecture {
            d_a: self.d_a(),
            d_b: self.d_b(),
            hidden_sizes,
            class_count: self.class_count,
        }
    }

    /// The unpartitioned input weight `W = [W_A | W_B]`.
    pub fn full_input_weight(&self) -> Matrix {
        self.w_a.hstack(&self.w_b)
    }

    /// Flat parameter views in canonical order: W_A, W_B, then (W, b) per layer.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = vec![self.w_a.data(), self.w_b.data()];
        for l in &self.head.layers {
            out.push(l.weight.data());
            out.push(&l.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.w_a.data_mut(), self.w_b.data_mut()];
        for l in &mut self.head.layers {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias);
        }
        out
    }

    /// Which entries of [`Self::params`] are weights (decayed) rather than biases.
    pub fn decayed_mask(&self) -> Vec<bool> {
        let mut out = vec![true, true];
        for _ in &self.head.layers {
            out.push(true);
            out.push(false);
        }
        out
    }
}

/// Activations saved by [`Head::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadCache {
    // inputs to each dense layer (post-ReLU)
    inputs: Vec<Matrix>,
    // pre-activations z, then each hidden layer's output before ReLU
    pre: Vec<Matrix>,
}

fn relu(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j).max(0.0))
}

impl Head {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// Batch forward from the aggregated first-layer output `z` (b x k).
    pub fn forward(&self, z: &Matrix) -> (Matrix, HeadCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = vec![z.clone()];
        let mut act = relu(z);
        let last = self.layers.len() - 1;
        let mut logits = Matrix::zeros(0, 0);
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = act.matmul_t(&layer.weight);
            for i in 0..out.rows() {
                for (o, b) in out.row_mut(i).iter_mut().zip(&layer.bias) {
                    *o += b;
                }
            }
            inputs.push(act);
            if li == last {
                logits = out;
                break;
            }
            act = relu(&out);
            pre.push(out);
        }
        (logits, HeadCache { inputs, pre })
    }

    /// Returns per-layer (dW, db) and dL/dz given dL/dlogits.
    pub fn backward(&self, cache: &HeadCache, dlogits: &Matrix) -> (Vec<DenseLayer>, Matrix) {
        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[li];
            let dw = delta.t_matmul(input);
            let mut db = vec![0.0; layer.bias.len()];
            for i in 0..delta.rows() {
                for (g, d) in db.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            grads.push(DenseLayer { weight: dw, bias: db });
            // back through this layer, then through the ReLU that produced `input`
            let mut dinput = delta.matmul(&layer.weight);
            let pre = &cache.pre[li];
            for (g, p) in dinput.data_mut().iter_mut().zip(pre.data()) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = dinput;
        }
        grads.reverse();
        (grads, delta)
    }
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let b = logits.rows();
    let mut grad = Matrix::zeros(b, logits.cols());
    let mut total = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - row[labels[i]];
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (row[j] - lse).exp() / b as f64;
        }
        g[labels[i]] -= 1.0 / b as f64;
    }
    (total / b as f64, grad)
}

pub fn predict(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let pred = predict(logits);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Unsplit evaluation of one input `x = [x_A ; x_B]`.
pub fn forward_centralized(m: &VflModel, x: &[f64]) -> Result<Vec<f64>> {
    let d = m.d_a() + m.d_b();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            context: "forward_centralized input",
            expected: d,
            got: x.len(),
        });
    }
    let z = m.full_input_weight().mul_vec(x);
    let (logits, _) = m.head.forward(&Matrix::from_fn(1, z.len(), |_, j| z[j]));
    Ok(logits.row(0).to_vec())
}

/// Split evaluation: `z = W_A x_A + W_B x_B` aggregated before the head.
pub fn forward_split(m: &VflModel, x_a: &Matrix, x_b: &Matrix) -> Result<Matrix> {
    check_cols("forward_split x_A", m.d_a(), x_a)?;
    check_cols("forward_split x_B", m.d_b(), x_b)?;
    let z = x_a.matmul_t(&m.w_a).add(&x_b.matmul_t(&m.w_b));
    Ok(m.head.forward(&z).0)
}

pub(crate) fn check_cols(context: &'static str, expected: usize, x: &Matrix) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got: x.cols(),
        });
    }
    Ok(())
}

/// Gradients in the same layout as the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub w_a: Matrix,
    pub w_b: Matrix,
    pub head: Vec<DenseLayer>,
}

impl Grads {
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out = vec![self.w_a.data(), self.w_b.data()];
        for l in &self.head {
            out.push(l.weight.data());
            out.push(&l.bias);
        }
        out
    }
}

/// Loss `mean CE + (weight_decay / 2) * sum ||W||^2` over weights (not
/// biases), all parameter gradients and `dL/dz` (b x k), which is the message
/// the active party returns across the cut.
pub fn loss_and_grads(
    m: &VflModel,
    batch_x: &Matrix,
    batch_y: &[usize],
    weight_decay: f64,
) -> Result<(f64, Grads, Matrix)> {
    check_cols("loss_and_grads input", m.d_a() + m.d_b(), batch_x)?;
    if batch_x.rows() == 0 || batch_x.rows() != batch_y.len() {
        return Err(Error::DimensionMismatch {
            context: "loss_and_grads batch",
            expected: batch_x.rows(),
            got: batch_y.len(),
        });
    }
    let w = m.full_input_weight();
    let z = batch_x.matmul_t(&w);
    let (logits, cache) = m.head.forward(&z);
    let (ce, dlogits) = cross_entropy(&logits, batch_y);
    let (mut head, dz) = m.head.backward(&cache, &dlogits);

    let dw = dz.t_matmul(batch_x);
    let a_idx: Vec<usize> = (0..m.d_a()).collect();
    let b_idx: Vec<usize> = (m.d_a()..m.d_a() + m.d_b()).collect();
    let mut w_a = dw.select_columns(&a_idx);
    let mut w_b = dw.select_columns(&b_idx);

    let mut penalty = m.w_a.frobenius_sq() + m.w_b.frobenius_sq();
    add_scaled(w_a.data_mut(), m.w_a.data(), weight_decay);
    add_scaled(w_b.data_mut(), m.w_b.data(), weight_decay);
    for (g, l) in head.iter_mut().zip(&m.head.layers) {
        penalty += l.weight.frobenius_sq();
        add_scaled(g.weight.data_mut(), l.weight.data(), weight_decay);
    }
    let loss = ce + 0.5 * weight_decay * penalty;
    Ok((loss, Grads { w_a, w_b, head }, dz))
}

pub(crate) fn add_scaled(dst: &mut [f64], src: &[f64], s: f64) {
    if s == 0.0 {
        return;
    }
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

/// SGD-with-momentum hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_epochs: Vec<usize>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_epochs: vec![30, 60, 90],
        }
    }
}

impl SgdConfig {
    /// `base_lr * 10^-(number of decay epochs <= epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.base_lr * 10f64.powi(-(drops as i32))
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    pub buffers: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            buffers: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(config: SgdConfig, params: &[&[f64]]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(config, &shapes)
    }

    /// `v <- mu v + g; p <- p - lr(epoch) v`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], epoch: usize) -> Result<()> {
        if params.len() != self.buffers.len() || grads.len() != self.buffers.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer tensor count",
                expected: self.buffers.len(),
                got: params.len().min(grads.len()),
            });
        }
        let lr = self.config.lr_at(epoch);
        let mu = self.config.momentum;
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.buffers) {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(Error::DimensionMismatch {
                    context: "optimizer tensor shape",
                    expected: v.len(),
                    got: p.len(),
                });
            }
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
        Ok(())
    }
}

pub fn sgd_momentum_step(
    m: &mut VflModel,
    state: &mut OptimizerState,
    grads: &Grads,
    epoch: usize,
) -> Result<()> {
    let g = grads.flat();
    state.step(m.params_mut(), &g, epoch)
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub architecture: Architecture,
    pub epoch: usize,
    pub has_optimizer_state: bool,
    #[serde(default)]
    pub config_hash: Option<String>,
    tensors: Vec<TensorEntry>,
}

fn tensor_table(m: &VflModel) -> Vec<TensorEntry> {
    let mut t = vec![
        TensorEntry {
            name: "w_a".into(),
            rows: m.w_a.rows(),
            cols: m.w_a.cols(),
        },
        TensorEntry {
            name: "w_b".into(),
            rows: m.w_b.rows(),
            cols: m.w_b.cols(),
        },
    ];
    for (i, l) in m.head.layers.iter().enumerate() {
        t.push(TensorEntry {
            name: format!("layer{i}.weight"),
            rows: l.weight.rows(),
            cols: l.weight.cols(),
        });
        t.push(TensorEntry {
            name: format!("layer{i}.bias"),
            rows: l.bias.len(),
            cols: 1,
        });
    }
    t
}

/// Writes `<stem>.bin` (all tensors, little-endian f64, canonical order,
/// followed by momentum buffers when present) and `<stem>.json`.
pub fn save_checkpoint(
    m: &VflModel,
    opt: Option<&OptimizerState>,
    epoch: usize,
    config_hash: Option<&str>,
    dir: &Path,
    stem: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut values: Vec<f64> = m.params().concat();
    if let Some(o) = opt {
        for b in &o.buffers {
            values.extend_from_slice(b);
        }
    }
    fs::write(dir.join(format!("{stem}.bin")), f64s_to_le_bytes(&values))?;
    let manifest = CheckpointManifest {
        architecture: m.architecture(),
        epoch,
        has_optimizer_state: opt.is_some(),
        config_hash: config_hash.map(str::to_owned),
        tensors: tensor_table(m),
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads the model parameters (and raw momentum buffers, if stored).
pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(VflModel, CheckpointManifest, Option<Vec<Vec<f64>>>)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let values = le_bytes_to_f64s(&fs::read(dir.join(format!("{stem}.bin")))?)?;
    let arch = &manifest.architecture;
    let mut m = init_model(arch.d_a, arch.d_b, &arch.hidden_sizes, arch.class_count, 0)?;
    let total: usize = m.params().iter().map(|p| p.len()).sum();
    let expected = if manifest.has_optimizer_state { 2 * total } else { total };
    if values.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {} values, manifest implies {expected}",
            values.len()
        )));
    }
    let mut offset = 0;
    let mut buffers = Vec::new();
    for p in m.params_mut() {
        p.copy_from_slice(&values[offset..offset + p.len()]);
        buffers.push(p.len());
        offset += p.len();
    }
    let opt = manifest.has_optimizer_state.then(|| {
        buffers
            .iter()
            .map(|&n| {
                let b = values[offset..offset + n].to_vec();
                offset += n;
                b
            })
            .collect()
    });
    Ok((m, manifest, opt))
}

//! Vanilla recurrent filter over score-vector sequences.
//!
//! `h_t = tanh(W_in s_t + W_rec h_{t-1} + b_rec)` with `h_0 = 0`, read out
//! through a linear place layer. Trained by truncated backprop through time
//! with Adam and global-norm gradient clipping.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::classifier::{softmax, Adam};
use crate::rng::Rng;

#[derive(Debug)]
pub enum RnnError {
    ShapeMismatch { detail: String },
    LabelOutOfRange { label: usize, places: usize },
    EmptyData,
    NumericFailure { detail: String },
    Format { detail: String },
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl fmt::Display for RnnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RnnError::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            RnnError::LabelOutOfRange { label, places } => {
                write!(f, "label {label} out of range for {places} places")
            }
            RnnError::EmptyData => write!(f, "empty training data"),
            RnnError::NumericFailure { detail } => write!(f, "numeric failure: {detail}"),
            RnnError::Format { detail } => write!(f, "bad rnn checkpoint: {detail}"),
            RnnError::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for RnnError {}

/// Recurrent model weights. `w_in` is `hidden x places`, `w_rec` is
/// `hidden x hidden`, `w_out` is `places x hidden`, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnModel {
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub b_rec: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
    pub hidden: usize,
    pub places: usize,
}

impl RnnModel {
    pub fn zeros(hidden: usize, places: usize) -> Self {
        Self {
            w_in: vec![0.0; hidden * places],
            w_rec: vec![0.0; hidden * hidden],
            b_rec: vec![0.0; hidden],
            w_out: vec![0.0; places * hidden],
            b_out: vec![0.0; places],
            hidden,
            places,
        }
    }

    /// Seeded init: each weight block uniform in `+-1/sqrt(fan_in)`, biases
    /// zero.
    pub fn init(hidden: usize, places: usize, rng: &mut Rng) -> Self {
        let mut model = Self::zeros(hidden, places);
        let in_bound = 1.0 / (places as f64).sqrt();
        let rec_bound = 1.0 / (hidden as f64).sqrt();
        for w in model.w_in.iter_mut() {
            *w = rng.uniform(-in_bound, in_bound);
        }
        for w in model.w_rec.iter_mut() {
            *w = rng.uniform(-rec_bound, rec_bound);
        }
        for w in model.w_out.iter_mut() {
            *w = rng.uniform(-rec_bound, rec_bound);
        }
        model
    }

    fn param_blocks(&self) -> [&Vec<f64>; 5] {
        [&self.w_in, &self.w_rec, &self.b_rec, &self.w_out, &self.b_out]
    }

    fn param_blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.w_in,
            &mut self.w_rec,
            &mut self.b_rec,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }
}

fn matvec(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * v[c];
        }
        out[r] += acc;
    }
}

/// `out += m^T v` for row-major `m` of `rows x cols`.
fn matvec_transposed(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), rows);
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        let vr = v[r];
        for c in 0..cols {
            out[c] += row[c] * vr;
        }
    }
}

/// Hidden states and per-step logits for one sequence.
#[derive(Clone, Debug)]
pub struct RnnTrace {
    pub hidden_states: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
}

/// Runs the recurrence over a score sequence.
pub fn rnn_forward(model: &RnnModel, inputs: &[Vec<f64>]) -> Result<RnnTrace, RnnError> {
    let mut hidden_states = Vec::with_capacity(inputs.len());
    let mut logits = Vec::with_capacity(inputs.len());
    let mut prev = vec![0.0; model.hidden];
    for s in inputs {
        if s.len() != model.places {
            return Err(RnnError::ShapeMismatch {
                detail: format!("input of length {}, model expects {}", s.len(), model.places),
            });
        }
        let mut pre = model.b_rec.clone();
        matvec(&model.w_in, model.hidden, model.places, s, &mut pre);
        matvec(&model.w_rec, model.hidden, model.hidden, &prev, &mut pre);
        let h: Vec<f64> = pre.iter().map(|&a| a.tanh()).collect();
        let mut step_logits = model.b_out.clone();
        matvec(&model.w_out, model.places, model.hidden, &h, &mut step_logits);
        prev = h.clone();
        hidden_states.push(h);
        logits.push(step_logits);
    }
    Ok(RnnTrace { hidden_states, logits })
}

/// Gradients with the same shapes as [`RnnModel`].
#[derive(Clone, Debug)]
pub struct RnnGrads {
    pub w_in: Vec<f64>,
    pub w_rec: Vec<f64>,
    pub b_rec: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl RnnGrads {
    fn zeros(model: &RnnModel) -> Self {
        Self {
            w_in: vec![0.0; model.w_in.len()],
            w_rec: vec![0.0; model.w_rec.len()],
            b_rec: vec![0.0; model.b_rec.len()],
            w_out: vec![0.0; model.w_out.len()],
            b_out: vec![0.0; model.b_out.len()],
        }
    }

    fn blocks(&self) -> [&Vec<f64>; 5] {
        [&self.w_in, &self.w_rec, &self.b_rec, &self.w_out, &self.b_out]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.w_in,
            &mut self.w_rec,
            &mut self.b_rec,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            for g in block.iter_mut() {
                *g *= factor;
            }
        }
    }

    fn add(&mut self, other: &RnnGrads, factor: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * factor;
            }
        }
    }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean per-step cross-entropy over one sequence and its full-BPTT gradient,
/// clipped to `grad_clip` by global norm (pass `f64::INFINITY` to disable).
pub fn rnn_loss_and_grads(
    model: &RnnModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    grad_clip: f64,
) -> Result<(f64, RnnGrads), RnnError> {
    if inputs.is_empty() {
        return Err(RnnError::EmptyData);
    }
    if inputs.len() != labels.len() {
        return Err(RnnError::ShapeMismatch {
            detail: format!("{} inputs but {} labels", inputs.len(), labels.len()),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= model.places) {
        return Err(RnnError::LabelOutOfRange { label, places: model.places });
    }
    let trace = rnn_forward(model, inputs)?;
    let steps = inputs.len();
    let inv = 1.0 / steps as f64;

    let mut loss = 0.0;
    let mut grads = RnnGrads::zeros(model);
    // d(loss)/d(h_t) accumulated from the readout and from t+1.
    let mut dh_next = vec![0.0; model.hidden];
    let mut dlogits_per_step = Vec::with_capacity(steps);
    for t in 0..steps {
        let logits = &trace.logits[t];
        loss += (log_sum_exp(logits) - logits[labels[t]]) * inv;
        let mut dlogits = softmax(logits);
        dlogits[labels[t]] -= 1.0;
        for g in dlogits.iter_mut() {
            *g *= inv;
        }
        dlogits_per_step.push(dlogits);
    }
    for t in (0..steps).rev() {
        let h = &trace.hidden_states[t];
        let dlogits = &dlogits_per_step[t];
        for r in 0..model.places {
            grads.b_out[r] += dlogits[r];
            let row = &mut grads.w_out[r * model.hidden..(r + 1) * model.hidden];
            for (c, val) in row.iter_mut().enumerate() {
                *val += dlogits[r] * h[c];
            }
        }
        let mut dh = dh_next;
        matvec_transposed(&model.w_out, model.places, model.hidden, dlogits, &mut dh);
        // Through tanh.
        let da: Vec<f64> = dh.iter().zip(h).map(|(g, hv)| g * (1.0 - hv * hv)).collect();
        let prev_h: Option<&Vec<f64>> = if t > 0 { Some(&trace.hidden_states[t - 1]) } else { None };
        for i in 0..model.hidden {
            grads.b_rec[i] += da[i];
            let in_row = &mut grads.w_in[i * model.places..(i + 1) * model.places];
            for (c, val) in in_row.iter_mut().enumerate() {
                *val += da[i] * inputs[t][c];
            }
            if let Some(ph) = prev_h {
                let rec_row = &mut grads.w_rec[i * model.hidden..(i + 1) * model.hidden];
                for (c, val) in rec_row.iter_mut().enumerate() {
                    *val += da[i] * ph[c];
                }
            }
        }
        dh_next = vec![0.0; model.hidden];
        matvec_transposed(&model.w_rec, model.hidden, model.hidden, &da, &mut dh_next);
    }
    let norm = grads.global_norm();
    if grad_clip.is_finite() && norm > grad_clip {
        grads.scale(grad_clip / norm);
    }
    Ok((loss, grads))
}

/// BPTT training settings; optimizer fields mirror the classifier's.
#[derive(Clone, Debug)]
pub struct RnnTrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub bptt_len: usize,
    pub grad_clip: f64,
}

impl Default for RnnTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            bptt_len: 20,
            grad_clip: 5.0,
        }
    }
}

/// One labeled score sequence for training.
#[derive(Clone, Debug)]
pub struct TrainingSequence {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

// Substreams of the training seed, namespaced away from other modules.
const STREAM_INIT: u64 = 4 << 40;
const STREAM_SHUFFLE: u64 = (4 << 40) | 1;

/// Trains an RNN on labeled sequences. Sequences are cut into consecutive
/// windows of `bptt_len` steps (hidden state reset per window); each epoch
/// shuffles the windows and applies Adam per `batch_size`-window batch.
/// Deterministic given the seed.
pub fn fit_rnn(
    sequences: &[TrainingSequence],
    hidden: usize,
    cfg: &RnnTrainConfig,
) -> Result<RnnModel, RnnError> {
    if sequences.is_empty() || sequences.iter().all(|s| s.inputs.is_empty()) {
        return Err(RnnError::EmptyData);
    }
    if cfg.bptt_len < 1 || cfg.epochs < 1 || cfg.batch_size < 1 {
        return Err(RnnError::NumericFailure {
            detail: format!(
                "bad train config: bptt_len={}, epochs={}, batch_size={}",
                cfg.bptt_len, cfg.epochs, cfg.batch_size
            ),
        });
    }
    let places = sequences[0].inputs[0].len();
    let mut windows: Vec<(&[Vec<f64>], &[usize])> = Vec::new();
    for seq in sequences {
        if seq.inputs.len() != seq.labels.len() {
            return Err(RnnError::ShapeMismatch {
                detail: format!("{} inputs but {} labels", seq.inputs.len(), seq.labels.len()),
            });
        }
        let mut start = 0;
        while start < seq.inputs.len() {
            let end = (start + cfg.bptt_len).min(seq.inputs.len());
            windows.push((&seq.inputs[start..end], &seq.labels[start..end]));
            start = end;
        }
    }

    let mut init_rng = Rng::for_stream(cfg.seed, STREAM_INIT);
    let mut model = RnnModel::init(hidden, places, &mut init_rng);
    let block_lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let mut adams: Vec<Adam> = block_lens
        .iter()
        .map(|&len| Adam::new(len, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps))
        .collect();
    let mut shuffle_rng = Rng::for_stream(cfg.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch_grads = RnnGrads::zeros(&model);
            let inv = 1.0 / chunk.len() as f64;
            for &w in chunk {
                let (inputs, labels) = windows[w];
                let (loss, grads) = rnn_loss_and_grads(&model, inputs, labels, cfg.grad_clip)?;
                if !loss.is_finite() {
                    return Err(RnnError::NumericFailure {
                        detail: format!("non-finite loss at epoch {epoch}"),
                    });
                }
                batch_grads.add(&grads, inv);
            }
            step += 1;
            for ((block, grad), adam) in model
                .param_blocks_mut()
                .into_iter()
                .zip(batch_grads.blocks())
                .zip(adams.iter_mut())
            {
                adam.step(block, grad, cfg.learning_rate, step);
            }
        }
    }
    Ok(model)
}

/// Per-step readout over a query sequence: `(argmax place, peak probability)`.
pub fn rnn_match(model: &RnnModel, inputs: &[Vec<f64>]) -> Result<Vec<(usize, f64)>, RnnError> {
    let trace = rnn_forward(model, inputs)?;
    Ok(trace
        .logits
        .iter()
        .map(|logits| {
            let probs = softmax(logits);
            let mut best = 0;
            for r in 1..probs.len() {
                if probs[r] > probs[best] {
                    best = r;
                }
            }
            (best, probs[best])
        })
        .collect())
}

const FNRN_MAGIC: &[u8; 4] = b"FNRN";
const FNRN_VERSION: u32 = 1;

/// Writes the `FNRN` checkpoint: magic, version u32, hidden u32, places u32,
/// then `w_in`, `w_rec`, `b_rec`, `w_out`, `b_out` as little-endian f64.
pub fn write_rnn(path: &Path, model: &RnnModel) -> Result<(), RnnError> {
    let total: usize = model.param_blocks().iter().map(|b| b.len()).sum();
    let mut buf = Vec::with_capacity(16 + 8 * total);
    buf.extend_from_slice(FNRN_MAGIC);
    buf.extend_from_slice(&FNRN_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&(model.places as u32).to_le_bytes());
    for block in model.param_blocks() {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| RnnError::Io { path: path.to_path_buf(), source: e })
}

/// Reads an `FNRN` checkpoint.
pub fn read_rnn(path: &Path) -> Result<RnnModel, RnnError> {
    let mut file = fs::File::open(path).map_err(|e| RnnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| RnnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if buf.len() < 16 || &buf[0..4] != FNRN_MAGIC {
        return Err(RnnError::Format { detail: "bad magic or truncated header".into() });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FNRN_VERSION {
        return Err(RnnError::Format { detail: format!("unsupported version {version}") });
    }
    let hidden = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let places = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let mut model = RnnModel::zeros(hidden, places);
    let expected = 16 + 8 * model.param_blocks().iter().map(|b| b.len()).sum::<usize>();
    if buf.len() != expected {
        return Err(RnnError::Format {
            detail: format!("expected {expected} bytes, found {}", buf.len()),
        });
    }
    let mut offset = 16;
    for block in model.param_blocks_mut() {
        for v in block.iter_mut() {
            *v = f64::from_le_bytes(buf[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
    }
    Ok(model)
}

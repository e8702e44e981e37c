//! Linear place classifier over binary descriptors.
//!
//! A single fully connected layer maps the n-bit descriptor to one logit per
//! reference place; softmax turns the logits into the score vector consumed
//! by the temporal filters. Training is softmax cross-entropy with Adam,
//! fully seeded.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::encoder::BinaryDescriptor;
use crate::rng::Rng;

#[derive(Debug)]
pub enum ClassifierError {
    ShapeMismatch { detail: String },
    LabelOutOfRange { label: usize, places: usize },
    EmptyData,
    NumericFailure { detail: String },
    Format { detail: String },
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl fmt::Display for ClassifierError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierError::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            ClassifierError::LabelOutOfRange { label, places } => {
                write!(f, "label {label} out of range for {places} places")
            }
            ClassifierError::EmptyData => write!(f, "empty training data"),
            ClassifierError::NumericFailure { detail } => write!(f, "numeric failure: {detail}"),
            ClassifierError::Format { detail } => write!(f, "bad head checkpoint: {detail}"),
            ClassifierError::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for ClassifierError {}

/// Post-softmax scores over the reference places.
#[derive(Clone, Debug)]
pub struct ScoreVector {
    scores: Vec<f64>,
    argmax: usize,
}

impl ScoreVector {
    /// Wraps a probability vector; the argmax (first maximum) is cached.
    pub fn new(scores: Vec<f64>) -> Self {
        let argmax = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Self { scores, argmax }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn argmax(&self) -> usize {
        self.argmax
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn peak(&self) -> f64 {
        self.scores[self.argmax]
    }
}

/// The fully connected output layer: `places x inputs` weights plus bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHead {
    weights: Vec<f64>,
    bias: Vec<f64>,
    places: usize,
    inputs: usize,
}

impl DenseHead {
    pub fn zeros(places: usize, inputs: usize) -> Self {
        Self {
            weights: vec![0.0; places * inputs],
            bias: vec![0.0; places],
            places,
            inputs,
        }
    }

    /// Seeded init: weights uniform in `[-1/sqrt(inputs), 1/sqrt(inputs)]`,
    /// bias zero.
    pub fn init(places: usize, inputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..places * inputs).map(|_| rng.uniform(-bound, bound)).collect();
        Self { weights, bias: vec![0.0; places], places, inputs }
    }

    pub fn from_parts(
        weights: Vec<f64>,
        bias: Vec<f64>,
        places: usize,
        inputs: usize,
    ) -> Result<Self, ClassifierError> {
        if weights.len() != places * inputs || bias.len() != places {
            return Err(ClassifierError::ShapeMismatch {
                detail: format!(
                    "want {}x{} weights and {} bias, got {} and {}",
                    places,
                    inputs,
                    places,
                    weights.len(),
                    bias.len()
                ),
            });
        }
        Ok(Self { weights, bias, places, inputs })
    }

    pub fn places(&self) -> usize {
        self.places
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn logits(&self, d: &BinaryDescriptor) -> Vec<f64> {
        let mut logits = self.bias.clone();
        for j in 0..self.inputs {
            if d.bit(j) {
                for r in 0..self.places {
                    logits[r] += self.weights[r * self.inputs + j];
                }
            }
        }
        logits
    }
}

/// Numerically stable softmax (max subtraction).
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Scores a descriptor against every reference place.
pub fn forward(head: &DenseHead, d: &BinaryDescriptor) -> Result<ScoreVector, ClassifierError> {
    if d.len() != head.inputs {
        return Err(ClassifierError::ShapeMismatch {
            detail: format!("descriptor has {} bits, head expects {}", d.len(), head.inputs),
        });
    }
    Ok(ScoreVector::new(softmax(&head.logits(d))))
}

/// Gradients with the same shapes as the head.
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean cross-entropy over a batch and its analytic gradient.
pub fn loss_and_grad(
    head: &DenseHead,
    batch: &[(&BinaryDescriptor, usize)],
) -> Result<(f64, HeadGrads), ClassifierError> {
    if batch.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    let mut loss = 0.0;
    let mut grads = HeadGrads {
        weights: vec![0.0; head.weights.len()],
        bias: vec![0.0; head.bias.len()],
    };
    let inv = 1.0 / batch.len() as f64;
    for &(d, label) in batch {
        if label >= head.places {
            return Err(ClassifierError::LabelOutOfRange { label, places: head.places });
        }
        if d.len() != head.inputs {
            return Err(ClassifierError::ShapeMismatch {
                detail: format!("descriptor has {} bits, head expects {}", d.len(), head.inputs),
            });
        }
        let logits = head.logits(d);
        loss += (log_sum_exp(&logits) - logits[label]) * inv;
        let probs = softmax(&logits);
        let set = d.set_bits();
        for r in 0..head.places {
            let g = (probs[r] - if r == label { 1.0 } else { 0.0 }) * inv;
            grads.bias[r] += g;
            for &j in &set {
                grads.weights[r * head.inputs + j] += g;
            }
        }
    }
    Ok((loss, grads))
}

/// Adam optimizer state for one parameter vector.
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub(crate) fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], beta1, beta2, eps }
    }

    /// One bias-corrected update; `t` is the 1-based step count.
    pub(crate) fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 200,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.learning_rate >= 0.0) || self.epochs < 1 || self.batch_size < 1 {
            return Err(ClassifierError::NumericFailure {
                detail: format!(
                    "bad train config: lr={}, epochs={}, batch_size={}",
                    self.learning_rate, self.epochs, self.batch_size
                ),
            });
        }
        Ok(())
    }
}

/// Per-epoch training statistics.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// A trained head together with its per-epoch trace.
pub struct FitResult {
    pub head: DenseHead,
    pub trace: Vec<EpochStats>,
}

// Substreams of the training seed, namespaced away from other modules.
const STREAM_INIT: u64 = 3 << 40;
const STREAM_SHUFFLE: u64 = (3 << 40) | 1;

/// Trains a head on labeled descriptors. The number of places is
/// `max(labels) + 1`. Deterministic given the seed: init, per-epoch
/// shuffling, and batch order are all derived from it.
pub fn fit(
    descriptors: &[BinaryDescriptor],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<FitResult, ClassifierError> {
    cfg.validate()?;
    if descriptors.is_empty() {
        return Err(ClassifierError::EmptyData);
    }
    if descriptors.len() != labels.len() {
        return Err(ClassifierError::ShapeMismatch {
            detail: format!("{} descriptors but {} labels", descriptors.len(), labels.len()),
        });
    }
    let inputs = descriptors[0].len();
    if descriptors.iter().any(|d| d.len() != inputs) {
        return Err(ClassifierError::ShapeMismatch {
            detail: "descriptors have mixed bit lengths".into(),
        });
    }
    let places = labels.iter().max().unwrap() + 1;

    let mut init_rng = Rng::for_stream(cfg.seed, STREAM_INIT);
    let mut head = DenseHead::init(places, inputs, &mut init_rng);
    let mut adam_w = Adam::new(head.weights.len(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut adam_b = Adam::new(head.bias.len(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut shuffle_rng = Rng::for_stream(cfg.seed, STREAM_SHUFFLE);

    let mut indices: Vec<usize> = (0..descriptors.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut indices);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<(&BinaryDescriptor, usize)> =
                chunk.iter().map(|&i| (&descriptors[i], labels[i])).collect();
            let (loss, grads) = loss_and_grad(&head, &batch)?;
            if !loss.is_finite() {
                return Err(ClassifierError::NumericFailure {
                    detail: format!("non-finite loss at epoch {epoch}"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            adam_w.step(&mut head.weights, &grads.weights, cfg.learning_rate, step);
            adam_b.step(&mut head.bias, &grads.bias, cfg.learning_rate, step);
        }
        let correct = descriptors
            .iter()
            .zip(labels)
            .filter(|(d, &label)| {
                forward(&head, d).map(|s| s.argmax() == label).unwrap_or(false)
            })
            .count();
        trace.push(EpochStats {
            epoch,
            loss: epoch_loss / descriptors.len() as f64,
            accuracy: correct as f64 / descriptors.len() as f64,
        });
    }
    Ok(FitResult { head, trace })
}

/// Which model a footprint report describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    FlyNet,
    FlyNetRnn,
    FlyNetCann,
}

impl ModelKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flynet" => Some(ModelKind::FlyNet),
            "flynet_rnn" => Some(ModelKind::FlyNetRnn),
            "flynet_cann" => Some(ModelKind::FlyNetCann),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::FlyNet => "flynet",
            ModelKind::FlyNetRnn => "flynet_rnn",
            ModelKind::FlyNetCann => "flynet_cann",
        }
    }
}

/// Layer/parameter/neuron counts for one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub layers: u32,
    /// Weights plus biases (and per-unit kernel weights for the CANN).
    pub params: u64,
    /// Same count without bias terms.
    pub weights_only: u64,
    pub neurons: u32,
}

/// Footprint at explicit dimensions.
///
/// Counting convention: FlyNet is the FNA layer plus the FC head (its
/// weights and bias). FlyNet+CANN adds the attractor layer, whose
/// local-excitation kernel is counted per unit (`units * kernel_width`
/// pre-assigned weights, nothing trainable). FlyNet+RNN reports the
/// recurrent block that sits on the score vector: input, recurrent, and
/// output weights plus their biases; the shared FC head is reported under
/// the single-frame model and not double-counted here.
pub fn footprint_for(
    kind: ModelKind,
    fna_units: usize,
    places: usize,
    rnn_hidden: usize,
    cann_units: usize,
    cann_kernel_width: usize,
) -> Footprint {
    let head_weights = (fna_units * places) as u64;
    let head_params = head_weights + places as u64;
    match kind {
        ModelKind::FlyNet => Footprint {
            layers: 2,
            params: head_params,
            weights_only: head_weights,
            neurons: (fna_units + places) as u32,
        },
        ModelKind::FlyNetRnn => {
            let weights = (places * rnn_hidden + rnn_hidden * rnn_hidden + rnn_hidden * places) as u64;
            Footprint {
                layers: 4,
                params: weights + (rnn_hidden + places) as u64,
                weights_only: weights,
                neurons: (fna_units + places + rnn_hidden + places) as u32,
            }
        }
        ModelKind::FlyNetCann => {
            let kernel = (cann_units * cann_kernel_width) as u64;
            Footprint {
                layers: 3,
                params: head_params + kernel,
                weights_only: head_weights + kernel,
                neurons: (fna_units + places + cann_units) as u32,
            }
        }
    }
}

/// Footprint at the default dimensions (64-unit FNA, 1000 places, 512
/// recurrent units, 1002 attractor units, kernel width 7).
pub fn count_footprint(kind: ModelKind) -> Footprint {
    footprint_for(kind, 64, 1000, 512, 1002, 7)
}

const FNHD_MAGIC: &[u8; 4] = b"FNHD";
const FNHD_VERSION: u32 = 1;

/// Writes the `FNHD` head checkpoint: magic, version u32, places u32,
/// inputs u32, then row-major weights and bias as little-endian f64.
pub fn write_head(path: &Path, head: &DenseHead) -> Result<(), ClassifierError> {
    let mut buf = Vec::with_capacity(16 + 8 * (head.weights.len() + head.bias.len()));
    buf.extend_from_slice(FNHD_MAGIC);
    buf.extend_from_slice(&FNHD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(head.places as u32).to_le_bytes());
    buf.extend_from_slice(&(head.inputs as u32).to_le_bytes());
    for w in &head.weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    for b in &head.bias {
        buf.extend_from_slice(&b.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| ClassifierError::Io { path: path.to_path_buf(), source: e })
}

/// Reads an `FNHD` head checkpoint.
pub fn read_head(path: &Path) -> Result<DenseHead, ClassifierError> {
    let mut file = fs::File::open(path).map_err(|e| ClassifierError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| ClassifierError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if buf.len() < 16 || &buf[0..4] != FNHD_MAGIC {
        return Err(ClassifierError::Format { detail: "bad magic or truncated header".into() });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FNHD_VERSION {
        return Err(ClassifierError::Format { detail: format!("unsupported version {version}") });
    }
    let places = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let inputs = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 8 * (places * inputs + places);
    if buf.len() != expected {
        return Err(ClassifierError::Format {
            detail: format!("expected {expected} bytes, found {}", buf.len()),
        });
    }
    let read_f64s = |offset: usize, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| {
                let at = offset + i * 8;
                f64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
            })
            .collect::<Vec<_>>()
    };
    let weights = read_f64s(16, places * inputs);
    let bias = read_f64s(16 + 8 * places * inputs, places);
    DenseHead::from_parts(weights, bias, places, inputs)
}

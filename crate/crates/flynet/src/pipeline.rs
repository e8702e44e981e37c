//! Configuration files and end-to-end pipeline orchestration.
//!
//! The config format is flat `section.key=value` text (see
//! [`PipelineConfig::parse`]); unknown keys are rejected so typos cannot
//! silently fall back to defaults. A canonical serialization of the resolved
//! config is hashed (FNV-1a 64) and stamped into every text artifact a run
//! writes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cann::{cann_run, CannConfig, CannError};
use crate::classifier::{
    fit, footprint_for, forward, write_head, ClassifierError, DenseHead, ModelKind, ScoreVector,
    TrainConfig,
};
use crate::dataset::{
    apply_appearance, generate_synthetic, ingest_directory, read_ground_truth, Appearance,
    DatasetError, SynthConfig, Traverse,
};
use crate::encoder::{
    build_projection, encode_traverse, write_descriptors, BinaryDescriptor, EncoderConfig,
    EncoderError,
};
use crate::eval::{
    auc, pr_curve, timing_report, write_pr_csv, write_pr_svg, write_summary_csv, EvalError,
    MatchRecord, SummaryRow, TimingReport, Tolerance,
};
use crate::rng::Rng;
use crate::rnn::{
    fit_rnn, rnn_match, write_rnn, RnnError, RnnModel, RnnTrainConfig, TrainingSequence,
};
use crate::seqslam::{
    contrast_enhance, difference_matrix, match_queries, write_matrix, FeatureSource, MatrixSource,
    SeqSlamConfig, SeqSlamError,
};

/// Substream namespace for RNN training augmentation copies.
const STREAM_AUGMENT: u64 = 5 << 40;

#[derive(Debug)]
pub enum PipelineError {
    /// Bad configuration — exit code 2.
    Config { detail: String },
    /// Unusable input data or artifacts — exit code 3.
    Data { detail: String },
    /// Numerical breakdown (non-finite values) — exit code 4.
    Numeric { detail: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Data { .. } => 3,
            PipelineError::Numeric { .. } => 4,
        }
    }

    fn config(detail: impl Into<String>) -> Self {
        PipelineError::Config { detail: detail.into() }
    }

    fn data(detail: impl Into<String>) -> Self {
        PipelineError::Data { detail: detail.into() }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Config { detail } => write!(f, "config error: {detail}"),
            PipelineError::Data { detail } => write!(f, "data error: {detail}"),
            PipelineError::Numeric { detail } => write!(f, "numeric error: {detail}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<DatasetError> for PipelineError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidConfig { .. } => PipelineError::config(e.to_string()),
            _ => PipelineError::data(e.to_string()),
        }
    }
}

impl From<EncoderError> for PipelineError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::InvalidConfig { .. } => PipelineError::config(e.to_string()),
            _ => PipelineError::data(e.to_string()),
        }
    }
}

impl From<ClassifierError> for PipelineError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::NumericFailure { .. } => {
                PipelineError::Numeric { detail: e.to_string() }
            }
            _ => PipelineError::data(e.to_string()),
        }
    }
}

impl From<SeqSlamError> for PipelineError {
    fn from(e: SeqSlamError) -> Self {
        match e {
            SeqSlamError::InvalidConfig { .. } | SeqSlamError::SequenceTooLong { .. } => {
                PipelineError::config(e.to_string())
            }
            _ => PipelineError::data(e.to_string()),
        }
    }
}

impl From<RnnError> for PipelineError {
    fn from(e: RnnError) -> Self {
        match e {
            RnnError::NumericFailure { .. } => PipelineError::Numeric { detail: e.to_string() },
            _ => PipelineError::data(e.to_string()),
        }
    }
}

impl From<CannError> for PipelineError {
    fn from(e: CannError) -> Self {
        match e {
            CannError::InvalidConfig { .. } => PipelineError::config(e.to_string()),
            _ => PipelineError::data(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::data(e.to_string())
    }
}

/// Temporal filter applied on top of the single-frame classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    None,
    SeqSlam,
    Rnn,
    Cann,
}

impl FilterKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(FilterKind::None),
            "seqslam" => Some(FilterKind::SeqSlam),
            "rnn" => Some(FilterKind::Rnn),
            "cann" => Some(FilterKind::Cann),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::SeqSlam => "seqslam",
            FilterKind::Rnn => "rnn",
            FilterKind::Cann => "cann",
        }
    }

    fn method_name(&self) -> &'static str {
        match self {
            FilterKind::None => "flynet",
            FilterKind::SeqSlam => "flynet_seqslam",
            FilterKind::Rnn => "flynet_rnn",
            FilterKind::Cann => "flynet_cann",
        }
    }
}

/// Every knob of the pipeline, one section per module.
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub seqslam: SeqSlamConfig,
    pub matrix_source: MatrixSource,
    pub rnn_train: RnnTrainConfig,
    pub rnn_hidden: usize,
    /// Training copies of the reference for the RNN protocol: copy 0 is
    /// clean, the rest get the mild appearance transform.
    pub rnn_augment: usize,
    pub cann: CannConfig,
    pub synth: SynthConfig,
    pub tolerance: Tolerance,
    pub filter: FilterKind,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            seqslam: SeqSlamConfig::default(),
            matrix_source: MatrixSource::Scores,
            rnn_train: RnnTrainConfig::default(),
            rnn_hidden: 512,
            rnn_augment: 3,
            cann: CannConfig::default(),
            synth: SynthConfig::default(),
            tolerance: Tolerance { frames: 20 },
            filter: FilterKind::None,
        }
    }
}

impl PipelineConfig {
    /// Parses the flat `key=value` format. Lines are trimmed; empty lines
    /// and `#` comments are skipped; unknown keys and malformed values are
    /// errors.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| PipelineError::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value for {key}: {value:?}"))
        }
        match key {
            "filter" => {
                self.filter =
                    FilterKind::parse(value).ok_or(format!("bad value for filter: {value:?}"))?
            }
            "tolerance" => self.tolerance = Tolerance { frames: num(key, value)? },

            "encoder.m" => self.encoder.m = num(key, value)?,
            "encoder.n" => self.encoder.n = num(key, value)?,
            "encoder.sampling_ratio" => self.encoder.sampling_ratio = num(key, value)?,
            "encoder.wta_fraction" => self.encoder.wta_fraction = num(key, value)?,
            "encoder.seed" => self.encoder.seed = num(key, value)?,

            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.beta1" => self.train.adam_beta1 = num(key, value)?,
            "train.beta2" => self.train.adam_beta2 = num(key, value)?,
            "train.eps" => self.train.adam_eps = num(key, value)?,
            "train.epochs" => self.train.epochs = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,

            "seqslam.ds" => self.seqslam.ds = num(key, value)?,
            "seqslam.vmin" => self.seqslam.vmin = num(key, value)?,
            "seqslam.vmax" => self.seqslam.vmax = num(key, value)?,
            "seqslam.vstep" => self.seqslam.vstep = num(key, value)?,
            "seqslam.enhance_window" => self.seqslam.enhance_window = num(key, value)?,
            "seqslam.threshold" => self.seqslam.threshold = num(key, value)?,
            "seqslam.source" => {
                self.matrix_source = match value {
                    "scores" => MatrixSource::Scores,
                    "hamming" => MatrixSource::Hamming,
                    _ => return Err(format!("bad value for seqslam.source: {value:?}")),
                }
            }

            "rnn.hidden" => self.rnn_hidden = num(key, value)?,
            "rnn.augment" => self.rnn_augment = num(key, value)?,
            "rnn.learning_rate" => self.rnn_train.learning_rate = num(key, value)?,
            "rnn.beta1" => self.rnn_train.adam_beta1 = num(key, value)?,
            "rnn.beta2" => self.rnn_train.adam_beta2 = num(key, value)?,
            "rnn.eps" => self.rnn_train.adam_eps = num(key, value)?,
            "rnn.epochs" => self.rnn_train.epochs = num(key, value)?,
            "rnn.batch_size" => self.rnn_train.batch_size = num(key, value)?,
            "rnn.seed" => self.rnn_train.seed = num(key, value)?,
            "rnn.bptt_len" => self.rnn_train.bptt_len = num(key, value)?,
            "rnn.grad_clip" => self.rnn_train.grad_clip = num(key, value)?,

            "cann.num_units" => self.cann.num_units = num(key, value)?,
            "cann.kernel_radius" => self.cann.kernel_radius = num(key, value)?,
            "cann.kernel_sigma" => self.cann.kernel_sigma = num(key, value)?,
            "cann.input_gain" => self.cann.input_gain = num(key, value)?,
            "cann.inhibition" => self.cann.inhibition = num(key, value)?,
            "cann.shift_per_step" => self.cann.shift_per_step = num(key, value)?,
            "cann.wraparound" => {
                self.cann.wraparound = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(format!("bad value for cann.wraparound: {value:?}")),
                }
            }

            "synth.num_places" => self.synth.num_places = num(key, value)?,
            "synth.seed" => self.synth.seed = num(key, value)?,
            "synth.appearance" => {
                self.synth.appearance = Appearance::parse(value)
                    .ok_or(format!("bad value for synth.appearance: {value:?}"))?
            }
            "synth.viewpoint_jitter_px" => self.synth.viewpoint_jitter_px = num(key, value)?,
            "synth.noise_sigma" => self.synth.noise_sigma = num(key, value)?,
            "synth.occluder_count" => self.synth.occluder_count = num(key, value)?,

            _ => return Err(format!("unknown key: {key}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.encoder
            .validate()
            .map_err(|e| PipelineError::config(e.to_string()))?;
        self.seqslam
            .validate()
            .map_err(|e| PipelineError::config(e.to_string()))?;
        self.cann
            .validate()
            .map_err(|e| PipelineError::config(e.to_string()))?;
        if self.rnn_hidden == 0 {
            return Err(PipelineError::config("rnn.hidden must be >= 1"));
        }
        if self.rnn_augment == 0 {
            return Err(PipelineError::config("rnn.augment must be >= 1"));
        }
        Ok(())
    }

    /// Overrides every section seed with substreams of one master seed.
    pub fn reseed(&mut self, master: u64) {
        self.encoder.seed = crate::rng::substream(master, 1);
        self.train.seed = crate::rng::substream(master, 2);
        self.rnn_train.seed = crate::rng::substream(master, 3);
        self.synth.seed = crate::rng::substream(master, 4);
    }

    /// Canonical serialization: every key in a fixed order. Equal configs
    /// produce identical text (and so identical hashes).
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("filter={}\n", self.filter.name()));
        s.push_str(&format!("tolerance={}\n", self.tolerance.frames));
        s.push_str(&format!("encoder.m={}\n", self.encoder.m));
        s.push_str(&format!("encoder.n={}\n", self.encoder.n));
        s.push_str(&format!("encoder.sampling_ratio={}\n", self.encoder.sampling_ratio));
        s.push_str(&format!("encoder.wta_fraction={}\n", self.encoder.wta_fraction));
        s.push_str(&format!("encoder.seed={}\n", self.encoder.seed));
        s.push_str(&format!("train.learning_rate={}\n", self.train.learning_rate));
        s.push_str(&format!("train.beta1={}\n", self.train.adam_beta1));
        s.push_str(&format!("train.beta2={}\n", self.train.adam_beta2));
        s.push_str(&format!("train.eps={}\n", self.train.adam_eps));
        s.push_str(&format!("train.epochs={}\n", self.train.epochs));
        s.push_str(&format!("train.batch_size={}\n", self.train.batch_size));
        s.push_str(&format!("train.seed={}\n", self.train.seed));
        s.push_str(&format!("seqslam.ds={}\n", self.seqslam.ds));
        s.push_str(&format!("seqslam.vmin={}\n", self.seqslam.vmin));
        s.push_str(&format!("seqslam.vmax={}\n", self.seqslam.vmax));
        s.push_str(&format!("seqslam.vstep={}\n", self.seqslam.vstep));
        s.push_str(&format!("seqslam.enhance_window={}\n", self.seqslam.enhance_window));
        s.push_str(&format!("seqslam.threshold={}\n", self.seqslam.threshold));
        s.push_str(&format!(
            "seqslam.source={}\n",
            match self.matrix_source {
                MatrixSource::Scores => "scores",
                MatrixSource::Hamming => "hamming",
            }
        ));
        s.push_str(&format!("rnn.hidden={}\n", self.rnn_hidden));
        s.push_str(&format!("rnn.augment={}\n", self.rnn_augment));
        s.push_str(&format!("rnn.learning_rate={}\n", self.rnn_train.learning_rate));
        s.push_str(&format!("rnn.beta1={}\n", self.rnn_train.adam_beta1));
        s.push_str(&format!("rnn.beta2={}\n", self.rnn_train.adam_beta2));
        s.push_str(&format!("rnn.eps={}\n", self.rnn_train.adam_eps));
        s.push_str(&format!("rnn.epochs={}\n", self.rnn_train.epochs));
        s.push_str(&format!("rnn.batch_size={}\n", self.rnn_train.batch_size));
        s.push_str(&format!("rnn.seed={}\n", self.rnn_train.seed));
        s.push_str(&format!("rnn.bptt_len={}\n", self.rnn_train.bptt_len));
        s.push_str(&format!("rnn.grad_clip={}\n", self.rnn_train.grad_clip));
        s.push_str(&format!("cann.num_units={}\n", self.cann.num_units));
        s.push_str(&format!("cann.kernel_radius={}\n", self.cann.kernel_radius));
        s.push_str(&format!("cann.kernel_sigma={}\n", self.cann.kernel_sigma));
        s.push_str(&format!("cann.input_gain={}\n", self.cann.input_gain));
        s.push_str(&format!("cann.inhibition={}\n", self.cann.inhibition));
        s.push_str(&format!("cann.shift_per_step={}\n", self.cann.shift_per_step));
        s.push_str(&format!("cann.wraparound={}\n", self.cann.wraparound));
        s.push_str(&format!("synth.num_places={}\n", self.synth.num_places));
        s.push_str(&format!("synth.seed={}\n", self.synth.seed));
        s.push_str(&format!("synth.appearance={}\n", self.synth.appearance.name()));
        s.push_str(&format!("synth.viewpoint_jitter_px={}\n", self.synth.viewpoint_jitter_px));
        s.push_str(&format!("synth.noise_sigma={}\n", self.synth.noise_sigma));
        s.push_str(&format!("synth.occluder_count={}\n", self.synth.occluder_count));
        s
    }

    /// FNV-1a 64 hash of the canonical serialization, as fixed-width hex.
    pub fn hash(&self) -> String {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut h = OFFSET;
        for b in self.to_canonical_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
        format!("{h:016x}")
    }
}

/// Where a traverse comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraverseSource {
    /// `synthetic:` — role (reference/query) decided by argument position.
    Synthetic,
    /// `synthetic:reference`
    SyntheticReference,
    /// `synthetic:query`
    SyntheticQuery,
    Directory(PathBuf),
}

impl TraverseSource {
    pub fn parse(s: &str) -> Self {
        match s {
            "synthetic" | "synthetic:" => TraverseSource::Synthetic,
            "synthetic:reference" | "synthetic:ref" => TraverseSource::SyntheticReference,
            "synthetic:query" => TraverseSource::SyntheticQuery,
            other => TraverseSource::Directory(PathBuf::from(other)),
        }
    }

    fn is_synthetic(&self) -> bool {
        !matches!(self, TraverseSource::Directory(_))
    }
}

/// Resolves a single traverse (for the `encode` subcommand).
pub fn resolve_traverse(cfg: &PipelineConfig, source: &TraverseSource) -> Result<Traverse, PipelineError> {
    match source {
        TraverseSource::Synthetic | TraverseSource::SyntheticReference => {
            Ok(generate_synthetic(&cfg.synth)?.0)
        }
        TraverseSource::SyntheticQuery => Ok(generate_synthetic(&cfg.synth)?.1),
        TraverseSource::Directory(dir) => Ok(ingest_directory(dir)?),
    }
}

/// Scores every descriptor against the head.
pub fn score_descriptors(
    head: &DenseHead,
    descriptors: &[BinaryDescriptor],
) -> Result<Vec<ScoreVector>, PipelineError> {
    descriptors
        .iter()
        .map(|d| forward(head, d).map_err(PipelineError::from))
        .collect()
}

/// The RNN training protocol: `rnn_augment` copies of the reference
/// traverse, encoded and scored through the trained head, labeled with the
/// reference place indices. Copy 0 is clean; the others alternate mild and
/// extreme appearance transforms at the synth noise level, so the training
/// scores include the diffuse, sometimes-wrong observations the filter must
/// clean up at query time.
pub fn rnn_training_sequences(
    cfg: &PipelineConfig,
    reference: &Traverse,
    projection: &crate::encoder::ProjectionMatrix,
    head: &DenseHead,
) -> Result<Vec<TrainingSequence>, PipelineError> {
    let mut sequences = Vec::with_capacity(cfg.rnn_augment);
    for copy in 0..cfg.rnn_augment {
        let frames: Vec<crate::dataset::Frame> = if copy == 0 {
            reference.frames.clone()
        } else {
            let mut rng = Rng::for_stream(cfg.rnn_train.seed, STREAM_AUGMENT + copy as u64);
            let appearance = if copy % 2 == 1 { Appearance::Mild } else { Appearance::Extreme };
            let occluders = if appearance == Appearance::Extreme {
                cfg.synth.occluder_count
            } else {
                0
            };
            reference
                .frames
                .iter()
                .map(|f| apply_appearance(f, appearance, cfg.synth.noise_sigma, occluders, &mut rng))
                .collect()
        };
        let traverse = Traverse::new(frames, reference.labels.clone(), "rnn-train")?;
        let descriptors = encode_traverse(projection, &traverse, &cfg.encoder)?;
        let scores = score_descriptors(head, &descriptors)?;
        sequences.push(TrainingSequence {
            inputs: scores.iter().map(|s| s.scores().to_vec()).collect(),
            labels: reference.labels.clone(),
        });
    }
    Ok(sequences)
}

/// Matches query scores through the configured filter. Returns one
/// `(prediction, score)` per query and, for the RNN filter, the trained
/// model.
#[allow(clippy::too_many_arguments)]
fn run_filter(
    cfg: &PipelineConfig,
    reference: &Traverse,
    projection: &crate::encoder::ProjectionMatrix,
    head: &DenseHead,
    ref_descriptors: &[BinaryDescriptor],
    query_descriptors: &[BinaryDescriptor],
    query_scores: &[ScoreVector],
    out_dir: Option<&Path>,
    hash: &str,
) -> Result<(Vec<(Option<usize>, f64)>, Option<RnnModel>), PipelineError> {
    match cfg.filter {
        FilterKind::None => Ok((
            query_scores
                .iter()
                .map(|s| (Some(s.argmax()), s.peak()))
                .collect(),
            None,
        )),
        FilterKind::SeqSlam => {
            let matrix = match cfg.matrix_source {
                MatrixSource::Scores => difference_matrix(FeatureSource::Scores(query_scores))?,
                MatrixSource::Hamming => difference_matrix(FeatureSource::Hamming {
                    reference: ref_descriptors,
                    query: query_descriptors,
                })?,
            };
            let enhanced = contrast_enhance(&matrix, cfg.seqslam.enhance_window);
            if let Some(dir) = out_dir {
                write_matrix(&dir.join("diff_matrix.bin"), &enhanced, Some(&format!("config {hash}")))?;
            }
            let matches = match_queries(&enhanced, &cfg.seqslam)?;
            Ok((matches.into_iter().map(|m| (m.prediction, m.score)).collect(), None))
        }
        FilterKind::Rnn => {
            let sequences = rnn_training_sequences(cfg, reference, projection, head)?;
            let model = fit_rnn(&sequences, cfg.rnn_hidden, &cfg.rnn_train)?;
            let inputs: Vec<Vec<f64>> =
                query_scores.iter().map(|s| s.scores().to_vec()).collect();
            // Match in consecutive bptt_len windows so the hidden state
            // stays on the distribution the truncated training saw.
            let mut matches = Vec::with_capacity(inputs.len());
            for start in (0..inputs.len()).step_by(cfg.rnn_train.bptt_len) {
                let end = (start + cfg.rnn_train.bptt_len).min(inputs.len());
                matches.extend(rnn_match(&model, &inputs[start..end])?);
            }
            Ok((
                matches.into_iter().map(|(p, s)| (Some(p), s)).collect(),
                Some(model),
            ))
        }
        FilterKind::Cann => {
            let cann_cfg = CannConfig {
                num_units: reference.len() + 2,
                ..cfg.cann.clone()
            };
            let inputs: Vec<&[f64]> = query_scores.iter().map(|s| s.scores()).collect();
            let readout = cann_run(&inputs, &cann_cfg)?;
            Ok((readout.into_iter().map(|(p, s)| (Some(p), s)).collect(), None))
        }
    }
}

/// Everything a finished run reports.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub method: String,
    pub auc: f64,
    pub timing: TimingReport,
    pub records: Vec<MatchRecord>,
    pub config_hash: String,
}

/// Writes `query_index,predicted_ref,score,gt_ref` (empty prediction =
/// unmatchable).
pub fn write_matches_csv(
    path: &Path,
    records: &[MatchRecord],
    comment: Option<&str>,
) -> Result<(), PipelineError> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("query_index,predicted_ref,score,gt_ref\n");
    for r in records {
        let predicted = r.predicted.map(|p| p.to_string()).unwrap_or_default();
        let score = if r.score.is_finite() { r.score.to_string() } else { String::new() };
        out.push_str(&format!("{},{},{},{}\n", r.query_index, predicted, score, r.gt_ref));
    }
    fs::write(path, out).map_err(|e| PipelineError::data(format!("cannot write {}: {e}", path.display())))
}

/// Reads a `matches.csv` written by [`write_matches_csv`].
pub fn read_matches_csv(path: &Path) -> Result<Vec<MatchRecord>, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("query_index") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(PipelineError::data(format!("bad matches line: {line}")));
        }
        let parse_usize = |s: &str| -> Result<usize, PipelineError> {
            s.parse().map_err(|_| PipelineError::data(format!("bad matches line: {line}")))
        };
        let predicted = if cols[1].is_empty() { None } else { Some(parse_usize(cols[1])?) };
        let score = if cols[2].is_empty() {
            f64::NEG_INFINITY
        } else {
            cols[2]
                .parse()
                .map_err(|_| PipelineError::data(format!("bad matches line: {line}")))?
        };
        records.push(MatchRecord {
            query_index: parse_usize(cols[0])?,
            predicted,
            score,
            gt_ref: parse_usize(cols[3])?,
        });
    }
    if records.is_empty() {
        return Err(PipelineError::data(format!("no records in {}", path.display())));
    }
    Ok(records)
}

/// Footprint of the configured method at the run's actual dimensions; the
/// SeqSLAM filter is algorithmic, so it reports the single-frame network.
fn run_footprint(cfg: &PipelineConfig, places: usize) -> crate::classifier::Footprint {
    let kind = match cfg.filter {
        FilterKind::None | FilterKind::SeqSlam => ModelKind::FlyNet,
        FilterKind::Rnn => ModelKind::FlyNetRnn,
        FilterKind::Cann => ModelKind::FlyNetCann,
    };
    footprint_for(
        kind,
        cfg.encoder.n,
        places,
        cfg.rnn_hidden,
        places + 2,
        2 * cfg.cann.kernel_radius + 1,
    )
}

/// Shared state after the encode/train stages.
struct Prepared {
    reference: Traverse,
    query: Traverse,
    projection: crate::encoder::ProjectionMatrix,
    ref_descriptors: Vec<BinaryDescriptor>,
    query_descriptors: Vec<BinaryDescriptor>,
    head: DenseHead,
    query_scores: Vec<ScoreVector>,
    gt: Vec<usize>,
    feature_s: f64,
}

/// Resolves traverses and ground truth, encodes, and obtains a head (the
/// override, or one trained on the reference descriptors).
fn prepare(
    cfg: &PipelineConfig,
    ref_source: &TraverseSource,
    query_source: &TraverseSource,
    ground_truth: Option<&Path>,
    head_override: Option<DenseHead>,
) -> Result<Prepared, PipelineError> {
    if ref_source.is_synthetic() != query_source.is_synthetic() {
        return Err(PipelineError::config(
            "reference and query must both be synthetic or both be directories",
        ));
    }
    let (reference, query) = if ref_source.is_synthetic() {
        if matches!(ref_source, TraverseSource::SyntheticQuery)
            || matches!(query_source, TraverseSource::SyntheticReference)
        {
            return Err(PipelineError::config("swapped synthetic reference/query roles"));
        }
        generate_synthetic(&cfg.synth)?
    } else {
        let (TraverseSource::Directory(ref_dir), TraverseSource::Directory(query_dir)) =
            (ref_source, query_source)
        else {
            unreachable!()
        };
        (ingest_directory(ref_dir)?, ingest_directory(query_dir)?)
    };
    if reference.is_empty() || query.is_empty() {
        return Err(PipelineError::data("empty traverse"));
    }

    // Ground truth: explicit file, or identity alignment.
    let gt: Vec<usize> = match ground_truth {
        Some(path) => {
            let pairs = read_ground_truth(path)?;
            let mut gt = vec![usize::MAX; query.len()];
            for (q, r) in pairs {
                if q < gt.len() {
                    gt[q] = r;
                }
            }
            if let Some(missing) = gt.iter().position(|&r| r == usize::MAX) {
                return Err(PipelineError::data(format!(
                    "ground truth is missing query {missing}"
                )));
            }
            gt
        }
        None => (0..query.len()).map(|q| q.min(reference.len() - 1)).collect(),
    };

    let projection = build_projection(&cfg.encoder)?;
    let ref_descriptors = encode_traverse(&projection, &reference, &cfg.encoder)?;
    let feature_start = Instant::now();
    let query_descriptors = encode_traverse(&projection, &query, &cfg.encoder)?;
    let head = match head_override {
        Some(head) => {
            if head.inputs() != cfg.encoder.n {
                return Err(PipelineError::data(format!(
                    "head expects {}-bit descriptors, encoder produces {}",
                    head.inputs(),
                    cfg.encoder.n
                )));
            }
            head
        }
        None => fit(&ref_descriptors, &reference.labels, &cfg.train)?.head,
    };
    let query_scores = score_descriptors(&head, &query_descriptors)?;
    let feature_s = feature_start.elapsed().as_secs_f64();

    Ok(Prepared {
        reference,
        query,
        projection,
        ref_descriptors,
        query_descriptors,
        head,
        query_scores,
        gt,
        feature_s,
    })
}

fn records_from_predictions(
    predictions: &[(Option<usize>, f64)],
    gt: &[usize],
) -> Vec<MatchRecord> {
    predictions
        .iter()
        .enumerate()
        .map(|(q, &(predicted, score))| MatchRecord {
            query_index: q,
            predicted,
            score,
            gt_ref: gt[q],
        })
        .collect()
}

/// Encode + (train or reuse a head) + filter, writing `matches.csv` to
/// `out_path`. Backs the `match` subcommand.
pub fn match_stage(
    cfg: &PipelineConfig,
    ref_source: &TraverseSource,
    query_source: &TraverseSource,
    ground_truth: Option<&Path>,
    head_override: Option<DenseHead>,
    out_path: &Path,
) -> Result<Vec<MatchRecord>, PipelineError> {
    cfg.validate()?;
    let hash = cfg.hash();
    let prepared = prepare(cfg, ref_source, query_source, ground_truth, head_override)?;
    let (predictions, _) = run_filter(
        cfg,
        &prepared.reference,
        &prepared.projection,
        &prepared.head,
        &prepared.ref_descriptors,
        &prepared.query_descriptors,
        &prepared.query_scores,
        None,
        &hash,
    )?;
    let records = records_from_predictions(&predictions, &prepared.gt);
    write_matches_csv(out_path, &records, Some(&format!("config {hash}")))?;
    Ok(records)
}

/// End-to-end run: resolve traverses, encode, train the head, apply the
/// filter, evaluate, and write all artifacts into `out_dir`.
///
/// Wall-clock timings are returned in the outcome and echoed by the CLI,
/// but `summary.csv` carries zeros in the timing columns so that reruns of
/// one config are byte-identical (`bench` exists for real timings).
pub fn run_pipeline(
    cfg: &PipelineConfig,
    ref_source: &TraverseSource,
    query_source: &TraverseSource,
    ground_truth: Option<&Path>,
    out_dir: &Path,
) -> Result<RunOutcome, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| PipelineError::data(format!("cannot create {}: {e}", out_dir.display())))?;
    let hash = cfg.hash();
    let comment = format!("config {hash}");

    let prepared = prepare(cfg, ref_source, query_source, ground_truth, None)?;
    let Prepared {
        reference,
        query,
        projection,
        ref_descriptors,
        query_descriptors,
        head,
        query_scores,
        gt,
        feature_s,
    } = prepared;

    // Filter.
    let match_start = Instant::now();
    let (predictions, rnn_model) = run_filter(
        cfg,
        &reference,
        &projection,
        &head,
        &ref_descriptors,
        &query_descriptors,
        &query_scores,
        Some(out_dir),
        &hash,
    )?;
    let match_s = match_start.elapsed().as_secs_f64();

    let records = records_from_predictions(&predictions, &gt);

    // Evaluate and write artifacts.
    let curve = pr_curve(&records, cfg.tolerance)?;
    let area = auc(&curve);
    if !area.is_finite() {
        return Err(PipelineError::Numeric { detail: format!("non-finite AUC {area}") });
    }
    let timing = timing_report(feature_s, match_s, query.len());

    fs::write(
        out_dir.join("config.txt"),
        format!("# config {hash}\n{}", cfg.to_canonical_string()),
    )
    .map_err(|e| PipelineError::data(format!("cannot write config.txt: {e}")))?;
    write_descriptors(
        &out_dir.join("reference.fnad"),
        cfg.encoder.m as u32,
        cfg.encoder.n as u32,
        cfg.encoder.seed,
        &ref_descriptors,
    )?;
    write_descriptors(
        &out_dir.join("query.fnad"),
        cfg.encoder.m as u32,
        cfg.encoder.n as u32,
        cfg.encoder.seed,
        &query_descriptors,
    )?;
    write_head(&out_dir.join("head.fnhd"), &head)?;
    if let Some(model) = &rnn_model {
        write_rnn(&out_dir.join("model.fnrn"), model)?;
    }
    write_matches_csv(&out_dir.join("matches.csv"), &records, Some(&comment))?;
    write_pr_csv(&out_dir.join("pr.csv"), &curve, Some(&comment))?;
    write_pr_svg(&out_dir.join("pr.svg"), &curve, Some(&comment))?;
    let summary = SummaryRow {
        method: cfg.filter.method_name().to_string(),
        auc: area,
        timing: TimingReport { feature_s: 0.0, match_s: 0.0, avg_query_s: 0.0 },
        footprint: run_footprint(cfg, reference.len()),
    };
    write_summary_csv(&out_dir.join("summary.csv"), &[summary], Some(&comment))?;

    Ok(RunOutcome {
        method: cfg.filter.method_name().to_string(),
        auc: area,
        timing,
        records,
        config_hash: hash,
    })
}

/// Throughput measurement on synthetic data: encodes the query traverse and
/// runs the configured filter against an untrained (seeded) head, which has
/// the same matching cost as a trained one.
pub fn measure_throughput(cfg: &PipelineConfig) -> Result<TimingReport, PipelineError> {
    cfg.validate()?;
    let (reference, query) = generate_synthetic(&cfg.synth)?;
    let projection = build_projection(&cfg.encoder)?;
    let ref_descriptors = encode_traverse(&projection, &reference, &cfg.encoder)?;
    let mut init_rng = Rng::for_stream(cfg.train.seed, 6 << 40);
    let head = DenseHead::init(reference.len(), cfg.encoder.n, &mut init_rng);

    let feature_start = Instant::now();
    let query_descriptors = encode_traverse(&projection, &query, &cfg.encoder)?;
    let query_scores = score_descriptors(&head, &query_descriptors)?;
    let feature_s = feature_start.elapsed().as_secs_f64();

    let match_start = Instant::now();
    // The RNN filter would train here; throughput measurement uses an
    // untrained model of the configured size instead.
    if cfg.filter == FilterKind::Rnn {
        let mut rng = Rng::for_stream(cfg.rnn_train.seed, 6 << 40);
        let model = RnnModel::init(cfg.rnn_hidden, reference.len(), &mut rng);
        let inputs: Vec<Vec<f64>> = query_scores.iter().map(|s| s.scores().to_vec()).collect();
        rnn_match(&model, &inputs)?;
    } else {
        run_filter(
            cfg,
            &reference,
            &projection,
            &head,
            &ref_descriptors,
            &query_descriptors,
            &query_scores,
            None,
            "",
        )?;
    }
    let match_s = match_start.elapsed().as_secs_f64();
    Ok(timing_report(feature_s, match_s, query.len()))
}

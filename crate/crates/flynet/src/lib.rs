//! Compact visual place recognition (VPR).
//!
//! The pipeline enrolls a *reference* traverse (an ordered image sequence
//! along a route) and matches frames of a *query* traverse back to reference
//! places under appearance change:
//!
//! 1. [`dataset`] — image preprocessing (grayscale 32x64, `[0,1]`), traverse
//!    loading, and a seeded synthetic traverse generator for desk-scale
//!    benchmarks.
//! 2. [`encoder`] — FlyNet algorithm (FNA): sparse binary random projection
//!    followed by a winner-take-all threshold, producing fixed-weight binary
//!    descriptors.
//! 3. [`classifier`] — a linear place classifier over the descriptor, trained
//!    with softmax cross-entropy and Adam; its score vector is the
//!    observation consumed by the temporal filters.
//! 4. Temporal filters: [`seqslam`] (difference-matrix trajectory search),
//!    [`rnn`] (vanilla recurrent layer with BPTT training), and [`cann`]
//!    (1-d continuous attractor network with shift-and-copy path
//!    integration).
//! 5. [`eval`] — ground-truth matching, precision-recall/AUC, footprint and
//!    timing reports.
//! 6. [`pipeline`] — configuration files and end-to-end orchestration used
//!    by the `flynet` CLI.
//!
//! All randomness is seeded through [`rng`], a portable generator stack, so
//! runs are reproducible bit-for-bit.

pub mod cann;
pub mod classifier;
pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod pipeline;
pub mod rng;
pub mod rnn;
pub mod seqslam;

pub use cann::{CannConfig, CannState};
pub use classifier::{DenseHead, ScoreVector, TrainConfig};
pub use dataset::{Appearance, Frame, SynthConfig, Traverse};
pub use encoder::{BinaryDescriptor, EncoderConfig, ProjectionMatrix};
pub use eval::{MatchRecord, PrCurve, Tolerance};
pub use pipeline::{FilterKind, PipelineConfig};
pub use rnn::{RnnModel, RnnTrainConfig};
pub use seqslam::{DifferenceMatrix, SeqSlamConfig};

//! Sequence matching over a reference x query difference matrix.
//!
//! Queries are matched by sweeping constant-velocity trajectories of length
//! `ds` through the locally contrast-enhanced difference matrix and keeping
//! the reference row whose best trajectory is cheapest.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::classifier::ScoreVector;
use crate::encoder::{hamming_similarity, BinaryDescriptor};

/// Rows the runner-up must be away from the winner for the uniqueness test.
const UNIQUENESS_WINDOW: usize = 10;

#[derive(Debug)]
pub enum SeqSlamError {
    EmptyInput,
    InvalidConfig { detail: String },
    ShapeMismatch { detail: String },
    /// Query traverse shorter than the trajectory length.
    SequenceTooLong { ds: usize, queries: usize },
    Format { detail: String },
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl fmt::Display for SeqSlamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqSlamError::EmptyInput => write!(f, "empty feature input"),
            SeqSlamError::InvalidConfig { detail } => write!(f, "invalid seqslam config: {detail}"),
            SeqSlamError::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            SeqSlamError::SequenceTooLong { ds, queries } => write!(
                f,
                "sequence length {ds} exceeds the {queries} query frames; use a shorter ds"
            ),
            SeqSlamError::Format { detail } => write!(f, "bad matrix file: {detail}"),
            SeqSlamError::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for SeqSlamError {}

/// Where a difference matrix's entries came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixSource {
    /// `d[r][q] = 1 - scores_q[r]` from classifier score vectors.
    Scores,
    /// `d[r][q] = 1 - hamming_similarity(ref_r, query_q)` from raw codes.
    Hamming,
}

/// Features the matrix is built from. In scores mode the reference places
/// are implicit in the classifier's output dimension.
pub enum FeatureSource<'a> {
    Scores(&'a [ScoreVector]),
    Hamming {
        reference: &'a [BinaryDescriptor],
        query: &'a [BinaryDescriptor],
    },
}

/// Reference x query dissimilarities; row = reference place, column = query
/// frame. Entries are in `[0,1]` before enhancement.
#[derive(Clone, Debug)]
pub struct DifferenceMatrix {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    source: MatrixSource,
}

impl DifferenceMatrix {
    pub fn from_values(
        values: Vec<f64>,
        rows: usize,
        cols: usize,
        source: MatrixSource,
    ) -> Result<Self, SeqSlamError> {
        if values.len() != rows * cols {
            return Err(SeqSlamError::ShapeMismatch {
                detail: format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, values.len()),
            });
        }
        Ok(Self { values, rows, cols, source })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source(&self) -> MatrixSource {
        self.source
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Trajectory search settings.
#[derive(Clone, Debug)]
pub struct SeqSlamConfig {
    pub ds: usize,
    pub vmin: f64,
    pub vmax: f64,
    pub vstep: f64,
    pub enhance_window: usize,
    pub threshold: f64,
}

impl Default for SeqSlamConfig {
    fn default() -> Self {
        Self { ds: 20, vmin: 0.8, vmax: 1.2, vstep: 0.1, enhance_window: 10, threshold: 1.0 }
    }
}

impl SeqSlamConfig {
    pub fn validate(&self) -> Result<(), SeqSlamError> {
        let fail = |detail: String| Err(SeqSlamError::InvalidConfig { detail });
        if self.ds < 2 {
            return fail(format!("ds must be >= 2, got {}", self.ds));
        }
        if !(self.vmin <= self.vmax) {
            return fail(format!("vmin {} > vmax {}", self.vmin, self.vmax));
        }
        if !(self.vstep > 0.0) {
            return fail(format!("vstep must be > 0, got {}", self.vstep));
        }
        if self.enhance_window < 2 {
            return fail(format!("enhance_window must be >= 2, got {}", self.enhance_window));
        }
        if !(self.threshold >= 0.0) {
            return fail(format!("threshold must be >= 0, got {}", self.threshold));
        }
        Ok(())
    }

    fn velocities(&self) -> Vec<f64> {
        let count = ((self.vmax - self.vmin) / self.vstep + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.vmin + i as f64 * self.vstep).collect()
    }
}

/// Builds the difference matrix for the chosen feature source.
pub fn difference_matrix(features: FeatureSource) -> Result<DifferenceMatrix, SeqSlamError> {
    match features {
        FeatureSource::Scores(scores) => {
            if scores.is_empty() || scores[0].is_empty() {
                return Err(SeqSlamError::EmptyInput);
            }
            let rows = scores[0].len();
            let cols = scores.len();
            if let Some(bad) = scores.iter().find(|s| s.len() != rows) {
                return Err(SeqSlamError::ShapeMismatch {
                    detail: format!("score vectors of length {} and {}", rows, bad.len()),
                });
            }
            let mut values = vec![0.0; rows * cols];
            for (q, s) in scores.iter().enumerate() {
                for (r, &p) in s.scores().iter().enumerate() {
                    values[r * cols + q] = 1.0 - p;
                }
            }
            DifferenceMatrix::from_values(values, rows, cols, MatrixSource::Scores)
        }
        FeatureSource::Hamming { reference, query } => {
            if reference.is_empty() || query.is_empty() {
                return Err(SeqSlamError::EmptyInput);
            }
            let rows = reference.len();
            let cols = query.len();
            let mut values = vec![0.0; rows * cols];
            for (r, rd) in reference.iter().enumerate() {
                for (q, qd) in query.iter().enumerate() {
                    let sim = hamming_similarity(rd, qd).map_err(|e| {
                        SeqSlamError::ShapeMismatch { detail: e.to_string() }
                    })?;
                    values[r * cols + q] = 1.0 - sim;
                }
            }
            DifferenceMatrix::from_values(values, rows, cols, MatrixSource::Hamming)
        }
    }
}

/// Local contrast enhancement: per column, each entry is standardized
/// against the mean and population std of the `2*(window/2)+1` rows centered
/// on it (clamped at the matrix edges): `(d - mu) / (sigma + 1e-12)`.
pub fn contrast_enhance(d: &DifferenceMatrix, window: usize) -> DifferenceMatrix {
    let radius = window / 2;
    let rows = d.rows;
    let cols = d.cols;
    let mut values = vec![0.0; rows * cols];
    for q in 0..cols {
        for i in 0..rows {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(rows - 1);
            let count = (hi - lo + 1) as f64;
            // Work on offsets from the center entry so constant windows come
            // out exactly zero.
            let base = d.get(i, q);
            let mut mean_delta = 0.0;
            for r in lo..=hi {
                mean_delta += d.get(r, q) - base;
            }
            mean_delta /= count;
            let mut var = 0.0;
            for r in lo..=hi {
                let delta = (d.get(r, q) - base) - mean_delta;
                var += delta * delta;
            }
            let sigma = (var / count).sqrt();
            values[i * cols + q] = -mean_delta / (sigma + 1e-12);
        }
    }
    DifferenceMatrix { values, rows, cols, source: d.source }
}

/// One query's match: the winning reference row (or none for warm-up /
/// rejected queries) and a higher-is-better confidence score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryMatch {
    pub prediction: Option<usize>,
    pub score: f64,
}

/// Trajectory search. For each query column `q >= ds-1` and reference row
/// `r`, the cost is the minimum over the velocity sweep of
/// `sum_t D[round(r - v*t)][q - t]` for `t = 0..ds-1` (rows clamped); the
/// prediction is the argmin row and the score its negated cost. Earlier
/// queries have no full trajectory and are unmatchable. When
/// `threshold > 1`, a winner whose positive cost is not beaten by a factor
/// `threshold` by every row further than 10 rows away is rejected as
/// ambiguous.
pub fn match_queries(
    enhanced: &DifferenceMatrix,
    cfg: &SeqSlamConfig,
) -> Result<Vec<QueryMatch>, SeqSlamError> {
    cfg.validate()?;
    if enhanced.cols < cfg.ds {
        return Err(SeqSlamError::SequenceTooLong { ds: cfg.ds, queries: enhanced.cols });
    }
    let velocities = cfg.velocities();
    let rows = enhanced.rows;
    let mut results = Vec::with_capacity(enhanced.cols);
    let mut costs = vec![0.0f64; rows];
    for q in 0..enhanced.cols {
        if q + 1 < cfg.ds {
            results.push(QueryMatch { prediction: None, score: f64::NEG_INFINITY });
            continue;
        }
        for (r, cost) in costs.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for &v in &velocities {
                let mut total = 0.0;
                for t in 0..cfg.ds {
                    let row = (r as f64 - v * t as f64).round().clamp(0.0, rows as f64 - 1.0);
                    total += enhanced.get(row as usize, q - t);
                }
                if total < best {
                    best = total;
                }
            }
            *cost = best;
        }
        let mut best_row = 0;
        for r in 1..rows {
            if costs[r] < costs[best_row] {
                best_row = r;
            }
        }
        let c1 = costs[best_row];
        let runner_up = costs
            .iter()
            .enumerate()
            .filter(|(r, _)| r.abs_diff(best_row) > UNIQUENESS_WINDOW)
            .map(|(_, &c)| c)
            .fold(f64::INFINITY, f64::min);
        // Ratio test only applies to positive costs; the default threshold
        // of 1 never rejects (the runner-up cannot beat the minimum).
        let ambiguous = c1 > 0.0 && runner_up.is_finite() && runner_up < cfg.threshold * c1;
        if ambiguous {
            results.push(QueryMatch { prediction: None, score: f64::NEG_INFINITY });
        } else {
            results.push(QueryMatch { prediction: Some(best_row), score: -c1 });
        }
    }
    Ok(results)
}

/// Writes a matrix for offline inspection: an optional `# `-comment line,
/// a `rows cols` text line, then row-major little-endian f32 values.
pub fn write_matrix(
    path: &Path,
    d: &DifferenceMatrix,
    comment: Option<&str>,
) -> Result<(), SeqSlamError> {
    let mut buf = Vec::with_capacity(32 + 4 * d.values.len());
    if let Some(c) = comment {
        buf.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    buf.extend_from_slice(format!("{} {}\n", d.rows, d.cols).as_bytes());
    for &v in &d.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| SeqSlamError::Io { path: path.to_path_buf(), source: e })
}

/// Reads a matrix written by [`write_matrix`]. The source tag is not stored;
/// the result is marked [`MatrixSource::Scores`].
pub fn read_matrix(path: &Path) -> Result<DifferenceMatrix, SeqSlamError> {
    let mut file = fs::File::open(path).map_err(|e| SeqSlamError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| SeqSlamError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut offset = 0;
    let mut read_line = || -> Result<String, SeqSlamError> {
        let end = buf[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(SeqSlamError::Format { detail: "missing header line".into() })?;
        let line = String::from_utf8_lossy(&buf[offset..offset + end]).into_owned();
        offset += end + 1;
        Ok(line)
    };
    let mut header = read_line()?;
    if header.starts_with('#') {
        header = read_line()?;
    }
    let mut parts = header.split_whitespace();
    let parse = |s: Option<&str>| -> Result<usize, SeqSlamError> {
        s.and_then(|v| v.parse().ok())
            .ok_or(SeqSlamError::Format { detail: format!("bad header: {header}") })
    };
    let rows = parse(parts.next())?;
    let cols = parse(parts.next())?;
    if buf.len() - offset != rows * cols * 4 {
        return Err(SeqSlamError::Format {
            detail: format!("expected {} payload bytes, found {}", rows * cols * 4, buf.len() - offset),
        });
    }
    let values = (0..rows * cols)
        .map(|i| {
            let at = offset + i * 4;
            f32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as f64
        })
        .collect();
    DifferenceMatrix::from_values(values, rows, cols, MatrixSource::Scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BinaryDescriptor;

    fn one_hot_scores(hot: usize, len: usize) -> ScoreVector {
        let mut v = vec![0.0; len];
        v[hot] = 1.0;
        ScoreVector::new(v)
    }

    #[test]
    fn hamming_matrix_has_zero_diagonal_for_identical_lists() {
        let descs: Vec<BinaryDescriptor> = (0..4)
            .map(|i| BinaryDescriptor::from_set_bits(&[i, i + 4], 8))
            .collect();
        let d = difference_matrix(FeatureSource::Hamming { reference: &descs, query: &descs }).unwrap();
        for i in 0..4 {
            assert_eq!(d.get(i, i), 0.0);
        }
        assert_eq!(d.source(), MatrixSource::Hamming);
    }

    #[test]
    fn one_hot_score_column() {
        let scores = vec![one_hot_scores(3, 6)];
        let d = difference_matrix(FeatureSource::Scores(&scores)).unwrap();
        assert_eq!(d.rows(), 6);
        assert_eq!(d.cols(), 1);
        for r in 0..6 {
            let want = if r == 3 { 0.0 } else { 1.0 };
            assert_eq!(d.get(r, 0), want);
        }
    }

    #[test]
    fn hamming_matrix_matches_pairwise_brute_force() {
        let reference = vec![
            BinaryDescriptor::from_set_bits(&[0, 1, 2, 3], 8),
            BinaryDescriptor::from_set_bits(&[4, 5, 6, 7], 8),
            BinaryDescriptor::from_set_bits(&[0, 2, 4, 6], 8),
        ];
        let query = vec![
            BinaryDescriptor::from_set_bits(&[0, 1, 2, 3], 8),
            BinaryDescriptor::from_set_bits(&[1, 3, 5, 7], 8),
            BinaryDescriptor::from_set_bits(&[0, 1, 6, 7], 8),
        ];
        let d = difference_matrix(FeatureSource::Hamming { reference: &reference, query: &query }).unwrap();
        for (r, rd) in reference.iter().enumerate() {
            for (q, qd) in query.iter().enumerate() {
                let mut differing = 0;
                for bit in 0..8 {
                    if rd.bit(bit) != qd.bit(bit) {
                        differing += 1;
                    }
                }
                assert_eq!(d.get(r, q), differing as f64 / 8.0);
            }
        }
    }

    #[test]
    fn matrices_are_in_unit_range_before_enhancement() {
        let scores: Vec<ScoreVector> = (0..5).map(|i| one_hot_scores(i, 5)).collect();
        let d = difference_matrix(FeatureSource::Scores(&scores)).unwrap();
        assert!(d.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            difference_matrix(FeatureSource::Scores(&[])),
            Err(SeqSlamError::EmptyInput)
        ));
    }

    #[test]
    fn enhancing_a_constant_matrix_gives_zeros() {
        let d = DifferenceMatrix::from_values(vec![0.7; 12], 4, 3, MatrixSource::Scores).unwrap();
        let e = contrast_enhance(&d, 3);
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn enhancement_matches_windowed_oracle_on_single_column() {
        let d = DifferenceMatrix::from_values(vec![0.0, 1.0, 0.0], 3, 1, MatrixSource::Scores).unwrap();
        let e = contrast_enhance(&d, 3);

        // Brute-force oracle: explicit clamped windows, population std.
        let col = [0.0, 1.0, 0.0];
        for i in 0..3usize {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(2);
            let window = &col[lo..=hi];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / window.len() as f64;
            let want = (col[i] - mean) / (var.sqrt() + 1e-12);
            assert!((e.get(i, 0) - want).abs() < 1e-12);
        }
        // Center entry: mean 1/3, sigma sqrt(2)/3.
        assert!((e.get(1, 0) - (2.0 / 3.0) / ((2.0f64).sqrt() / 3.0 + 1e-12)).abs() < 1e-12);
    }

    #[test]
    fn enhancement_ignores_constant_column_offsets() {
        let base: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 0.25).collect();
        let d1 = DifferenceMatrix::from_values(base, 20, 1, MatrixSource::Scores).unwrap();
        let d2 = DifferenceMatrix::from_values(shifted, 20, 1, MatrixSource::Scores).unwrap();
        let e1 = contrast_enhance(&d1, 6);
        let e2 = contrast_enhance(&d2, 6);
        for (a, b) in e1.values().iter().zip(e2.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn diagonal_matrix(size: usize) -> DifferenceMatrix {
        let mut values = vec![1.0; size * size];
        for i in 0..size {
            values[i * size + i] = 0.0;
        }
        DifferenceMatrix::from_values(values, size, size, MatrixSource::Scores).unwrap()
    }

    #[test]
    fn perfect_diagonal_matches_identity() {
        let d = diagonal_matrix(30);
        let cfg = SeqSlamConfig { ds: 5, ..Default::default() };
        let matches = match_queries(&d, &cfg).unwrap();
        assert_eq!(matches.len(), 30);
        for q in 0..30 {
            if q < 4 {
                assert_eq!(matches[q].prediction, None);
            } else {
                assert_eq!(matches[q].prediction, Some(q), "query {q}");
            }
        }
    }

    #[test]
    fn planted_offset_line_is_recovered_and_matches_exhaustive_oracle() {
        let (rows, cols) = (10usize, 10usize);
        let mut values = vec![1.0; rows * cols];
        for q in 2..cols {
            values[(q - 2) * cols + q] = 0.0;
        }
        let d = DifferenceMatrix::from_values(values, rows, cols, MatrixSource::Scores).unwrap();
        let cfg = SeqSlamConfig { ds: 5, ..Default::default() };
        let matches = match_queries(&d, &cfg).unwrap();
        for q in 4..cols {
            assert_eq!(matches[q].prediction, Some(q - 2), "query {q}");
        }

        // Exhaustive oracle: score every (r, v) pair directly.
        for q in 4..cols {
            let mut best_cost = f64::INFINITY;
            let mut best_row = 0;
            for r in 0..rows {
                for step in 0..5 {
                    let v = 0.8 + 0.1 * step as f64;
                    let mut total = 0.0;
                    for t in 0..cfg.ds {
                        let row = (r as f64 - v * t as f64).round().clamp(0.0, rows as f64 - 1.0) as usize;
                        total += d.get(row, q - t);
                    }
                    if total < best_cost {
                        best_cost = total;
                        best_row = r;
                    }
                }
            }
            assert_eq!(matches[q].prediction, Some(best_row));
            assert!((matches[q].score - (-best_cost)).abs() < 1e-12);
        }
    }

    #[test]
    fn ds_longer_than_query_is_an_error() {
        let d = diagonal_matrix(5);
        let cfg = SeqSlamConfig { ds: 6, ..Default::default() };
        assert!(matches!(
            match_queries(&d, &cfg),
            Err(SeqSlamError::SequenceTooLong { ds: 6, queries: 5 })
        ));
    }

    #[test]
    fn positive_scaling_preserves_the_argmin() {
        let mut values = Vec::new();
        for r in 0..12 {
            for q in 0..12 {
                values.push(((r * 7 + q * 3) % 13) as f64 / 13.0 + 0.1);
            }
        }
        let d = DifferenceMatrix::from_values(values.clone(), 12, 12, MatrixSource::Scores).unwrap();
        let scaled = DifferenceMatrix::from_values(
            values.iter().map(|v| v * 3.5).collect(),
            12,
            12,
            MatrixSource::Scores,
        )
        .unwrap();
        let cfg = SeqSlamConfig { ds: 4, ..Default::default() };
        let a = match_queries(&d, &cfg).unwrap();
        let b = match_queries(&scaled, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.prediction, y.prediction);
            if x.score.is_finite() {
                assert!((y.score - 3.5 * x.score).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn uniqueness_threshold_rejects_ambiguous_matches() {
        // Two equally good diagonals 30 rows apart: with a strict threshold
        // every match is ambiguous and rejected; the default keeps them.
        let (rows, cols) = (60usize, 30usize);
        let mut values = vec![1.0; rows * cols];
        for q in 0..cols {
            values[q * cols + q] = 0.2;
            values[(q + 30) * cols + q] = 0.2;
        }
        let d = DifferenceMatrix::from_values(values, rows, cols, MatrixSource::Scores).unwrap();
        let strict = SeqSlamConfig { ds: 4, threshold: 1.5, ..Default::default() };
        let default = SeqSlamConfig { ds: 4, ..Default::default() };
        let rejected = match_queries(&d, &strict).unwrap();
        let kept = match_queries(&d, &default).unwrap();
        let strict_matched = rejected.iter().filter(|m| m.prediction.is_some()).count();
        let default_matched = kept.iter().filter(|m| m.prediction.is_some()).count();
        assert_eq!(strict_matched, 0);
        assert_eq!(default_matched, cols - 3);
    }

    #[test]
    fn matrix_file_roundtrip() {
        let d = diagonal_matrix(6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diff.bin");
        write_matrix(&path, &d, Some("config deadbeef")).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.rows(), 6);
        assert_eq!(back.cols(), 6);
        for (a, b) in d.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

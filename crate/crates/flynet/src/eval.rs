//! Ground-truth matching, precision-recall curves, AUC, and report files.
//!
//! A match is correct when the predicted reference index is within the frame
//! tolerance of the ground truth. The PR curve sweeps a threshold over the
//! distinct match scores (descending); at each threshold, matched queries
//! with a score at or above it are attempted. Precision is measured over the
//! attempted set, recall over *all* queries, so methods that abstain (e.g.
//! trajectory warm-up frames) pay for it in recall.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::classifier::Footprint;

#[derive(Debug)]
pub enum EvalError {
    EmptyInput,
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyInput => write!(f, "no match records"),
            EvalError::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for EvalError {}

/// Maximum frame-index offset for a prediction to count as correct
/// (boundary inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tolerance {
    pub frames: usize,
}

/// One query's outcome: prediction (none = unmatchable), confidence score
/// (higher is better), and ground truth.
#[derive(Clone, Copy, Debug)]
pub struct MatchRecord {
    pub query_index: usize,
    pub predicted: Option<usize>,
    pub score: f64,
    pub gt_ref: usize,
}

/// Whether a record's prediction is within tolerance of the ground truth.
pub fn is_correct(rec: &MatchRecord, tol: Tolerance) -> bool {
    match rec.predicted {
        Some(p) => p.abs_diff(rec.gt_ref) <= tol.frames,
        None => false,
    }
}

/// Precision-recall points (recall ascending) with the generating
/// thresholds.
#[derive(Clone, Debug)]
pub struct PrCurve {
    /// `(recall, precision)` pairs.
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// Sweeps the PR tradeoff over the distinct finite scores, descending.
pub fn pr_curve(records: &[MatchRecord], tol: Tolerance) -> Result<PrCurve, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let total = records.len() as f64;
    // (score, correct) for every attemptable record, best score first.
    let mut attemptable: Vec<(f64, bool)> = records
        .iter()
        .filter(|r| r.predicted.is_some() && r.score.is_finite())
        .map(|r| (r.score, is_correct(r, tol)))
        .collect();
    attemptable.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < attemptable.len() {
        let threshold = attemptable[i].0;
        // Take every record tied at this score.
        while i < attemptable.len() && attemptable[i].0 == threshold {
            if attemptable[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / total;
        thresholds.push(threshold);
        points.push((recall, precision));
    }
    Ok(PrCurve { points, thresholds })
}

/// Trapezoidal area under the PR curve over recall, anchored at
/// `(0, precision of the first point)`. An empty curve (every query
/// unmatchable) has zero area.
pub fn auc(curve: &PrCurve) -> f64 {
    if curve.points.is_empty() {
        return 0.0;
    }
    let mut points = Vec::with_capacity(curve.points.len() + 1);
    points.push((0.0, curve.points[0].1));
    points.extend_from_slice(&curve.points);
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    for pair in points.windows(2) {
        let (r0, p0) = pair[0];
        let (r1, p1) = pair[1];
        area += (r1 - r0) * (p0 + p1) * 0.5;
    }
    area
}

/// Wall-clock summary of one pipeline run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimingReport {
    pub feature_s: f64,
    pub match_s: f64,
    pub avg_query_s: f64,
}

/// Average place-recognition time per query:
/// `(feature extraction + place matching) / queries`.
pub fn timing_report(feature_s: f64, match_s: f64, queries: usize) -> TimingReport {
    let avg_query_s = if queries == 0 {
        0.0
    } else {
        (feature_s + match_s) / queries as f64
    };
    TimingReport { feature_s, match_s, avg_query_s }
}

/// One `summary.csv` row.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub method: String,
    pub auc: f64,
    pub timing: TimingReport,
    pub footprint: Footprint,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.to_path_buf(), source }
}

/// Writes `threshold,precision,recall` rows.
pub fn write_pr_csv(path: &Path, curve: &PrCurve, comment: Option<&str>) -> Result<(), EvalError> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("threshold,precision,recall\n");
    for (t, (recall, precision)) in curve.thresholds.iter().zip(&curve.points) {
        out.push_str(&format!("{t},{precision},{recall}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Writes `method,auc,feature_s,match_s,avg_query_s,layers,params,neurons`.
pub fn write_summary_csv(
    path: &Path,
    rows: &[SummaryRow],
    comment: Option<&str>,
) -> Result<(), EvalError> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("method,auc,feature_s,match_s,avg_query_s,layers,params,neurons\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.method,
            row.auc,
            row.timing.feature_s,
            row.timing.match_s,
            row.timing.avg_query_s,
            row.footprint.layers,
            row.footprint.params,
            row.footprint.neurons,
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Minimal line plot of the PR curve (recall on x, precision on y).
pub fn write_pr_svg(path: &Path, curve: &PrCurve, comment: Option<&str>) -> Result<(), EvalError> {
    let (w, h) = (480.0, 360.0);
    let (left, bottom, right, top) = (50.0, 40.0, 20.0, 20.0);
    let plot_w = w - left - right;
    let plot_h = h - bottom - top;
    let x = |recall: f64| left + recall * plot_w;
    let y = |precision: f64| h - bottom - precision * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    if let Some(c) = comment {
        svg.push_str(&format!("<!-- {c} -->\n"));
    }
    svg.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{left}\" y1=\"{}\" x2=\"{left}\" y2=\"{top}\" stroke=\"black\"/>\n",
        h - bottom,
        w - right,
        h - bottom,
        h - bottom,
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">recall</text>\n<text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\">precision</text>\n",
        left + plot_w / 2.0 - 18.0,
        h - 12.0,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
    ));
    if !curve.points.is_empty() {
        let coords: Vec<String> = std::iter::once((0.0, curve.points[0].1))
            .chain(curve.points.iter().copied())
            .map(|(r, p)| format!("{:.2},{:.2}", x(r), y(p)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(query: usize, predicted: Option<usize>, score: f64, gt: usize) -> MatchRecord {
        MatchRecord { query_index: query, predicted, score, gt_ref: gt }
    }

    #[test]
    fn correctness_boundaries_are_inclusive() {
        let tol20 = Tolerance { frames: 20 };
        assert!(is_correct(&record(0, Some(105), 1.0, 100), tol20));
        assert!(!is_correct(&record(0, Some(121), 1.0, 100), tol20));
        assert!(is_correct(&record(0, Some(110), 1.0, 100), Tolerance { frames: 10 }));
        assert!(!is_correct(&record(0, None, 1.0, 100), tol20));
    }

    #[test]
    fn pr_curve_hand_case() {
        // Scores .9,.8,.7,.6 with correctness T,T,F,T.
        let records = [
            record(0, Some(0), 0.9, 0),
            record(1, Some(1), 0.8, 1),
            record(2, Some(9), 0.7, 2),
            record(3, Some(3), 0.6, 3),
        ];
        let curve = pr_curve(&records, Tolerance { frames: 1 }).unwrap();
        assert_eq!(curve.thresholds, vec![0.9, 0.8, 0.7, 0.6]);
        let want = [(0.25, 1.0), (0.5, 1.0), (0.5, 2.0 / 3.0), (0.75, 0.75)];
        assert_eq!(curve.points.len(), want.len());
        for ((r, p), (wr, wp)) in curve.points.iter().zip(want) {
            assert!((r - wr).abs() < 1e-12 && (p - wp).abs() < 1e-12, "({r},{p}) vs ({wr},{wp})");
        }
    }

    #[test]
    fn all_correct_reaches_perfect_corner() {
        let records: Vec<MatchRecord> =
            (0..5).map(|i| record(i, Some(i), 1.0 - i as f64 * 0.1, i)).collect();
        let curve = pr_curve(&records, Tolerance { frames: 0 }).unwrap();
        assert!(curve
            .points
            .iter()
            .any(|&(r, p)| (r - 1.0).abs() < 1e-12 && (p - 1.0).abs() < 1e-12));
        assert!((auc(&curve) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_incorrect_has_zero_precision() {
        let records: Vec<MatchRecord> =
            (0..5).map(|i| record(i, Some(i + 50), 1.0 - i as f64 * 0.1, i)).collect();
        let curve = pr_curve(&records, Tolerance { frames: 5 }).unwrap();
        assert!(curve.points.iter().all(|&(_, p)| p == 0.0));
        assert_eq!(auc(&curve), 0.0);
    }

    #[test]
    fn recall_counts_unmatchable_queries_in_the_denominator() {
        let records = [
            record(0, None, f64::NEG_INFINITY, 0),
            record(1, None, f64::NEG_INFINITY, 1),
            record(2, Some(2), 0.9, 2),
            record(3, Some(3), 0.8, 3),
        ];
        let curve = pr_curve(&records, Tolerance { frames: 0 }).unwrap();
        let max_recall = curve.points.iter().map(|&(r, _)| r).fold(0.0, f64::max);
        assert!((max_recall - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_trapezoid_hand_cases() {
        let flat = PrCurve { points: vec![(0.0, 1.0), (1.0, 1.0)], thresholds: vec![1.0, 0.5] };
        assert!((auc(&flat) - 1.0).abs() < 1e-12);

        let slope = PrCurve {
            points: vec![(0.0, 1.0), (0.5, 0.6), (1.0, 0.2)],
            thresholds: vec![0.9, 0.5, 0.1],
        };
        assert!((auc(&slope) - 0.6).abs() < 1e-12);

        let empty = PrCurve { points: vec![], thresholds: vec![] };
        assert_eq!(auc(&empty), 0.0);
    }

    #[test]
    fn single_point_curve_is_a_rectangle() {
        let one = PrCurve { points: vec![(0.4, 0.8)], thresholds: vec![0.7] };
        assert!((auc(&one) - 0.4 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn all_unmatchable_yields_empty_curve_and_zero_auc() {
        let records = [record(0, None, f64::NEG_INFINITY, 0)];
        let curve = pr_curve(&records, Tolerance { frames: 0 }).unwrap();
        assert!(curve.points.is_empty());
        assert_eq!(auc(&curve), 0.0);
        assert!(matches!(pr_curve(&[], Tolerance { frames: 0 }), Err(EvalError::EmptyInput)));
    }

    // Brute-force oracle: enumerate every threshold explicitly, recompute
    // precision/recall by scanning all records, integrate with the same
    // anchoring convention.
    fn oracle_pr_auc(records: &[MatchRecord], tol: Tolerance) -> (Vec<(f64, f64)>, f64) {
        let mut thresholds: Vec<f64> = records
            .iter()
            .filter(|r| r.predicted.is_some() && r.score.is_finite())
            .map(|r| r.score)
            .collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut points = Vec::new();
        for &t in &thresholds {
            let attempted: Vec<&MatchRecord> = records
                .iter()
                .filter(|r| r.predicted.is_some() && r.score.is_finite() && r.score >= t)
                .collect();
            let tp = attempted.iter().filter(|r| is_correct(r, tol)).count() as f64;
            let fp = attempted.len() as f64 - tp;
            points.push((tp / records.len() as f64, tp / (tp + fp)));
        }
        let area = if points.is_empty() {
            0.0
        } else {
            let mut anchored = vec![(0.0, points[0].1)];
            anchored.extend_from_slice(&points);
            anchored
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
                .sum()
        };
        (points, area)
    }

    #[test]
    fn pr_and_auc_match_the_exhaustive_oracle() {
        use crate::rng::Rng;
        let mut rng = Rng::new(31337);
        for case in 0..10 {
            let count = 1 + rng.bounded(100) as usize;
            let records: Vec<MatchRecord> = (0..count)
                .map(|q| {
                    let unmatchable = rng.next_f64() < 0.15;
                    let predicted = if unmatchable {
                        None
                    } else {
                        Some(rng.bounded(20) as usize)
                    };
                    // Quantized scores so ties happen.
                    let score = if unmatchable {
                        f64::NEG_INFINITY
                    } else {
                        (rng.bounded(12) as f64) / 12.0
                    };
                    MatchRecord { query_index: q, predicted, score, gt_ref: rng.bounded(20) as usize }
                })
                .collect();
            let tol = Tolerance { frames: rng.bounded(4) as usize };
            let curve = pr_curve(&records, tol).unwrap();
            let (oracle_points, oracle_area) = oracle_pr_auc(&records, tol);
            assert_eq!(curve.points.len(), oracle_points.len(), "case {case}");
            for ((r, p), (or, op)) in curve.points.iter().zip(&oracle_points) {
                assert!((r - or).abs() < 1e-12 && (p - op).abs() < 1e-12);
            }
            assert!((auc(&curve) - oracle_area).abs() < 1e-12, "case {case}");
        }
    }

    #[test]
    fn curve_is_invariant_under_monotone_score_transforms() {
        let records: Vec<MatchRecord> = (0..20)
            .map(|q| record(q, Some(q % 7), (q as f64 * 0.37).sin(), q % 5))
            .collect();
        let tol = Tolerance { frames: 2 };
        let base = pr_curve(&records, tol).unwrap();
        let transformed: Vec<MatchRecord> = records
            .iter()
            .map(|r| MatchRecord { score: (r.score * 3.0).exp(), ..*r })
            .collect();
        let warped = pr_curve(&transformed, tol).unwrap();
        assert_eq!(base.points.len(), warped.points.len());
        for (a, b) in base.points.iter().zip(&warped.points) {
            assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }

    #[test]
    fn recall_is_nondecreasing_along_the_curve() {
        let records: Vec<MatchRecord> = (0..50)
            .map(|q| record(q, Some((q * 3) % 11), ((q * 7) % 13) as f64, q % 11))
            .collect();
        let curve = pr_curve(&records, Tolerance { frames: 1 }).unwrap();
        for pair in curve.points.windows(2) {
            assert!(pair[1].0 >= pair[0].0);
        }
    }

    #[test]
    fn timing_report_arithmetic() {
        let t = timing_report(35.0, 25.0, 1000);
        assert!((t.avg_query_s - 0.06).abs() < 1e-12);
        assert_eq!(timing_report(0.0, 0.0, 0).avg_query_s, 0.0);
        let halved = timing_report(35.0, 25.0, 2000);
        assert!((halved.avg_query_s - 0.03).abs() < 1e-12);
    }

    #[test]
    fn csv_writers_produce_expected_text() {
        use crate::classifier::{count_footprint, ModelKind};
        let dir = tempfile::tempdir().unwrap();

        let curve = PrCurve { points: vec![(0.5, 1.0)], thresholds: vec![0.9] };
        let pr_path = dir.path().join("pr.csv");
        write_pr_csv(&pr_path, &curve, Some("config abc")).unwrap();
        assert_eq!(
            fs::read_to_string(&pr_path).unwrap(),
            "# config abc\nthreshold,precision,recall\n0.9,1,0.5\n"
        );

        let summary_path = dir.path().join("summary.csv");
        let row = SummaryRow {
            method: "flynet".into(),
            auc: 0.75,
            timing: TimingReport { feature_s: 0.0, match_s: 0.0, avg_query_s: 0.0 },
            footprint: count_footprint(ModelKind::FlyNet),
        };
        write_summary_csv(&summary_path, &[row], None).unwrap();
        assert_eq!(
            fs::read_to_string(&summary_path).unwrap(),
            "method,auc,feature_s,match_s,avg_query_s,layers,params,neurons\nflynet,0.75,0,0,0,2,65000,1064\n"
        );

        let svg_path = dir.path().join("pr.svg");
        write_pr_svg(&svg_path, &curve, Some("config abc")).unwrap();
        let svg = fs::read_to_string(&svg_path).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("<!-- config abc -->"));
    }
}

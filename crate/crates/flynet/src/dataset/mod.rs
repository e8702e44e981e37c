//! Traverse loading, preprocessing, and synthetic traverse generation.
//!
//! A traverse is an ordered sequence of frames from one pass along a route.
//! Real traverses are ingested from image directories; synthetic
//! reference/query pairs are generated from a seeded value-noise panorama so
//! the whole pipeline can be exercised without shipping datasets.

mod synth;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::rng::Rng;

pub use synth::apply_appearance;

/// Frame height after preprocessing.
pub const FRAME_HEIGHT: usize = 32;
/// Frame width after preprocessing.
pub const FRAME_WIDTH: usize = 64;
/// Pixels per preprocessed frame.
pub const FRAME_LEN: usize = FRAME_HEIGHT * FRAME_WIDTH;

/// ITU-R 601 luma weights, fixed for cross-implementation determinism.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Gray value occluder rectangles are filled with.
const OCCLUDER_VALUE: f64 = 0.05;

#[derive(Debug)]
pub enum DatasetError {
    /// A file could not be decoded as an image.
    Decode { path: PathBuf, detail: String },
    Io { path: PathBuf, source: std::io::Error },
    EmptyDirectory { path: PathBuf },
    InvalidFrame { detail: String },
    InvalidConfig { detail: String },
    /// Malformed ground-truth CSV.
    GroundTruth { path: PathBuf, detail: String },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Decode { path, detail } => {
                write!(f, "cannot decode image {}: {detail}", path.display())
            }
            DatasetError::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
            DatasetError::EmptyDirectory { path } => {
                write!(f, "no decodable images in {}", path.display())
            }
            DatasetError::InvalidFrame { detail } => write!(f, "invalid frame: {detail}"),
            DatasetError::InvalidConfig { detail } => {
                write!(f, "invalid synthetic config: {detail}")
            }
            DatasetError::GroundTruth { path, detail } => {
                write!(f, "bad ground truth {}: {detail}", path.display())
            }
        }
    }
}

impl std::error::Error for DatasetError {}

/// A preprocessed grayscale image: 32x64 pixels, row-major, values in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(pixels: Vec<f64>) -> Result<Self, DatasetError> {
        if pixels.len() != FRAME_LEN {
            return Err(DatasetError::InvalidFrame {
                detail: format!("expected {FRAME_LEN} pixels, got {}", pixels.len()),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::InvalidFrame {
                detail: format!("pixel value {v} outside [0,1]"),
            });
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * FRAME_WIDTH + x]
    }
}

/// An ordered image sequence; reference traverses carry labels `0..n-1`.
#[derive(Clone, Debug)]
pub struct Traverse {
    pub frames: Vec<Frame>,
    pub labels: Vec<usize>,
    pub name: String,
}

impl Traverse {
    pub fn new(frames: Vec<Frame>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self, DatasetError> {
        if frames.len() != labels.len() {
            return Err(DatasetError::InvalidFrame {
                detail: format!("{} frames but {} labels", frames.len(), labels.len()),
            });
        }
        Ok(Self { frames, labels, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Appearance change applied to synthetic query traverses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Appearance {
    None,
    /// Gamma 1.3 plus additive noise.
    Mild,
    /// Gamma 3.0 (brightness crushed towards night) plus noise and occluders.
    Extreme,
}

impl Appearance {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Appearance::None),
            "mild" => Some(Appearance::Mild),
            "extreme" => Some(Appearance::Extreme),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Appearance::None => "none",
            Appearance::Mild => "mild",
            Appearance::Extreme => "extreme",
        }
    }
}

/// Configuration for the synthetic traverse pair generator.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub num_places: usize,
    pub seed: u64,
    pub appearance: Appearance,
    pub viewpoint_jitter_px: u32,
    pub noise_sigma: f64,
    pub occluder_count: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_places: 200,
            seed: 0,
            appearance: Appearance::None,
            viewpoint_jitter_px: 0,
            noise_sigma: 0.0,
            occluder_count: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        if self.num_places < 1 {
            return Err(DatasetError::InvalidConfig {
                detail: "num_places must be >= 1".into(),
            });
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(DatasetError::InvalidConfig {
                detail: format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma),
            });
        }
        Ok(())
    }
}

/// Converts a decoded image to a [`Frame`]: ITU-R 601 grayscale, bilinear
/// resize to 32x64 (pixel-center convention), then division by 255.
pub fn preprocess_image(img: &image::DynamicImage) -> Frame {
    let rgb = img.to_rgb8();
    let (sw, sh) = (rgb.width() as usize, rgb.height() as usize);
    let mut gray = Vec::with_capacity(sw * sh);
    for p in rgb.pixels() {
        gray.push(LUMA_R * p.0[0] as f64 + LUMA_G * p.0[1] as f64 + LUMA_B * p.0[2] as f64);
    }
    let resized = bilinear_resize(&gray, sw, sh, FRAME_WIDTH, FRAME_HEIGHT);
    let pixels = resized
        .into_iter()
        .map(|v| (v / 255.0).clamp(0.0, 1.0))
        .collect();
    Frame { pixels }
}

/// Bilinear resampling with pixel-center alignment: destination pixel `d`
/// samples source coordinate `(d + 0.5) * src/dst - 0.5`, clamped at edges.
pub(crate) fn bilinear_resize(
    src: &[f64],
    sw: usize,
    sh: usize,
    dw: usize,
    dh: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), sw * sh);
    let scale_x = sw as f64 / dw as f64;
    let scale_y = sh as f64 / dh as f64;
    let mut out = Vec::with_capacity(dw * dh);
    for dy in 0..dh {
        let sy = (dy as f64 + 0.5) * scale_y - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        let y0 = (y0 as i64).clamp(0, sh as i64 - 1) as usize;
        let y1 = (y0 + 1).min(sh - 1);
        for dx in 0..dw {
            let sx = (dx as f64 + 0.5) * scale_x - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let x0 = (x0 as i64).clamp(0, sw as i64 - 1) as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let top = (1.0 - fx) * src[y0 * sw + x0] + fx * src[y0 * sw + x1];
            let bottom = (1.0 - fx) * src[y1 * sw + x0] + fx * src[y1 * sw + x1];
            out.push((1.0 - fy) * top + fy * bottom);
        }
    }
    out
}

/// Loads and preprocesses a single image file.
pub fn load_frame(path: &Path) -> Result<Frame, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(preprocess_image(&img))
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pgm", "ppm", "pnm"];

/// Ingests a directory of images as a traverse. Files are ordered
/// lexicographically by file name and labeled `0..n-1`; non-image extensions
/// are ignored, but a file that looks like an image and fails to decode is an
/// error (no silent skipping).
pub fn ingest_directory(path: &Path) -> Result<Traverse, DatasetError> {
    let entries = fs::read_dir(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let p = entry.path();
        if !p.is_file() {
            continue;
        }
        let ext = p
            .extension()
            .map(|e| e.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            files.push(p);
        }
    }
    if files.is_empty() {
        return Err(DatasetError::EmptyDirectory {
            path: path.to_path_buf(),
        });
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(load_frame(f)?);
    }
    let labels = (0..frames.len()).collect();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Traverse::new(frames, labels, name)
}

/// Generates a deterministic (reference, query) traverse pair.
///
/// The reference is a sliding 32x64 window over a seeded 2-octave value-noise
/// panorama strip (height 32, width `num_places + 64`, one window per place),
/// which makes adjacent places look similar on purpose. The query revisits
/// the same windows with a per-frame horizontal jitter in
/// `[-viewpoint_jitter_px, +viewpoint_jitter_px]` and the configured
/// appearance transform applied. Ground truth is the identity alignment
/// (query frame `i` depicts place `i`).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Traverse, Traverse), DatasetError> {
    cfg.validate()?;
    let width = cfg.num_places + FRAME_WIDTH;
    let strip = synth::panorama(cfg.seed, width, FRAME_HEIGHT);

    let window = |start: usize| -> Vec<f64> {
        let mut px = Vec::with_capacity(FRAME_LEN);
        for y in 0..FRAME_HEIGHT {
            px.extend_from_slice(&strip[y * width + start..y * width + start + FRAME_WIDTH]);
        }
        px
    };

    let mut ref_frames = Vec::with_capacity(cfg.num_places);
    let mut query_frames = Vec::with_capacity(cfg.num_places);
    for place in 0..cfg.num_places {
        ref_frames.push(Frame { pixels: window(place) });

        let jitter = if cfg.viewpoint_jitter_px > 0 {
            let mut rng = Rng::for_stream(cfg.seed, synth::stream_id(synth::KIND_JITTER, place));
            rng.range_i64(-(cfg.viewpoint_jitter_px as i64), cfg.viewpoint_jitter_px as i64)
        } else {
            0
        };
        let start = (place as i64 + jitter).clamp(0, (width - FRAME_WIDTH) as i64) as usize;
        let base = Frame { pixels: window(start) };
        let mut rng = Rng::for_stream(cfg.seed, synth::stream_id(synth::KIND_APPEARANCE, place));
        query_frames.push(apply_appearance(
            &base,
            cfg.appearance,
            cfg.noise_sigma,
            cfg.occluder_count,
            &mut rng,
        ));
    }

    let labels: Vec<usize> = (0..cfg.num_places).collect();
    let reference = Traverse::new(ref_frames, labels.clone(), "synthetic-reference")?;
    let query = Traverse::new(query_frames, labels, "synthetic-query")?;
    Ok((reference, query))
}

/// Writes a traverse as 8-bit PGM files (`000000.pgm`, `000001.pgm`, ...).
pub fn export_traverse(traverse: &Traverse, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (i, frame) in traverse.frames.iter().enumerate() {
        let path = dir.join(format!("{i:06}.pgm"));
        let mut data = format!("P5\n{FRAME_WIDTH} {FRAME_HEIGHT}\n255\n").into_bytes();
        data.extend(frame.pixels.iter().map(|v| (v * 255.0).round() as u8));
        fs::write(&path, data).map_err(|e| DatasetError::Io { path, source: e })?;
    }
    Ok(())
}

/// Writes a `query_index,reference_index` alignment file. A `# `-prefixed
/// comment (e.g. the config hash) may be included after the header.
pub fn write_ground_truth(
    path: &Path,
    pairs: &[(usize, usize)],
    comment: Option<&str>,
) -> Result<(), DatasetError> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("query_index,reference_index\n");
    for &(q, r) in pairs {
        out.push_str(&format!("{q},{r}\n"));
    }
    let mut f = fs::File::create(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(out.as_bytes()).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Reads a ground-truth alignment file written by [`write_ground_truth`].
pub fn read_ground_truth(path: &Path) -> Result<Vec<(usize, usize)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("query_index") {
            continue;
        }
        let mut cols = line.split(',');
        let parse = |s: Option<&str>| -> Result<usize, DatasetError> {
            s.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| DatasetError::GroundTruth {
                    path: path.to_path_buf(),
                    detail: format!("bad line: {line}"),
                })
        };
        let q = parse(cols.next())?;
        let r = parse(cols.next())?;
        pairs.push((q, r));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{DynamicImage, RgbImage};

    fn solid_rgb(w: u32, h: u32, rgb: [u8; 3]) -> DynamicImage {
        DynamicImage::ImageRgb8(RgbImage::from_pixel(w, h, image::Rgb(rgb)))
    }

    #[test]
    fn preprocess_white_image_is_all_ones() {
        let frame = preprocess_image(&solid_rgb(1280, 960, [255, 255, 255]));
        assert_eq!(frame.pixels().len(), FRAME_LEN);
        for &v in frame.pixels() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn preprocess_mid_gray_is_128_over_255() {
        let frame = preprocess_image(&solid_rgb(100, 50, [128, 128, 128]));
        let want = 128.0 / 255.0;
        for &v in frame.pixels() {
            assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        }
    }

    // Reference resampler for the oracle: same pixel-center convention,
    // written as the naive direct formula.
    fn oracle_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
        let mut out = vec![0.0; dw * dh];
        for dy in 0..dh {
            for dx in 0..dw {
                let sx = (dx as f64 + 0.5) * (sw as f64 / dw as f64) - 0.5;
                let sy = (dy as f64 + 0.5) * (sh as f64 / dh as f64) - 0.5;
                let clamp_x = |x: i64| x.clamp(0, sw as i64 - 1) as usize;
                let clamp_y = |y: i64| y.clamp(0, sh as i64 - 1) as usize;
                let x0 = sx.floor() as i64;
                let y0 = sy.floor() as i64;
                let fx = sx - sx.floor();
                let fy = sy - sy.floor();
                let at = |x: i64, y: i64| src[clamp_y(y) * sw + clamp_x(x)];
                let v = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
                    + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
                out[dy * dw + dx] = v;
            }
        }
        out
    }

    #[test]
    fn oracle_bilinear_hand_checked_2x2() {
        // 2x2 -> 1x1 samples the exact center: mean of the four pixels.
        let src = [0.0, 255.0, 255.0, 0.0];
        let got = oracle_bilinear(&src, 2, 2, 1, 1);
        assert!((got[0] - 127.5).abs() < 1e-12);
    }

    #[test]
    fn preprocess_checkerboard_matches_reference_resampler() {
        let mut img = RgbImage::new(128, 64);
        for y in 0..64 {
            for x in 0..128 {
                let v = if (x + y) % 2 == 0 { 255 } else { 0 };
                img.put_pixel(x, y, image::Rgb([v, v, v]));
            }
        }
        let frame = preprocess_image(&DynamicImage::ImageRgb8(img));

        let mut gray = Vec::new();
        for y in 0..64usize {
            for x in 0..128usize {
                gray.push(if (x + y) % 2 == 0 { 255.0 } else { 0.0 });
            }
        }
        let oracle = oracle_bilinear(&gray, 128, 64, FRAME_WIDTH, FRAME_HEIGHT);
        for (got, want) in frame.pixels().iter().zip(&oracle) {
            assert!((got - want / 255.0).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn frame_rejects_bad_lengths_and_ranges() {
        assert!(Frame::new(vec![0.5; FRAME_LEN]).is_ok());
        assert!(Frame::new(vec![0.5; 10]).is_err());
        let mut px = vec![0.5; FRAME_LEN];
        px[0] = 1.5;
        assert!(Frame::new(px).is_err());
    }

    #[test]
    fn ingest_sorts_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        for (name, gray) in [("002.pgm", 30u8), ("000.pgm", 10), ("001.pgm", 20)] {
            let mut data = b"P5\n4 4\n255\n".to_vec();
            data.extend(std::iter::repeat(gray).take(16));
            fs::write(dir.path().join(name), data).unwrap();
        }
        let traverse = ingest_directory(dir.path()).unwrap();
        assert_eq!(traverse.len(), 3);
        assert_eq!(traverse.labels, vec![0, 1, 2]);
        let expected = [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0];
        for (frame, want) in traverse.frames.iter().zip(expected) {
            assert!((frame.pixels()[0] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn ingest_empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        match ingest_directory(dir.path()) {
            Err(DatasetError::EmptyDirectory { .. }) => {}
            other => panic!("expected EmptyDirectory, got {other:?}"),
        }
    }

    #[test]
    fn ingest_names_the_corrupt_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.png"), b"not an image").unwrap();
        match ingest_directory(dir.path()) {
            Err(DatasetError::Decode { path, .. }) => {
                assert!(path.to_string_lossy().ends_with("bad.png"));
            }
            other => panic!("expected Decode error, got {other:?}"),
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SynthConfig {
            num_places: 50,
            seed: 7,
            appearance: Appearance::Extreme,
            viewpoint_jitter_px: 3,
            noise_sigma: 0.1,
            occluder_count: 2,
            ..Default::default()
        };
        let (r1, q1) = generate_synthetic(&cfg).unwrap();
        let (r2, q2) = generate_synthetic(&cfg).unwrap();
        for (a, b) in r1.frames.iter().zip(&r2.frames) {
            assert_eq!(a.pixels(), b.pixels());
        }
        for (a, b) in q1.frames.iter().zip(&q2.frames) {
            assert_eq!(a.pixels(), b.pixels());
        }
    }

    #[test]
    fn synthetic_identity_transform_reproduces_reference() {
        let cfg = SynthConfig {
            num_places: 40,
            seed: 3,
            appearance: Appearance::None,
            viewpoint_jitter_px: 0,
            // noise/occluders only act under mild/extreme
            noise_sigma: 0.2,
            occluder_count: 5,
        };
        let (reference, query) = generate_synthetic(&cfg).unwrap();
        for (r, q) in reference.frames.iter().zip(&query.frames) {
            assert_eq!(r.pixels(), q.pixels());
        }
    }

    #[test]
    fn extreme_appearance_diverges_more_than_mild() {
        let base = SynthConfig {
            num_places: 60,
            seed: 11,
            viewpoint_jitter_px: 0,
            noise_sigma: 0.05,
            occluder_count: 2,
            appearance: Appearance::Mild,
        };
        let mean_abs_diff = |appearance| {
            let cfg = SynthConfig { appearance, ..base.clone() };
            let (reference, query) = generate_synthetic(&cfg).unwrap();
            let mut total = 0.0;
            for (r, q) in reference.frames.iter().zip(&query.frames) {
                total += r
                    .pixels()
                    .iter()
                    .zip(q.pixels())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
            }
            total / (reference.len() * FRAME_LEN) as f64
        };
        let mild = mean_abs_diff(Appearance::Mild);
        let extreme = mean_abs_diff(Appearance::Extreme);
        assert!(extreme > mild, "extreme {extreme} <= mild {mild}");
    }

    #[test]
    fn synthetic_frames_satisfy_invariants() {
        let cfg = SynthConfig {
            num_places: 30,
            seed: 5,
            appearance: Appearance::Extreme,
            viewpoint_jitter_px: 4,
            noise_sigma: 0.3,
            occluder_count: 3,
        };
        let (reference, query) = generate_synthetic(&cfg).unwrap();
        for t in [&reference, &query] {
            for f in &t.frames {
                assert_eq!(f.pixels().len(), FRAME_LEN);
                assert!(f.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn export_and_reingest_roundtrips_within_quantization() {
        let cfg = SynthConfig { num_places: 5, seed: 2, ..Default::default() };
        let (reference, _) = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_traverse(&reference, dir.path()).unwrap();
        let back = ingest_directory(dir.path()).unwrap();
        assert_eq!(back.len(), 5);
        for (orig, re) in reference.frames.iter().zip(&back.frames) {
            for (a, b) in orig.pixels().iter().zip(re.pixels()) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }

    #[test]
    fn ground_truth_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ground_truth.csv");
        let pairs = vec![(0, 0), (1, 1), (2, 5)];
        write_ground_truth(&path, &pairs, Some("config abc123")).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), pairs);
    }
}

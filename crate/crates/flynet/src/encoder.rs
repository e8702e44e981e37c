//! FlyNet algorithm (FNA) encoder: sparse binary random projection followed
//! by a winner-take-all threshold.
//!
//! Each output unit sums a small random subset of the input pixels
//! (`sampling_ratio`, default 10%); the top `wta_fraction` (default 50%) of
//! the sums become 1-bits, the rest 0, so every descriptor has exactly
//! `round(wta_fraction * n)` bits set. The family behaves as a
//! locality-sensitive hash: nearby inputs collide in most bits.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::dataset::Traverse;
use crate::rng::Rng;

#[derive(Debug)]
pub enum EncoderError {
    InvalidConfig { detail: String },
    DimensionMismatch { expected: usize, actual: usize },
    /// Failure while encoding one frame of a traverse.
    Frame { index: usize, detail: String },
    Format { detail: String },
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl fmt::Display for EncoderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderError::InvalidConfig { detail } => write!(f, "invalid encoder config: {detail}"),
            EncoderError::DimensionMismatch { expected, actual } => {
                write!(f, "input length {actual} does not match encoder input dim {expected}")
            }
            EncoderError::Frame { index, detail } => write!(f, "frame {index}: {detail}"),
            EncoderError::Format { detail } => write!(f, "bad descriptor file: {detail}"),
            EncoderError::Io { path, source } => {
                write!(f, "i/o error on {}: {source}", path.display())
            }
        }
    }
}

impl std::error::Error for EncoderError {}

/// Encoder dimensions and sampling parameters.
///
/// The default maps a 2048-pixel frame down to a 64-bit code (n = m/32); the
/// biological circuit expands dimensionality instead, which is supported by
/// configuring `n > m`.
#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub m: usize,
    pub n: usize,
    pub sampling_ratio: f64,
    pub wta_fraction: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            m: crate::dataset::FRAME_LEN,
            n: 64,
            sampling_ratio: 0.1,
            wta_fraction: 0.5,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |detail: String| Err(EncoderError::InvalidConfig { detail });
        if self.m == 0 || self.n == 0 {
            return fail(format!("dimensions must be positive (m={}, n={})", self.m, self.n));
        }
        if !(self.sampling_ratio > 0.0 && self.sampling_ratio <= 1.0) {
            return fail(format!("sampling_ratio must be in (0,1], got {}", self.sampling_ratio));
        }
        if !(self.wta_fraction > 0.0 && self.wta_fraction < 1.0) {
            return fail(format!("wta_fraction must be in (0,1), got {}", self.wta_fraction));
        }
        if self.fan_in() > self.m {
            return fail(format!("fan-in {} exceeds input dim {}", self.fan_in(), self.m));
        }
        let k = self.wta_k();
        if k < 1 || k > self.n {
            return fail(format!("wta_fraction {} gives k={k} outside [1, {}]", self.wta_fraction, self.n));
        }
        Ok(())
    }

    /// Inputs summed per output unit: `max(1, round(sampling_ratio * m))`,
    /// round half up.
    pub fn fan_in(&self) -> usize {
        ((self.sampling_ratio * self.m as f64).round() as usize).max(1)
    }

    /// Bits set per descriptor: `round(wta_fraction * n)`.
    pub fn wta_k(&self) -> usize {
        (self.wta_fraction * self.n as f64).round() as usize
    }
}

/// The sparse binary connection matrix, stored as per-row input index lists
/// (ascending). Regenerating from the same config is bit-identical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionMatrix {
    rows: Vec<Vec<u32>>,
    m: usize,
    seed: u64,
}

impl ProjectionMatrix {
    /// Builds a matrix from explicit rows; used for hand-constructed cases.
    pub fn from_rows(rows: Vec<Vec<u32>>, m: usize) -> Result<Self, EncoderError> {
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|&ix| ix as usize >= m) {
                return Err(EncoderError::InvalidConfig {
                    detail: format!("row {i} has an index outside [0,{m})"),
                });
            }
        }
        Ok(Self { rows, m, seed: 0 })
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Samples the projection matrix. Row `j` draws `fan_in` distinct indices
/// without replacement from the substream `(seed, j)`, so rows can be
/// regenerated independently and in parallel.
pub fn build_projection(cfg: &EncoderConfig) -> Result<ProjectionMatrix, EncoderError> {
    cfg.validate()?;
    let fan_in = cfg.fan_in();
    let rows = (0..cfg.n)
        .map(|j| {
            let mut rng = Rng::for_stream(cfg.seed, j as u64);
            rng.sample_distinct(cfg.m, fan_in)
                .into_iter()
                .map(|ix| ix as u32)
                .collect()
        })
        .collect();
    Ok(ProjectionMatrix { rows, m: cfg.m, seed: cfg.seed })
}

/// An n-bit code with a fixed number of set bits. Bit `j` of the code is bit
/// `j % 8` of byte `j / 8` (little-endian bit packing).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor {
    bits: Vec<u8>,
    n: usize,
}

impl BinaryDescriptor {
    pub fn from_set_bits(set: &[usize], n: usize) -> Self {
        let mut bits = vec![0u8; n.div_ceil(8)];
        for &j in set {
            debug_assert!(j < n);
            bits[j / 8] |= 1 << (j % 8);
        }
        Self { bits, n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bit(&self, j: usize) -> bool {
        debug_assert!(j < self.n);
        self.bits[j / 8] & (1 << (j % 8)) != 0
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Indices of the set bits, ascending.
    pub fn set_bits(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.bit(j)).collect()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn from_bytes(bytes: Vec<u8>, n: usize) -> Result<Self, EncoderError> {
        if bytes.len() != n.div_ceil(8) {
            return Err(EncoderError::Format {
                detail: format!("descriptor needs {} bytes for n={n}, got {}", n.div_ceil(8), bytes.len()),
            });
        }
        Ok(Self { bits: bytes, n })
    }
}

/// Encodes one input vector: sums per projection row, then keeps the top
/// `wta_k` sums as 1-bits. Ties break by larger value first, then smaller
/// output index first, so the code is fully determined by the input.
pub fn encode(
    w: &ProjectionMatrix,
    x: &[f64],
    cfg: &EncoderConfig,
) -> Result<BinaryDescriptor, EncoderError> {
    if x.len() != w.m {
        return Err(EncoderError::DimensionMismatch { expected: w.m, actual: x.len() });
    }
    let n = w.rows.len();
    let k = cfg.wta_k().min(n);
    let sums: Vec<f64> = w
        .rows
        .iter()
        .map(|row| row.iter().map(|&ix| x[ix as usize]).sum())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    Ok(BinaryDescriptor::from_set_bits(&order[..k], n))
}

/// Encodes every frame of a traverse, preserving order.
pub fn encode_traverse(
    w: &ProjectionMatrix,
    traverse: &Traverse,
    cfg: &EncoderConfig,
) -> Result<Vec<BinaryDescriptor>, EncoderError> {
    traverse
        .frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            encode(w, frame.pixels(), cfg).map_err(|e| EncoderError::Frame {
                index: i,
                detail: e.to_string(),
            })
        })
        .collect()
}

/// Fraction of agreeing bits: `1 - popcount(a ^ b) / n`.
pub fn hamming_similarity(a: &BinaryDescriptor, b: &BinaryDescriptor) -> Result<f64, EncoderError> {
    if a.n != b.n {
        return Err(EncoderError::DimensionMismatch { expected: a.n, actual: b.n });
    }
    let differing: usize = a
        .bits
        .iter()
        .zip(&b.bits)
        .map(|(x, y)| (x ^ y).count_ones() as usize)
        .sum();
    Ok(1.0 - differing as f64 / a.n as f64)
}

const FNAD_MAGIC: &[u8; 4] = b"FNAD";
const FNAD_VERSION: u32 = 1;

/// A descriptor file's contents: encoder dims, generating seed, and codes.
#[derive(Clone, Debug)]
pub struct DescriptorSet {
    pub m: u32,
    pub n: u32,
    pub seed: u64,
    pub descriptors: Vec<BinaryDescriptor>,
}

/// Writes the `FNAD` descriptor format: magic, version u32, m u32, n u32,
/// count u32, seed u64, then `count * ceil(n/8)` packed bytes. All integers
/// little-endian.
pub fn write_descriptors(
    path: &Path,
    m: u32,
    n: u32,
    seed: u64,
    descriptors: &[BinaryDescriptor],
) -> Result<(), EncoderError> {
    let mut buf = Vec::with_capacity(28 + descriptors.len() * (n as usize).div_ceil(8));
    buf.extend_from_slice(FNAD_MAGIC);
    buf.extend_from_slice(&FNAD_VERSION.to_le_bytes());
    buf.extend_from_slice(&m.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&(descriptors.len() as u32).to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    for d in descriptors {
        if d.n != n as usize {
            return Err(EncoderError::DimensionMismatch { expected: n as usize, actual: d.n });
        }
        buf.extend_from_slice(&d.bits);
    }
    fs::write(path, buf).map_err(|e| EncoderError::Io { path: path.to_path_buf(), source: e })
}

/// Reads an `FNAD` descriptor file.
pub fn read_descriptors(path: &Path) -> Result<DescriptorSet, EncoderError> {
    let mut file = fs::File::open(path).map_err(|e| EncoderError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| EncoderError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let format_err = |detail: String| EncoderError::Format { detail };
    if buf.len() < 28 {
        return Err(format_err("truncated header".into()));
    }
    if &buf[0..4] != FNAD_MAGIC {
        return Err(format_err("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FNAD_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let m = u32_at(8);
    let n = u32_at(12);
    let count = u32_at(16) as usize;
    let seed = u64::from_le_bytes(buf[20..28].try_into().unwrap());
    let stride = (n as usize).div_ceil(8);
    if buf.len() != 28 + count * stride {
        return Err(format_err(format!(
            "expected {} payload bytes, found {}",
            count * stride,
            buf.len() - 28
        )));
    }
    let descriptors = (0..count)
        .map(|i| {
            let start = 28 + i * stride;
            BinaryDescriptor::from_bytes(buf[start..start + stride].to_vec(), n as usize)
        })
        .collect::<Result<_, _>>()?;
    Ok(DescriptorSet { m, n, seed, descriptors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Frame, FRAME_LEN};

    fn random_input(seed: u64, m: usize) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..m).map(|_| rng.next_f64()).collect()
    }

    #[test]
    fn default_fan_in_is_205() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.fan_in(), 205); // round(0.1 * 2048)
        assert_eq!(cfg.wta_k(), 32);
    }

    #[test]
    fn tiny_input_gets_fan_in_floor_of_one() {
        let cfg = EncoderConfig { m: 10, n: 4, ..Default::default() };
        assert_eq!(cfg.fan_in(), 1);
        let w = build_projection(&cfg).unwrap();
        for row in w.rows() {
            assert_eq!(row.len(), 1);
            assert!(row[0] < 10);
        }
    }

    #[test]
    fn projection_is_deterministic() {
        let cfg = EncoderConfig { seed: 99, ..Default::default() };
        assert_eq!(build_projection(&cfg).unwrap(), build_projection(&cfg).unwrap());
        let other = EncoderConfig { seed: 100, ..Default::default() };
        assert_ne!(build_projection(&cfg).unwrap(), build_projection(&other).unwrap());
    }

    #[test]
    fn projection_rows_are_distinct_sorted_in_range() {
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        assert_eq!(w.output_dim(), 64);
        for row in w.rows() {
            assert_eq!(row.len(), 205);
            for pair in row.windows(2) {
                assert!(pair[0] < pair[1]);
            }
            assert!(row.iter().all(|&ix| (ix as usize) < cfg.m));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_ratio = EncoderConfig { sampling_ratio: 0.0, ..Default::default() };
        assert!(build_projection(&bad_ratio).is_err());
        let bad_wta = EncoderConfig { wta_fraction: 1.0, ..Default::default() };
        assert!(build_projection(&bad_wta).is_err());
        let zero_k = EncoderConfig { n: 64, wta_fraction: 0.001, ..Default::default() };
        assert!(build_projection(&zero_k).is_err());
    }

    #[test]
    fn popcount_is_exactly_k() {
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        for s in 0..50 {
            let x = random_input(s, cfg.m);
            let d = encode(&w, &x, &cfg).unwrap();
            assert_eq!(d.popcount(), 32);
        }
    }

    #[test]
    fn all_zero_input_sets_lowest_indices() {
        // Every sum ties at 0; the index tie-break keeps units 0..k-1.
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        let d = encode(&w, &vec![0.0; cfg.m], &cfg).unwrap();
        assert_eq!(d.set_bits(), (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn hand_constructed_case_matches_brute_force() {
        let cfg = EncoderConfig {
            m: 8,
            n: 4,
            sampling_ratio: 0.1,
            wta_fraction: 0.5,
            seed: 0,
        };
        let w = ProjectionMatrix::from_rows(vec![vec![3], vec![1], vec![6], vec![0]], 8).unwrap();
        let x = [0.9, 0.1, 0.0, 0.5, 0.0, 0.0, 0.7, 0.0];
        let d = encode(&w, &x, &cfg).unwrap();
        // Sums are (0.5, 0.1, 0.7, 0.9); top-2 are units 3 and 2.
        assert_eq!(d.set_bits(), vec![2, 3]);

        // Brute force: recompute sums and top-k directly.
        let mut sums: Vec<(usize, f64)> = w
            .rows()
            .iter()
            .enumerate()
            .map(|(j, row)| (j, row.iter().map(|&ix| x[ix as usize]).sum()))
            .collect();
        sums.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut expect: Vec<usize> = sums[..2].iter().map(|&(j, _)| j).collect();
        expect.sort_unstable();
        assert_eq!(d.set_bits(), expect);
    }

    #[test]
    fn seeded_projection_reproduces_hand_case_rows() {
        // Seed found by search so that the sampled matrix equals the
        // hand-constructed rows above; pins the generator end-to-end.
        let cfg = EncoderConfig {
            m: 8,
            n: 4,
            sampling_ratio: 0.1,
            wta_fraction: 0.5,
            seed: HAND_CASE_SEED,
        };
        let w = build_projection(&cfg).unwrap();
        assert_eq!(w.rows(), &[vec![3], vec![1], vec![6], vec![0]]);
        let x = [0.9, 0.1, 0.0, 0.5, 0.0, 0.0, 0.7, 0.0];
        let d = encode(&w, &x, &cfg).unwrap();
        assert_eq!(d.set_bits(), vec![2, 3]);
    }

    // Found by searching seeds until the sampler emits the hand case's rows.
    const HAND_CASE_SEED: u64 = 957;

    #[test]
    fn scaling_the_input_preserves_the_code() {
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        for s in 0..20 {
            let x = random_input(1000 + s, cfg.m);
            let base = encode(&w, &x, &cfg).unwrap();
            for c in [0.5, 2.0, 10.0] {
                let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
                assert_eq!(encode(&w, &scaled, &cfg).unwrap(), base);
            }
        }
    }

    #[test]
    fn hamming_similarity_basics() {
        let a = BinaryDescriptor::from_set_bits(&[0, 1, 4, 5], 8); // 11001100 (bits 0,1,4,5)
        let b = BinaryDescriptor::from_set_bits(&[0, 1, 6, 7], 8); // 11000011 (bits 0,1,6,7)
        assert_eq!(hamming_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(hamming_similarity(&a, &b).unwrap(), 0.5);
        let complement = BinaryDescriptor::from_set_bits(&[2, 3, 6, 7], 8);
        assert_eq!(hamming_similarity(&a, &complement).unwrap(), 0.0);
        let short = BinaryDescriptor::from_set_bits(&[0], 4);
        assert!(hamming_similarity(&a, &short).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        assert!(matches!(
            encode(&w, &[0.0; 100], &cfg),
            Err(EncoderError::DimensionMismatch { expected: 2048, actual: 100 })
        ));
    }

    #[test]
    fn encode_traverse_maps_element_wise() {
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        let empty = Traverse::new(vec![], vec![], "empty").unwrap();
        assert!(encode_traverse(&w, &empty, &cfg).unwrap().is_empty());

        let frames: Vec<Frame> = (0..6)
            .map(|s| Frame::new(random_input(2000 + s, FRAME_LEN)).unwrap())
            .collect();
        let labels: Vec<usize> = (0..6).collect();
        let traverse = Traverse::new(frames.clone(), labels.clone(), "t").unwrap();
        let codes = encode_traverse(&w, &traverse, &cfg).unwrap();
        assert_eq!(codes.len(), 6);

        // Permuting frames permutes codes identically.
        let perm = [5usize, 2, 0, 4, 1, 3];
        let permuted_frames: Vec<Frame> = perm.iter().map(|&i| frames[i].clone()).collect();
        let permuted = Traverse::new(permuted_frames, labels, "p").unwrap();
        let permuted_codes = encode_traverse(&w, &permuted, &cfg).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            assert_eq!(permuted_codes[slot], codes[src]);
        }
    }

    #[test]
    fn lsh_similarity_decreases_with_noise() {
        let cfg = EncoderConfig::default();
        let w = build_projection(&cfg).unwrap();
        let sigmas = [0.01, 0.05, 0.1, 0.2, 0.4];
        let mut means = Vec::new();
        for (level, &sigma) in sigmas.iter().enumerate() {
            let mut total = 0.0;
            let frames = 64;
            for i in 0..frames {
                let x = random_input(3000 + i, cfg.m);
                let mut rng = Rng::for_stream(4000 + i, level as u64);
                let noisy: Vec<f64> = x.iter().map(|v| v + sigma * rng.next_gaussian()).collect();
                let a = encode(&w, &x, &cfg).unwrap();
                let b = encode(&w, &noisy, &cfg).unwrap();
                total += hamming_similarity(&a, &b).unwrap();
            }
            means.push(total / frames as f64);
        }
        for pair in means.windows(2) {
            assert!(pair[0] > pair[1], "similarity means not decreasing: {means:?}");
        }
    }

    #[test]
    fn fnad_roundtrip_and_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.fnad");
        let descs = vec![
            BinaryDescriptor::from_set_bits(&[0, 3, 9], 12),
            BinaryDescriptor::from_set_bits(&[1, 2, 11], 12),
        ];
        write_descriptors(&path, 40, 12, 0xDEADBEEF, &descs).unwrap();

        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"FNAD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 40);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0xDEADBEEF);
        assert_eq!(bytes.len(), 28 + 2 * 2);

        let set = read_descriptors(&path).unwrap();
        assert_eq!(set.m, 40);
        assert_eq!(set.n, 12);
        assert_eq!(set.seed, 0xDEADBEEF);
        assert_eq!(set.descriptors, descs);
    }

    #[test]
    fn fnad_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fnad");
        fs::write(&path, b"XXXX").unwrap();
        assert!(matches!(read_descriptors(&path), Err(EncoderError::Format { .. })));
    }
}

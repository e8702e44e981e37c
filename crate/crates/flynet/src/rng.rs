//! Portable deterministic random number generation.
//!
//! Every random choice in this crate (projection sampling, synthetic data,
//! weight init, epoch shuffling) flows through the generators defined here so
//! that a given seed produces bit-identical results on every platform and in
//! any reimplementation. Nothing in this module depends on the platform's
//! `libm` or on `rand`.
//!
//! The scheme is:
//!
//! * **splitmix64** — seed expansion and hashing. State advances by the odd
//!   constant `0x9E3779B97F4A7C15`; outputs are finalized with the
//!   `mix64` function below (shift-xor / multiply steps with constants
//!   `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`).
//! * **xoshiro256\*\*** — the working generator, seeded with four successive
//!   splitmix64 outputs.
//! * **substreams** — independent streams are derived as
//!   `mix64(seed ^ mix64(stream_id + GOLDEN))`, so per-row / per-frame
//!   generators can be created in any order (or in parallel) and still agree.
//!
//! Floating-point conversion takes the top 53 bits: `(u >> 11) * 2^-53`,
//! giving a uniform double in `[0, 1)`. Bounded integers use the
//! multiply-shift reduction `(u * n) >> 64` (in 128-bit arithmetic); its bias
//! is below 2^-32 for every `n` used here and the mapping is exactly
//! reproducible, which is what matters.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// splitmix64 finalizer. Deterministic 64-bit mixing function.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives the seed for an independent named stream of a root seed.
///
/// Used for per-row projection sampling, per-frame jitter/noise, per-epoch
/// shuffles, and so on. Stream ids are small constants documented at their
/// call sites.
#[inline]
pub fn substream(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(GOLDEN)))
}

/// splitmix64 sequential generator.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }
}

/// xoshiro256** seeded via splitmix64.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = SplitMix64::new(seed);
        let s = [sm.next_u64(), sm.next_u64(), sm.next_u64(), sm.next_u64()];
        Self { s }
    }

    /// Generator for a named substream of `seed`; see [`substream`].
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        Self::new(substream(seed, stream))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform double in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by 128-bit multiply-shift reduction.
    pub fn bounded(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo) as u64 + 1;
        lo + self.bounded(span) as i64
    }

    /// Uniform double in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal variate as the sum of 12 uniforms minus 6
    /// (Irwin-Hall). Exactly portable: uses only additions of dyadic
    /// rationals, no transcendental functions.
    pub fn next_gaussian(&mut self) -> f64 {
        let mut acc = 0.0;
        for _ in 0..12 {
            acc += self.next_f64();
        }
        acc - 6.0
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.bounded(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Samples `k` distinct indices from `[0, n)`, returned in ascending
    /// order (partial Fisher-Yates over a scratch identity permutation).
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.bounded((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

// Portable ln/exp/pow used by the synthetic data generator, so that gamma
// transforms are reproducible across platforms regardless of the system libm.
// Accuracy is ~1 ulp-level (relative error < 1e-14 over the domains used);
// the defining property is that the polynomial evaluation order below IS the
// specification.

const LN2_HI: f64 = 6.931_471_805_599_452_8e-1;
const LN2_LO: f64 = 2.319_046_813_846_299_6e-17;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Natural logarithm for finite `x > 0`, platform-independent.
///
/// Decomposes `x = m * 2^e` with `m` in `[sqrt(1/2), sqrt(2))`, then
/// `ln m = 2 * atanh(s)` with `s = (m-1)/(m+1)` summed through `s^25`.
pub fn portable_ln(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    let (x, sub_adjust) = if x < f64::MIN_POSITIVE {
        // Rescale subnormals; 2^54 multiplication is exact.
        (x * 18_014_398_509_481_984.0, -54i64)
    } else {
        (x, 0i64)
    };
    let bits = x.to_bits();
    let mut e = ((bits >> 52) & 0x7ff) as i64 - 1023 + sub_adjust;
    let mut m = f64::from_bits((bits & 0x000F_FFFF_FFFF_FFFF) | 0x3FF0_0000_0000_0000);
    if m > SQRT_2 {
        m *= 0.5;
        e += 1;
    }
    let s = (m - 1.0) / (m + 1.0);
    let s2 = s * s;
    // sum_{k=0..12} s^(2k+1) / (2k+1), accumulated low-order-first via Horner.
    let mut poly = 1.0 / 25.0;
    let mut denom = 23i32;
    while denom >= 1 {
        poly = poly * s2 + 1.0 / denom as f64;
        denom -= 2;
    }
    let ln_m = 2.0 * s * poly;
    (e as f64) * LN2_HI + ((e as f64) * LN2_LO + ln_m)
}

/// Exponential for finite `y`, platform-independent.
///
/// Range-reduces `y = k*ln2 + r` with `|r| <= ln2/2`, evaluates `e^r` as the
/// Taylor series through `r^17/17!`, and scales by `2^k` with exact
/// power-of-two multiplications.
pub fn portable_exp(y: f64) -> f64 {
    debug_assert!(y.is_finite());
    if y > 709.8 {
        return f64::INFINITY;
    }
    if y < -745.2 {
        return 0.0;
    }
    let k = (y / (LN2_HI + LN2_LO)).round();
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let mut poly = 1.0 / factorial(17);
    let mut i = 16i32;
    while i >= 0 {
        poly = poly * r + 1.0 / factorial(i);
        i -= 1;
    }
    scale_by_pow2(poly, k as i64)
}

/// `x^g` for `x` in `[0, 1]` and `g > 0`, platform-independent.
pub fn portable_pow(x: f64, g: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&x) && g > 0.0);
    if x == 0.0 {
        0.0
    } else if x == 1.0 {
        1.0
    } else {
        portable_exp(g * portable_ln(x))
    }
}

fn factorial(n: i32) -> f64 {
    let mut acc = 1.0;
    for i in 2..=n {
        acc *= i as f64;
    }
    acc
}

/// Multiplies by 2^k. Each step multiplies by an exact power of two, so the
/// only rounding is the IEEE-defined one on subnormal underflow.
fn scale_by_pow2(mut v: f64, mut k: i64) -> f64 {
    while k > 1000 {
        v *= f64::from_bits(((1023 + 1000) as u64) << 52);
        k -= 1000;
    }
    while k < -1000 {
        v *= f64::from_bits(((1023 - 1000) as u64) << 52);
        k += 1000;
    }
    v * f64::from_bits(((1023 + k) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix64_reference_vector() {
        // First outputs for seed 0 of the reference splitmix64.
        let mut sm = SplitMix64::new(0);
        assert_eq!(sm.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(sm.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(sm.next_u64(), 0x06C45D188009454F);
    }

    #[test]
    fn rng_is_deterministic_per_seed() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Rng::new(43);
        assert_ne!(Rng::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn substreams_are_independent_of_creation_order() {
        let s1 = substream(7, 3);
        let _ = substream(7, 9);
        assert_eq!(s1, substream(7, 3));
        assert_ne!(substream(7, 3), substream(7, 4));
        assert_ne!(substream(7, 3), substream(8, 3));
    }

    #[test]
    fn next_f64_in_unit_interval() {
        let mut rng = Rng::new(1);
        for _ in 0..10_000 {
            let v = rng.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn bounded_covers_range() {
        let mut rng = Rng::new(5);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[rng.bounded(7) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn range_i64_is_inclusive() {
        let mut rng = Rng::new(5);
        let mut lo_seen = false;
        let mut hi_seen = false;
        for _ in 0..2000 {
            let v = rng.range_i64(-3, 3);
            assert!((-3..=3).contains(&v));
            lo_seen |= v == -3;
            hi_seen |= v == 3;
        }
        assert!(lo_seen && hi_seen);
    }

    #[test]
    fn gaussian_moments_are_sane() {
        let mut rng = Rng::new(11);
        let n = 50_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.next_gaussian()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
    }

    #[test]
    fn sample_distinct_is_sorted_and_distinct() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let picked = rng.sample_distinct(100, 10);
            assert_eq!(picked.len(), 10);
            for w in picked.windows(2) {
                assert!(w[0] < w[1]);
            }
            assert!(picked.iter().all(|&i| i < 100));
        }
    }

    #[test]
    fn portable_ln_matches_std() {
        let mut rng = Rng::new(17);
        for _ in 0..5000 {
            let x = rng.next_f64().max(1e-300);
            let got = portable_ln(x);
            let want = x.ln();
            assert!(
                (got - want).abs() <= 1e-13 * want.abs().max(1.0),
                "ln({x}): {got} vs {want}"
            );
        }
        assert_eq!(portable_ln(1.0), 0.0);
    }

    #[test]
    fn portable_exp_matches_std() {
        let mut rng = Rng::new(19);
        for _ in 0..5000 {
            let y = rng.uniform(-700.0, 700.0);
            let got = portable_exp(y);
            let want = y.exp();
            let rel = (got - want).abs() / want.max(f64::MIN_POSITIVE);
            assert!(rel <= 1e-12, "exp({y}): {got} vs {want}");
        }
        assert_eq!(portable_exp(0.0), 1.0);
    }

    #[test]
    fn portable_pow_matches_std() {
        let mut rng = Rng::new(23);
        for &g in &[0.5, 1.3, 3.0, 7.7] {
            for _ in 0..2000 {
                let x = rng.next_f64();
                let got = portable_pow(x, g);
                let want = x.powf(g);
                assert!(
                    (got - want).abs() <= 1e-12 * want.max(1e-12),
                    "pow({x},{g}): {got} vs {want}"
                );
            }
        }
        assert_eq!(portable_pow(0.0, 1.3), 0.0);
        assert_eq!(portable_pow(1.0, 3.0), 1.0);
    }
}

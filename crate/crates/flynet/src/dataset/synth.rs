//! Seeded value-noise panorama and appearance transforms.
//!
//! Everything here is exactly portable: lattice values come from the mixing
//! function in [`crate::rng`], interpolation is polynomial (smoothstep), the
//! gamma curves use the crate's portable `pow`, and additive noise uses the
//! Irwin-Hall gaussian. Two runs with one seed produce byte-identical pixels
//! on any platform.

use crate::rng::{mix64, portable_pow, Rng};

use super::{Appearance, Frame, FRAME_HEIGHT, FRAME_WIDTH, OCCLUDER_VALUE};

// Substream kinds for per-frame generators.
pub(super) const KIND_JITTER: u64 = 1;
pub(super) const KIND_APPEARANCE: u64 = 2;

// Salts separating the two noise octaves in the lattice hash.
const OCTAVE_SALT: [u64; 2] = [0x5EED_0C7A_0000_0001, 0x5EED_0C7A_0000_0002];

// Lattice spacing per octave, in pixels; octave 1 runs at double frequency
// and half amplitude.
const OCTAVE_SPACING: [usize; 2] = [16, 8];
const OCTAVE_AMPLITUDE: [f64; 2] = [1.0, 0.5];

pub(super) fn stream_id(kind: u64, frame: usize) -> u64 {
    (kind << 40) | frame as u64
}

/// Uniform `[0,1)` value for a lattice corner, from cascaded mixing.
fn lattice_value(seed: u64, salt: u64, gx: u64, gy: u64) -> f64 {
    let h = mix64(mix64(mix64(seed ^ salt) ^ gx) ^ gy);
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, salt: u64, spacing: usize, x: usize, y: usize) -> f64 {
    let gx = (x / spacing) as u64;
    let gy = (y / spacing) as u64;
    let fx = (x % spacing) as f64 / spacing as f64;
    let fy = (y % spacing) as f64 / spacing as f64;
    let u = smoothstep(fx);
    let v = smoothstep(fy);
    let c00 = lattice_value(seed, salt, gx, gy);
    let c10 = lattice_value(seed, salt, gx + 1, gy);
    let c01 = lattice_value(seed, salt, gx, gy + 1);
    let c11 = lattice_value(seed, salt, gx + 1, gy + 1);
    let top = c00 + u * (c10 - c00);
    let bottom = c01 + u * (c11 - c01);
    top + v * (bottom - top)
}

/// Renders the panorama strip, row-major `height x width`, values in `[0,1]`.
pub(super) fn panorama(seed: u64, width: usize, height: usize) -> Vec<f64> {
    let norm = 1.0 / (OCTAVE_AMPLITUDE[0] + OCTAVE_AMPLITUDE[1]);
    let mut strip = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for oct in 0..2 {
                acc += OCTAVE_AMPLITUDE[oct]
                    * value_noise(seed, OCTAVE_SALT[oct], OCTAVE_SPACING[oct], x, y);
            }
            strip.push(acc * norm);
        }
    }
    strip
}

/// Applies an appearance transform to a frame, in order: gamma curve,
/// additive gaussian noise, clamp to `[0,1]`, occluder rectangles. Under
/// [`Appearance::None`] the frame is returned untouched (noise and occluders
/// only act under mild/extreme). Occluders are only drawn under extreme.
pub fn apply_appearance(
    frame: &Frame,
    appearance: Appearance,
    noise_sigma: f64,
    occluder_count: u32,
    rng: &mut Rng,
) -> Frame {
    let (gamma, occluders) = match appearance {
        Appearance::None => return frame.clone(),
        Appearance::Mild => (1.3, 0),
        Appearance::Extreme => (3.0, occluder_count),
    };
    let mut pixels: Vec<f64> = frame
        .pixels
        .iter()
        .map(|&v| portable_pow(v, gamma))
        .collect();
    if noise_sigma > 0.0 {
        for v in pixels.iter_mut() {
            *v += noise_sigma * rng.next_gaussian();
        }
    }
    for v in pixels.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    for _ in 0..occluders {
        let w = rng.range_i64(8, 24) as usize;
        let h = rng.range_i64(8, 16) as usize;
        let x0 = rng.bounded((FRAME_WIDTH - w) as u64 + 1) as usize;
        let y0 = rng.bounded((FRAME_HEIGHT - h) as u64 + 1) as usize;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                pixels[y * FRAME_WIDTH + x] = OCCLUDER_VALUE;
            }
        }
    }
    Frame { pixels }
}

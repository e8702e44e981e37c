//! 1-d continuous attractor network over place units.
//!
//! The activity vector holds one unit per reference place plus one pad unit
//! at each end to absorb edge effects on linear routes. Each step applies,
//! in order:
//!
//! 1. shift-and-copy path integration (`shift_per_step` units toward
//!    increasing index; vacated entries zero unless wraparound),
//! 2. local excitation by a normalized gaussian kernel (edge indices
//!    clamped),
//! 3. injection of the normalized input scores scaled by `input_gain`,
//! 4. global inhibition: subtract `inhibition * mean` from every unit and
//!    clip at zero,
//! 5. renormalization to sum 1.
//!
//! The stable state is a localized bump whose position tracks the current
//! place; peak activity doubles as match confidence.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::rng::portable_exp;

#[derive(Debug)]
pub enum CannError {
    InvalidConfig { detail: String },
    ShapeMismatch { detail: String },
    EmptyInput,
    Io { path: std::path::PathBuf, source: std::io::Error },
}

impl fmt::Display for CannError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CannError::InvalidConfig { detail } => write!(f, "invalid cann config: {detail}"),
            CannError::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            CannError::EmptyInput => write!(f, "empty score sequence"),
            CannError::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CannError {}

/// Attractor layer settings. `num_units` is the place count plus 2 pads.
#[derive(Clone, Debug)]
pub struct CannConfig {
    pub num_units: usize,
    pub kernel_radius: usize,
    pub kernel_sigma: f64,
    pub input_gain: f64,
    pub inhibition: f64,
    pub shift_per_step: i64,
    pub wraparound: bool,
}

impl Default for CannConfig {
    fn default() -> Self {
        Self {
            num_units: 1002,
            kernel_radius: 3,
            kernel_sigma: 1.5,
            input_gain: 1.0,
            inhibition: 0.1,
            shift_per_step: 1,
            wraparound: false,
        }
    }
}

impl CannConfig {
    /// Config sized for `places` reference places (adds the 2 pad units).
    pub fn for_places(places: usize) -> Self {
        Self { num_units: places + 2, ..Default::default() }
    }

    pub fn places(&self) -> usize {
        self.num_units - 2
    }

    pub fn validate(&self) -> Result<(), CannError> {
        let fail = |detail: String| Err(CannError::InvalidConfig { detail });
        if self.num_units < 3 {
            return fail(format!("num_units must be >= 3, got {}", self.num_units));
        }
        if self.num_units < 2 * self.kernel_radius + 1 {
            return fail(format!(
                "num_units {} smaller than kernel span {}",
                self.num_units,
                2 * self.kernel_radius + 1
            ));
        }
        if !(self.input_gain > 0.0) {
            return fail(format!("input_gain must be > 0, got {}", self.input_gain));
        }
        if !(self.inhibition >= 0.0) {
            return fail(format!("inhibition must be >= 0, got {}", self.inhibition));
        }
        if !(self.kernel_sigma > 0.0) {
            return fail(format!("kernel_sigma must be > 0, got {}", self.kernel_sigma));
        }
        Ok(())
    }

    /// Excitation kernel `w_d = exp(-d^2 / (2 sigma^2))`, normalized to sum 1.
    pub fn kernel(&self) -> Vec<f64> {
        let r = self.kernel_radius as i64;
        let weights: Vec<f64> = (-r..=r)
            .map(|d| portable_exp(-((d * d) as f64) / (2.0 * self.kernel_sigma * self.kernel_sigma)))
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }
}

/// Nonnegative activity over the units, kept normalized to sum 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CannState {
    activity: Vec<f64>,
}

impl CannState {
    pub fn activity(&self) -> &[f64] {
        &self.activity
    }

    /// Peak place (pad units excluded) and its activity value.
    pub fn peak_place(&self) -> (usize, f64) {
        let places = self.activity.len() - 2;
        let mut best = 0;
        for p in 1..places {
            if self.activity[p + 1] > self.activity[best + 1] {
                best = p;
            }
        }
        (best, self.activity[best + 1])
    }
}

/// Maps place scores onto the unit line (pads zero), normalized to sum 1.
/// All-zero input maps to all zeros.
fn inject_vector(cfg: &CannConfig, scores: &[f64]) -> Result<Vec<f64>, CannError> {
    if scores.len() != cfg.places() {
        return Err(CannError::ShapeMismatch {
            detail: format!("{} scores for {} place units", scores.len(), cfg.places()),
        });
    }
    let mut input = vec![0.0; cfg.num_units];
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        for (p, &s) in scores.iter().enumerate() {
            input[p + 1] = s / total;
        }
    }
    Ok(input)
}

fn normalized(mut activity: Vec<f64>, fallback: &[f64]) -> CannState {
    let total: f64 = activity.iter().sum();
    if total > 0.0 {
        for a in activity.iter_mut() {
            *a /= total;
        }
        CannState { activity }
    } else {
        // Degenerate: fall back to the injected input, or uniform over the
        // place units when the input is zero too.
        let input_total: f64 = fallback.iter().sum();
        let n = fallback.len();
        if input_total > 0.0 {
            CannState {
                activity: fallback.iter().map(|v| v / input_total).collect(),
            }
        } else {
            let mut uniform = vec![0.0; n];
            let share = 1.0 / (n - 2) as f64;
            for u in uniform.iter_mut().take(n - 1).skip(1) {
                *u = share;
            }
            CannState { activity: uniform }
        }
    }
}

/// Initializes the activity from the first score vector (pads zero,
/// renormalized).
pub fn cann_init(cfg: &CannConfig, scores: &[f64]) -> Result<CannState, CannError> {
    cfg.validate()?;
    let input = inject_vector(cfg, scores)?;
    Ok(normalized(input.clone(), &input))
}

/// One attractor update; see the module docs for the five phases.
pub fn cann_step(state: &CannState, scores: &[f64], cfg: &CannConfig) -> Result<CannState, CannError> {
    cfg.validate()?;
    let n = cfg.num_units;
    if state.activity.len() != n {
        return Err(CannError::ShapeMismatch {
            detail: format!("state has {} units, config {}", state.activity.len(), n),
        });
    }

    // 1. Shift-and-copy.
    let shift = cfg.shift_per_step;
    let mut shifted = vec![0.0; n];
    for i in 0..n {
        let src = i as i64 - shift;
        if cfg.wraparound {
            let src = src.rem_euclid(n as i64) as usize;
            shifted[i] = state.activity[src];
        } else if (0..n as i64).contains(&src) {
            shifted[i] = state.activity[src as usize];
        }
    }

    // 2. Local excitation, edge indices clamped.
    let kernel = cfg.kernel();
    let r = cfg.kernel_radius as i64;
    let mut excited = vec![0.0; n];
    for i in 0..n as i64 {
        let mut acc = 0.0;
        for d in -r..=r {
            let idx = (i + d).clamp(0, n as i64 - 1) as usize;
            acc += shifted[idx] * kernel[(d + r) as usize];
        }
        excited[i as usize] = acc;
    }

    // 3. Input injection.
    let input = inject_vector(cfg, scores)?;
    for (a, inj) in excited.iter_mut().zip(&input) {
        *a += cfg.input_gain * inj;
    }

    // 4. Global inhibition.
    let mean = excited.iter().sum::<f64>() / n as f64;
    for a in excited.iter_mut() {
        *a = (*a - cfg.inhibition * mean).max(0.0);
    }

    // 5. Renormalize.
    Ok(normalized(excited, &input))
}

/// Runs the attractor over a query score sequence: init on the first input,
/// step on each subsequent one. Returns `(best place, peak activity)` per
/// frame.
pub fn cann_run(inputs: &[&[f64]], cfg: &CannConfig) -> Result<Vec<(usize, f64)>, CannError> {
    if inputs.is_empty() {
        return Err(CannError::EmptyInput);
    }
    let mut state = cann_init(cfg, inputs[0])?;
    let mut readout = Vec::with_capacity(inputs.len());
    readout.push(state.peak_place());
    for scores in &inputs[1..] {
        state = cann_step(&state, scores, cfg)?;
        readout.push(state.peak_place());
    }
    Ok(readout)
}

/// Dumps per-step activities as `step,unit,activity` CSV for plotting.
pub fn write_activity_trace(
    path: &Path,
    states: &[CannState],
    comment: Option<&str>,
) -> Result<(), CannError> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("step,unit,activity\n");
    for (step, state) in states.iter().enumerate() {
        for (unit, a) in state.activity.iter().enumerate() {
            out.push_str(&format!("{step},{unit},{a}\n"));
        }
    }
    fs::write(path, out).map_err(|e| CannError::Io { path: path.to_path_buf(), source: e })
}

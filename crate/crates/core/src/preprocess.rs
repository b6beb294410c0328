//! Resampling, amplitude normalization and epoch cutting.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::sinc;
use crate::error::{Error, Result};
use crate::signal_io::{check_rate, BinaryMask, Recording};

pub const DEFAULT_HALF_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub source_rate_hz: f64,
    pub target_rate_hz: f64,
    /// Kernel half-width in zero crossings of the lower of the two rates.
    pub kernel_half_width_zero_crossings: usize,
}

impl ResampleSpec {
    pub fn new(source_rate_hz: f64, target_rate_hz: f64) -> Self {
        Self { source_rate_hz, target_rate_hz, kernel_half_width_zero_crossings: DEFAULT_HALF_WIDTH }
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.source_rate_hz)?;
        check_rate(self.target_rate_hz)?;
        if self.kernel_half_width_zero_crossings == 0 {
            return Err(Error::InvalidConfig("kernel half-width must be at least 1".into()));
        }
        Ok(())
    }

    /// Cutoff as a fraction of the source Nyquist frequency.
    fn bandwidth(&self) -> f64 {
        (self.target_rate_hz / self.source_rate_hz).min(1.0)
    }

    /// Kernel half-support in source samples.
    fn half_support(&self) -> f64 {
        self.kernel_half_width_zero_crossings as f64 / self.bandwidth()
    }

    /// Minimum input length (source samples) the kernel needs.
    pub fn min_input_len(&self) -> usize {
        (2.0 * self.half_support()).ceil() as usize
    }

    pub fn output_len(&self, n_in: usize) -> usize {
        (n_in as f64 * self.target_rate_hz / self.source_rate_hz).round() as usize
    }
}

/// Hann-windowed sinc kernel evaluated at `tau` source samples from the output point.
fn kernel(tau: f64, bandwidth: f64, half_support: f64) -> f64 {
    if tau.abs() >= half_support {
        return 0.0;
    }
    let w = (PI * tau / (2.0 * half_support)).cos();
    bandwidth * sinc(bandwidth * tau) * w * w
}

/// Integer up/down factors when both rates are whole numbers and the phase
/// table stays small.
fn rational_factors(spec: &ResampleSpec) -> Option<(u64, u64)> {
    let (s, t) = (spec.source_rate_hz, spec.target_rate_hz);
    if s.fract() != 0.0 || t.fract() != 0.0 || s > 1e9 || t > 1e9 {
        return None;
    }
    let (s, t) = (s as u64, t as u64);
    let g = gcd(s, t);
    let (up, down) = (t / g, s / g);
    (up <= 4096).then_some((up, down))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Taps for one output position `u = base + frac` (source samples).
/// Returns the first source index and the normalized weights.
fn taps_for(frac: f64, bandwidth: f64, half_support: f64) -> (i64, Vec<f64>) {
    let reach = half_support.ceil() as i64;
    let first = -reach;
    let mut w: Vec<f64> = (first..=reach + 1).map(|j| kernel(frac - j as f64, bandwidth, half_support)).collect();
    // Unit DC gain per phase.
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    (first, w)
}

fn apply_taps(x: &[f64], base: i64, first: i64, taps: &[f64]) -> f64 {
    let start = base + first;
    let mut acc = 0.0;
    for (j, &h) in taps.iter().enumerate() {
        let k = start + j as i64;
        if k >= 0 && (k as usize) < x.len() {
            acc += x[k as usize] * h;
        }
    }
    acc
}

/// Band-limited resampling with a Hann-windowed sinc kernel. The anti-alias
/// cutoff sits at half the lower rate; samples outside the input are zero.
pub fn resample(rec: &Recording, spec: &ResampleSpec) -> Result<Recording> {
    spec.validate()?;
    if (rec.sample_rate_hz - spec.source_rate_hz).abs() > 1e-9 * spec.source_rate_hz {
        return Err(Error::InvalidConfig(format!(
            "recording rate {} Hz does not match resample source rate {} Hz",
            rec.sample_rate_hz, spec.source_rate_hz
        )));
    }
    if spec.source_rate_hz == spec.target_rate_hz {
        return Ok(rec.clone());
    }
    let needed = spec.min_input_len();
    if rec.len() < needed {
        return Err(Error::InputTooShort { needed, got: rec.len() });
    }
    let samples = resample_samples(&rec.samples, spec);
    Recording::new(samples, spec.target_rate_hz, rec.subject_id.clone())
}

fn resample_samples(x: &[f64], spec: &ResampleSpec) -> Vec<f64> {
    let bw = spec.bandwidth();
    let hs = spec.half_support();
    let n_out = spec.output_len(x.len());
    match rational_factors(spec) {
        Some((up, down)) => {
            let phases: Vec<(i64, Vec<f64>)> =
                (0..up).map(|p| taps_for(p as f64 / up as f64, bw, hs)).collect();
            (0..n_out as u64)
                .map(|m| {
                    let pos = m * down;
                    let base = (pos / up) as i64;
                    let (first, taps) = &phases[(pos % up) as usize];
                    apply_taps(x, base, *first, taps)
                })
                .collect()
        }
        None => {
            let step = spec.source_rate_hz / spec.target_rate_hz;
            (0..n_out)
                .map(|m| {
                    let u = m as f64 * step;
                    let base = u.floor();
                    let (first, taps) = taps_for(u - base, bw, hs);
                    apply_taps(x, base as i64, first, &taps)
                })
                .collect()
        }
    }
}

/// Maps the amplitude range onto `[-1, 1]`; a constant input maps to zeros.
pub fn minmax_scale(rec: &Recording) -> Recording {
    let mut out = rec.clone();
    minmax_scale_in_place(&mut out.samples);
    out
}

pub fn minmax_scale_in_place(x: &mut [f64]) {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    x.iter_mut().for_each(|v| *v = 2.0 * (*v - lo) / range - 1.0);
}

/// One fixed-length training example.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPair {
    pub signal: Vec<f32>,
    pub target: Vec<f32>,
}

impl EpochPair {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

pub fn epoch_len(epoch_seconds: f64, rate_hz: f64) -> usize {
    (epoch_seconds * rate_hz).round() as usize
}

/// Consecutive non-overlapping windows; a trailing partial window is dropped.
pub fn epochize(rec: &Recording, mask: &BinaryMask, epoch_seconds: f64) -> Result<Vec<EpochPair>> {
    if mask.len() != rec.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} != recording length {}",
            mask.len(),
            rec.len()
        )));
    }
    if (mask.sample_rate_hz - rec.sample_rate_hz).abs() > 1e-9 * rec.sample_rate_hz {
        return Err(Error::ShapeMismatch("mask and recording sample rates differ".into()));
    }
    let len = epoch_len(epoch_seconds, rec.sample_rate_hz);
    if len == 0 {
        return Err(Error::InvalidConfig("epoch length is zero samples".into()));
    }
    Ok(rec
        .samples
        .chunks_exact(len)
        .zip(mask.values.chunks_exact(len))
        .map(|(s, m)| EpochPair {
            signal: s.iter().map(|&v| v as f32).collect(),
            target: m.iter().map(|&v| v as f32).collect(),
        })
        .collect())
}

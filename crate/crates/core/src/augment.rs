//! Stochastic training-time augmentation: amplitude scaling, additive
//! Gaussian noise and polarity inversion, applied in that order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub p_scale: f64,
    pub scale_range: (f64, f64),
    pub p_noise: f64,
    /// Upper bound of the noise SD as a fraction of the signal's peak-to-peak range.
    pub noise_level_max: f64,
    pub p_invert: f64,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_scale: 0.5,
            scale_range: (0.5, 2.0),
            p_noise: 0.5,
            noise_level_max: 0.005,
            p_invert: 0.2,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { p_scale: 0.0, p_noise: 0.0, p_invert: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_scale", self.p_scale), ("p_noise", self.p_noise), ("p_invert", self.p_invert)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        let (a, b) = self.scale_range;
        if !(a > 0.0 && a <= b && b.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale_range must satisfy 0 < a <= b, got ({a}, {b})")));
        }
        if !(self.noise_level_max >= 0.0 && self.noise_level_max.is_finite()) {
            return Err(Error::InvalidConfig("noise_level_max must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn apply_scale(x: &[f32], alpha: f64) -> Vec<f32> {
    x.iter().map(|&v| (v as f64 * alpha) as f32).collect()
}

pub fn apply_noise<R: Rng + ?Sized>(x: &[f32], sigma: f64, rng: &mut R) -> Vec<f32> {
    if sigma <= 0.0 {
        return x.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    x.iter().map(|&v| (v as f64 + normal.sample(rng)) as f32).collect()
}

pub fn apply_invert(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| -v).collect()
}

/// What the pipeline did to one example.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Applied {
    pub scale: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub inverted: bool,
}

pub fn apply_pipeline<R: Rng + ?Sized>(x: &[f32], cfg: &AugmentConfig, rng: &mut R) -> Vec<f32> {
    apply_pipeline_traced(x, cfg, rng).0
}

/// Runs scale -> noise -> invert, each independently with its probability.
///
/// Every operator consumes one uniform draw for its coin flip, followed by
/// its parameter draws only when applied.
pub fn apply_pipeline_traced<R: Rng + ?Sized>(x: &[f32], cfg: &AugmentConfig, rng: &mut R) -> (Vec<f32>, Applied) {
    let mut applied = Applied::default();
    let mut out = x.to_vec();

    if rng.random::<f64>() < cfg.p_scale {
        let (a, b) = cfg.scale_range;
        let alpha = if a < b { Uniform::new(a, b).expect("a < b").sample(rng) } else { a };
        out = apply_scale(&out, alpha);
        applied.scale = Some(alpha);
    }

    if rng.random::<f64>() < cfg.p_noise {
        let range = peak_to_peak(&out);
        let max_sigma = cfg.noise_level_max * range;
        let sigma = if max_sigma > 0.0 { rng.random::<f64>() * max_sigma } else { 0.0 };
        out = apply_noise(&out, sigma, rng);
        applied.noise_sigma = Some(sigma);
    }

    if rng.random::<f64>() < cfg.p_invert {
        out = apply_invert(&out);
        applied.inverted = true;
    }

    (out, applied)
}

fn peak_to_peak(x: &[f32]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if x.is_empty() {
        0.0
    } else {
        (hi - lo) as f64
    }
}

/// Independent stream per `(seed, epoch, example)` so batches can be built in
/// any order and still match serial assembly.
pub fn example_rng(seed: u64, epoch: u64, example: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch << 32) ^ example);
    rng
}

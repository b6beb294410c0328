//! Synthetic single-channel recordings with known SWD, sleep and noise
//! ground truth.
//!
//! Background is 1/f noise. Sleep adds a slow oscillation whose frequency
//! wanders within 0.7-3.5 Hz and whose amplitude is gently modulated. Each SWD is a harmonic stack at its own fundamental
//! with one sharp spike per cycle. Noise events are short rail-to-rail
//! square bursts far above the rest of the signal.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::shape_spectrum;
use crate::error::{Error, Result};
use crate::events::SWD_LABEL;
use crate::signal_io::{seconds_to_index, EventSet, Interval, Recording};
use crate::states::{NOISE_LABEL, SLEEP_LABEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub subject_id: String,
    pub background_sd: f64,
    pub swd_rate_per_hour: f64,
    pub swd_duration_mean_s: f64,
    pub swd_duration_sd_s: f64,
    pub swd_duration_floor_s: f64,
    pub swd_peak_hz_mean: f64,
    pub swd_peak_hz_sd: f64,
    /// RMS of an SWD burst in units of the background SD.
    pub swd_amplitude_ratio: f64,
    pub sleep_fraction: f64,
    /// SD of the sleep component in units of the background SD.
    pub sleep_amplitude_ratio: f64,
    pub noise_events_per_hour: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 3600.0,
            rate_hz: 100.0,
            subject_id: "synth".into(),
            background_sd: 50.0,
            swd_rate_per_hour: 23.55,
            swd_duration_mean_s: 5.83,
            swd_duration_sd_s: 2.37,
            swd_duration_floor_s: 1.0,
            swd_peak_hz_mean: 5.72,
            swd_peak_hz_sd: 0.75,
            swd_amplitude_ratio: 4.0,
            sleep_fraction: 0.3,
            sleep_amplitude_ratio: 3.0,
            noise_events_per_hour: 2.0,
            seed: 0,
        }
    }
}

/// Fundamentals are drawn from a normal truncated at this many SDs.
pub const PEAK_HZ_CLIP_SD: f64 = 2.5;
/// Minimum number of spike-wave cycles per event.
pub const MIN_CYCLES: f64 = 5.5;
pub const SLEEP_BOUT_RANGE_S: (f64, f64) = (60.0, 300.0);
pub const SLEEP_MIN_GAP_S: f64 = 30.0;
/// Range of the sleep oscillation's wandering frequency.
pub const SLEEP_FREQ_RANGE_HZ: (f64, f64) = (0.7, 3.5);
/// Relative SD of the sleep oscillation's amplitude modulation.
pub const SLEEP_AM_DEPTH: f64 = 0.25;
const SLEEP_WANDER_HZ: f64 = 0.05;
pub const NOISE_DURATION_RANGE_S: (f64, f64) = (0.1, 0.5);
/// Noise burst amplitude range, in SDs of the signal before bursts are added.
pub const NOISE_AMPLITUDE_RANGE_SD: (f64, f64) = (30.0, 60.0);
/// Minimum spacing between any two SWD or noise events.
pub const EVENT_MARGIN_S: f64 = 2.0;
const TAPER_S: f64 = 0.25;
const SPIKE_WIDTH_S: f64 = 0.008;
const MAX_ATTEMPTS: usize = 10_000;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be > 0, got {}", self.duration_s));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::NonPositiveRate(self.rate_hz));
        }
        if self.swd_peak_hz_mean + PEAK_HZ_CLIP_SD * self.swd_peak_hz_sd >= self.rate_hz / 2.0 {
            return bad("SWD fundamentals must stay below Nyquist".into());
        }
        for (name, v) in [
            ("swd_rate_per_hour", self.swd_rate_per_hour),
            ("noise_events_per_hour", self.noise_events_per_hour),
            ("swd_duration_sd_s", self.swd_duration_sd_s),
            ("swd_peak_hz_sd", self.swd_peak_hz_sd),
            ("sleep_amplitude_ratio", self.sleep_amplitude_ratio),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.swd_amplitude_ratio > 1.0) {
            return bad(format!("swd_amplitude_ratio must be > 1, got {}", self.swd_amplitude_ratio));
        }
        if !(self.background_sd > 0.0) || !(self.swd_peak_hz_mean > 0.0) || !(self.swd_duration_floor_s > 0.0) {
            return bad("background_sd, swd_peak_hz_mean and swd_duration_floor_s must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.sleep_fraction) {
            return bad(format!("sleep_fraction must be in [0, 1], got {}", self.sleep_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub recording: Recording,
    pub swd: EventSet,
    pub sleep: EventSet,
    pub noise: EventSet,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn unit_sd(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

fn gaussian_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Raised-cosine edge weight for position `t` within `[0, d]`.
fn taper(t: f64, d: f64, edge: f64) -> f64 {
    let edge = edge.min(d / 2.0);
    if edge <= 0.0 {
        return 1.0;
    }
    let u = (t.min(d - t) / edge).clamp(0.0, 1.0);
    0.5 - 0.5 * (PI * u).cos()
}

/// Places `durations` (in the given order) uniformly at random so that no
/// two placed intervals, nor any interval in `occupied`, come closer than
/// `margin`.
fn place(
    durations: &[f64],
    total: f64,
    margin: f64,
    occupied: &mut Vec<(f64, f64)>,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Result<Vec<(f64, f64)>> {
    let mut placed = Vec::with_capacity(durations.len());
    for &d in durations {
        if d > total {
            return Err(Error::CapacityExceeded(format!("{what} of {d:.1} s exceeds the {total:.1} s recording")));
        }
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let start = rng.random::<f64>() * (total - d);
            let end = start + d;
            if occupied.iter().all(|&(s, e)| end + margin <= s || start >= e + margin) {
                ok = Some((start, end));
                break;
            }
        }
        let iv = ok.ok_or_else(|| Error::CapacityExceeded(format!("could not place all {what} events")))?;
        occupied.push(iv);
        placed.push(iv);
    }
    Ok(placed)
}

fn to_event_set(mut ivs: Vec<(f64, f64)>, label: &str, total: f64) -> Result<EventSet> {
    ivs.sort_by(|a, b| a.0.total_cmp(&b.0));
    EventSet::new(ivs.into_iter().map(|(s, e)| Interval::new(s, e, label)).collect(), total)
}

fn sample_range(start: f64, end: f64, rate: f64, n: usize) -> std::ops::Range<usize> {
    seconds_to_index(start, rate).min(n)..seconds_to_index(end, rate).min(n)
}

/// Unit-amplitude spike-wave waveform at fundamental `f0`, `t` seconds
/// into the burst.
fn spike_wave(t: f64, f0: f64, phase: f64) -> f64 {
    let theta = 2.0 * PI * f0 * t + phase;
    let harmonics = theta.sin() + 0.5 * (2.0 * theta).sin() + 0.25 * (3.0 * theta).sin();
    let cycle = 1.0 / f0;
    // Signed offset from the nearest spike, which sits on the fundamental trough.
    let rel = ((theta / (2.0 * PI) - 0.25).rem_euclid(1.0) - 0.5) * cycle;
    let spike = -2.0 * (-(rel / SPIKE_WIDTH_S).powi(2) / 2.0).exp();
    harmonics + spike
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let rate = cfg.rate_hz;
    let total = cfg.duration_s;
    let n = (total * rate).round() as usize;
    if n == 0 {
        return Err(Error::InvalidConfig("recording would have zero samples".into()));
    }

    let mut bg_rng = stream(cfg.seed, 1);
    let mut x = shape_spectrum(&gaussian_noise(n, &mut bg_rng), rate, |f| 1.0 / f.max(0.5).sqrt());
    unit_sd(&mut x);
    x.iter_mut().for_each(|v| *v *= cfg.background_sd);

    // Sleep bouts, then the band-limited component over them.
    let mut sleep_rng = stream(cfg.seed, 2);
    let target = cfg.sleep_fraction * total;
    if target > 0.0 && target + SLEEP_MIN_GAP_S * (target / SLEEP_BOUT_RANGE_S.0).ceil() > total {
        return Err(Error::CapacityExceeded(format!("sleep fraction {} leaves no room between bouts", cfg.sleep_fraction)));
    }
    let mut bouts = Vec::new();
    let mut covered = 0.0;
    while covered < target {
        let d = sleep_rng.random_range(SLEEP_BOUT_RANGE_S.0..SLEEP_BOUT_RANGE_S.1);
        let d = d.min((target - covered).max(SLEEP_BOUT_RANGE_S.0)).min(total);
        bouts.push(d);
        covered += d;
    }
    let mut sleep_occupied = Vec::new();
    let sleep_ivs = place(&bouts, total, SLEEP_MIN_GAP_S, &mut sleep_occupied, &mut sleep_rng, "sleep")?;
    if !sleep_ivs.is_empty() {
        let slow = |rng: &mut ChaCha8Rng| {
            let mut v = shape_spectrum(&gaussian_noise(n, rng), rate, |f| f64::from(u8::from(f <= SLEEP_WANDER_HZ)));
            unit_sd(&mut v);
            v
        };
        let (freq, depth) = (slow(&mut sleep_rng), slow(&mut sleep_rng));
        let (f_lo, f_hi) = SLEEP_FREQ_RANGE_HZ;
        let centre = (f_lo + f_hi) / 2.0;
        let mut phase = 0.0;
        let mut wave: Vec<f64> = (0..n)
            .map(|i| {
                phase += 2.0 * PI * (centre + 0.4 * (f_hi - f_lo) / 2.0 * freq[i]).clamp(f_lo, f_hi) / rate;
                (1.0 + SLEEP_AM_DEPTH * depth[i]).max(0.3) * phase.sin()
            })
            .collect();
        unit_sd(&mut wave);
        let amp = cfg.sleep_amplitude_ratio * cfg.background_sd;
        for &(s, e) in &sleep_ivs {
            for i in sample_range(s, e, rate, n) {
                let t = i as f64 / rate - s;
                x[i] += amp * taper(t, e - s, 2.0) * wave[i];
            }
        }
    }

    // SWD and noise events share one occupancy list and stay out of sleep.
    let mut ev_rng = stream(cfg.seed, 3);
    let hours = total / 3600.0;
    let count = |rng: &mut ChaCha8Rng, per_hour: f64| -> usize {
        let lambda = per_hour * hours;
        if lambda > 0.0 {
            Poisson::new(lambda).expect("positive mean").sample(rng) as usize
        } else {
            0
        }
    };
    let n_swd = count(&mut ev_rng, cfg.swd_rate_per_hour);
    let n_noise = count(&mut ev_rng, cfg.noise_events_per_hour);

    let f0_dist = Normal::new(cfg.swd_peak_hz_mean, cfg.swd_peak_hz_sd).expect("finite sd");
    let dur_dist = Normal::new(cfg.swd_duration_mean_s, cfg.swd_duration_sd_s).expect("finite sd");
    let (f_lo, f_hi) = (
        cfg.swd_peak_hz_mean - PEAK_HZ_CLIP_SD * cfg.swd_peak_hz_sd,
        cfg.swd_peak_hz_mean + PEAK_HZ_CLIP_SD * cfg.swd_peak_hz_sd,
    );
    let mut swd_params = Vec::with_capacity(n_swd);
    for _ in 0..n_swd {
        let f0 = f0_dist.sample(&mut ev_rng).clamp(f_lo.max(0.5), f_hi);
        let floor = cfg.swd_duration_floor_s.max(MIN_CYCLES / f0);
        let mut d = dur_dist.sample(&mut ev_rng);
        let mut tries = 0;
        while d < floor && tries < 1000 {
            d = dur_dist.sample(&mut ev_rng);
            tries += 1;
        }
        let d = d.max(floor);
        let phase = ev_rng.random::<f64>() * 2.0 * PI;
        swd_params.push((f0, d, phase));
    }
    let noise_params: Vec<(f64, f64, f64, f64)> = (0..n_noise)
        .map(|_| {
            let d = ev_rng.random_range(NOISE_DURATION_RANGE_S.0..NOISE_DURATION_RANGE_S.1);
            let amp = ev_rng.random_range(NOISE_AMPLITUDE_RANGE_SD.0..NOISE_AMPLITUDE_RANGE_SD.1);
            let freq = ev_rng.random_range(5.0..(rate / 4.0).max(5.5));
            let sign = if ev_rng.random::<bool>() { 1.0 } else { -1.0 };
            (d, amp, freq, sign)
        })
        .collect();

    let mass: f64 = swd_params.iter().map(|p| p.1 + EVENT_MARGIN_S).sum::<f64>()
        + noise_params.iter().map(|p| p.0 + EVENT_MARGIN_S).sum::<f64>();
    let awake = total - sleep_ivs.iter().map(|(s, e)| e - s).sum::<f64>();
    if mass > 0.5 * awake {
        return Err(Error::CapacityExceeded(format!("{mass:.1} s of events requested in a {total:.1} s recording")));
    }
    let mut occupied = sleep_ivs.clone();
    let noise_ivs = place(&noise_params.iter().map(|p| p.0).collect::<Vec<_>>(), total, EVENT_MARGIN_S, &mut occupied, &mut ev_rng, "noise")?;
    let swd_ivs = place(&swd_params.iter().map(|p| p.1).collect::<Vec<_>>(), total, EVENT_MARGIN_S, &mut occupied, &mut ev_rng, "SWD")?;

    for (&(s, e), &(f0, d, phase)) in swd_ivs.iter().zip(&swd_params) {
        let range = sample_range(s, e, rate, n);
        let wave: Vec<f64> = range.clone().map(|i| spike_wave(i as f64 / rate - s, f0, phase)).collect();
        let rms = (wave.iter().map(|v| v * v).sum::<f64>() / wave.len().max(1) as f64).sqrt();
        let amp = cfg.swd_amplitude_ratio * cfg.background_sd / rms.max(1e-12);
        for (i, w) in range.zip(wave) {
            x[i] += amp * w * taper(i as f64 / rate - s, d, TAPER_S);
        }
    }

    let sd0 = {
        let mean = x.iter().sum::<f64>() / n as f64;
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    for (&(s, e), &(_, amp, freq, sign)) in noise_ivs.iter().zip(&noise_params) {
        for i in sample_range(s, e, rate, n) {
            let phase = (i as f64 / rate - s) * freq;
            let square = if phase.rem_euclid(1.0) < 0.5 { sign } else { -sign };
            x[i] = amp * sd0 * square;
        }
    }

    let recording = Recording::new(x, rate, cfg.subject_id.clone())?;
    Ok(SynthOutput {
        recording,
        swd: to_event_set(swd_ivs, SWD_LABEL, total)?,
        sleep: to_event_set(sleep_ivs, SLEEP_LABEL, total)?,
        noise: to_event_set(noise_ivs, NOISE_LABEL, total)?,
    })
}

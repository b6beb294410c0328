//! Rule-based noise and sleep epoch detection, plus the fraction of events
//! that fall inside a state.

use serde::{Deserialize, Serialize};

use crate::dsp::{bandpass_fir, envelope, filter_zero_phase};
use crate::error::{Error, Result};
use crate::signal_io::{EventSet, Interval, Recording};

pub const NOISE_LABEL: &str = "noise";
pub const SLEEP_LABEL: &str = "sleep";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Noise,
    Sleep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Thresholds {
    Noise { mean: f64, sd: f64, k_sd: f64, block_s: f64 },
    Sleep { wake_peak: f64, sleep_peak: f64, lower: f64, secondary: f64 },
    /// No usable second mode was found.
    Unimodal { peak: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEpochs {
    pub kind: StateKind,
    pub intervals: EventSet,
    pub thresholds: Thresholds,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub block_s: f64,
    pub k_sd: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { block_s: 5.0, k_sd: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SleepParams {
    pub band_hz: (f64, f64),
    pub bins: usize,
    /// Upper edge of the histogram as a percentile of the envelope.
    pub upper_percentile: f64,
    pub smooth_sigma_bins: f64,
    /// Minimum distance between the two modes, as a fraction of the histogram range.
    pub min_separation: f64,
    /// Minimum height of the second mode relative to the first.
    pub min_relative_height: f64,
    /// The lowest point between the modes must be at most this fraction of
    /// the smaller mode.
    pub max_valley_ratio: f64,
    pub merge_gap_s: f64,
    pub min_duration_s: f64,
}

impl Default for SleepParams {
    fn default() -> Self {
        Self {
            band_hz: (0.1, 4.0),
            bins: 256,
            upper_percentile: 99.5,
            smooth_sigma_bins: 3.0,
            min_separation: 0.1,
            min_relative_height: 0.02,
            max_valley_ratio: 0.75,
            merge_gap_s: 20.0,
            min_duration_s: 60.0,
        }
    }
}

/// Merges intervals whose gap is below `gap` (touching or overlapping ones
/// always merge). Input need not be sorted.
pub fn merge_close(mut ivs: Vec<(f64, f64)>, gap: f64) -> Vec<(f64, f64)> {
    ivs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(ivs.len());
    for (s, e) in ivs {
        match out.last_mut() {
            Some(last) if s - last.1 < gap || s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn event_set(ivs: Vec<(f64, f64)>, label: &str, total: f64) -> Result<EventSet> {
    EventSet::new(ivs.into_iter().map(|(s, e)| Interval::new(s, e, label)).collect(), total)
}

/// Flags every `block_s` block (the last one may be shorter) holding a
/// sample at least `k_sd` population SDs from the recording mean.
pub fn detect_noise(rec: &Recording, params: &NoiseParams) -> Result<StateEpochs> {
    let rate = rec.sample_rate_hz;
    let block = (params.block_s * rate).round() as usize;
    if block == 0 || !(params.k_sd > 0.0) {
        return Err(Error::InvalidConfig("block_s and k_sd must be positive".into()));
    }
    if rec.len() < block {
        return Err(Error::InputTooShort { needed: block, got: rec.len() });
    }
    let n = rec.len() as f64;
    let mean = rec.samples.iter().sum::<f64>() / n;
    let sd = (rec.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let limit = params.k_sd * sd;
    let total = rec.duration_s();
    let flagged: Vec<(f64, f64)> = rec
        .samples
        .chunks(block)
        .enumerate()
        .filter(|(_, c)| sd > 0.0 && c.iter().any(|v| (v - mean).abs() >= limit))
        .map(|(b, c)| ((b * block) as f64 / rate, (b * block + c.len()) as f64 / rate))
        .collect();
    Ok(StateEpochs {
        kind: StateKind::Noise,
        intervals: event_set(merge_close(flagged, 0.0), NOISE_LABEL, total)?,
        thresholds: Thresholds::Noise { mean, sd, k_sd: params.k_sd, block_s: params.block_s },
        diagnostic: None,
    })
}

/// Band-passed Hilbert envelope used by [`detect_sleep`].
pub fn sleep_envelope(rec: &Recording, params: &SleepParams) -> Vec<f64> {
    let (lo, hi) = params.band_hz;
    let kernel = bandpass_fir(lo, hi, rec.sample_rate_hz);
    envelope(&filter_zero_phase(&rec.samples, &kernel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl Histogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * (self.hi - self.lo) / self.counts.len() as f64
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = (p / 100.0) * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[sorted.len() - 1]
    }
}

/// Histogram over `[min, percentile]`, with values above the upper edge left
/// out, smoothed by a Gaussian kernel.
pub fn envelope_histogram(env: &[f64], params: &SleepParams) -> Histogram {
    let mut sorted = env.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let mut hi = percentile(&sorted, params.upper_percentile);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let bins = params.bins.max(2);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in env {
        if v <= hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1.0;
        }
    }
    let s = params.smooth_sigma_bins;
    let smoothed = if s > 0.0 {
        let half = (4.0 * s).ceil() as isize;
        let kernel: Vec<f64> = (-half..=half).map(|k| (-(k as f64 / s).powi(2) / 2.0).exp()).collect();
        (0..bins as isize)
            .map(|i| {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (j, w) in (-half..=half).zip(&kernel) {
                    let idx = i + j;
                    if idx >= 0 && (idx as usize) < bins {
                        acc += w * counts[idx as usize];
                        wsum += w;
                    }
                }
                acc / wsum
            })
            .collect()
    } else {
        counts.clone()
    };
    Histogram { lo, hi, counts, smoothed }
}

/// Bin indices of the two dominant modes, low first.
pub fn two_modes(h: &Histogram, params: &SleepParams) -> Option<(usize, usize)> {
    let y = &h.smoothed;
    let n = y.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { y[i - 1] };
            let right = if i + 1 == n { f64::NEG_INFINITY } else { y[i + 1] };
            y[i] > left && y[i] >= right && y[i] > 0.0
        })
        .collect();
    peaks.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    let first = *peaks.first()?;
    let min_sep = params.min_separation * n as f64;
    let second = peaks.iter().copied().skip(1).find(|&p| {
        let (a, b) = (first.min(p), first.max(p));
        let valley = y[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
        (b - a) as f64 >= min_sep && y[p] >= params.min_relative_height * y[first] && valley <= params.max_valley_ratio * y[p]
    })?;
    Some((first.min(second), first.max(second)))
}

/// Everything computed on the way to sleep epochs, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct SleepAnalysis {
    pub envelope: Vec<f64>,
    pub histogram: Histogram,
    pub epochs: StateEpochs,
}

pub fn detect_sleep(rec: &Recording, params: &SleepParams) -> Result<StateEpochs> {
    analyze_sleep(rec, params).map(|a| a.epochs)
}

/// Envelope thresholding between the wake (low) and sleep (high) modes of
/// the envelope distribution. Runs above the midpoint that also reach the
/// sleep mode are kept, then runs closer than `merge_gap_s` are joined.
pub fn analyze_sleep(rec: &Recording, params: &SleepParams) -> Result<SleepAnalysis> {
    let rate = rec.sample_rate_hz;
    let needed = (params.min_duration_s * rate).ceil() as usize;
    if rec.len() < needed {
        return Err(Error::InputTooShort { needed, got: rec.len() });
    }
    let (lo, hi) = params.band_hz;
    if !(lo > 0.0 && lo < hi && hi < rate / 2.0) {
        return Err(Error::InvalidConfig(format!("sleep band ({lo}, {hi}) Hz is invalid at {rate} Hz")));
    }
    let env = sleep_envelope(rec, params);
    let histogram = envelope_histogram(&env, params);
    let total = rec.duration_s();

    let Some((a, b)) = two_modes(&histogram, params) else {
        let peak = histogram
            .smoothed
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| histogram.bin_center(i));
        return Ok(SleepAnalysis {
            envelope: env,
            histogram,
            epochs: StateEpochs {
                kind: StateKind::Sleep,
                intervals: EventSet::empty(total),
                thresholds: Thresholds::Unimodal { peak },
                diagnostic: Some("envelope distribution is unimodal; no sleep epochs".into()),
            },
        });
    };
    let wake_peak = histogram.bin_center(a);
    let sleep_peak = histogram.bin_center(b);
    let lower = (wake_peak + sleep_peak) / 2.0;
    let secondary = sleep_peak;

    let mut candidates = Vec::new();
    let mut i = 0;
    while i < env.len() {
        if env[i] >= lower {
            let start = i;
            let mut peak = env[i];
            while i < env.len() && env[i] >= lower {
                peak = peak.max(env[i]);
                i += 1;
            }
            if peak >= secondary {
                candidates.push((start as f64 / rate, i as f64 / rate));
            }
        } else {
            i += 1;
        }
    }
    let merged = merge_close(candidates, params.merge_gap_s);
    Ok(SleepAnalysis {
        envelope: env,
        histogram,
        epochs: StateEpochs {
            kind: StateKind::Sleep,
            intervals: event_set(merged, SLEEP_LABEL, total)?,
            thresholds: Thresholds::Sleep { wake_peak, sleep_peak, lower, secondary },
            diagnostic: None,
        },
    })
}

/// Fraction of `events` overlapping any interval of `state`; 0 without events.
pub fn proportion_in_state(events: &EventSet, state: &StateEpochs) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    let hits = events.iter().filter(|e| state.intervals.iter().any(|s| e.overlaps(s))).count();
    hits as f64 / events.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn normal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn blocks(s: &StateEpochs) -> Vec<(f64, f64)> {
        s.intervals.iter().map(|i| (i.start_s, i.end_s)).collect()
    }

    #[test]
    fn noise_spike_in_one_block() {
        let mut x = normal(100 * 60, 1);
        x[7 * 500 + 123] = 25.0;
        let rec = Recording::new(x, 100.0, "t").unwrap();
        let s = detect_noise(&rec, &NoiseParams::default()).unwrap();
        assert_eq!(blocks(&s), vec![(35.0, 40.0)]);
    }

    #[test]
    fn sine_has_no_noise() {
        let x: Vec<f64> = (0..6000).map(|i| (i as f64 * 0.07).sin()).collect();
        let s = detect_noise(&Recording::new(x, 100.0, "t").unwrap(), &NoiseParams::default()).unwrap();
        assert!(s.intervals.is_empty());
    }

    #[test]
    fn adjacent_noise_blocks_coalesce() {
        let mut x = normal(100 * 60, 2);
        x[3 * 500 + 10] = 60.0;
        x[4 * 500 + 490] = -60.0;
        let s = detect_noise(&Recording::new(x, 100.0, "t").unwrap(), &NoiseParams::default()).unwrap();
        assert_eq!(blocks(&s), vec![(15.0, 25.0)]);
    }

    #[test]
    fn noise_needs_one_block() {
        let rec = Recording::new(vec![0.0; 100], 100.0, "t").unwrap();
        assert!(matches!(detect_noise(&rec, &NoiseParams::default()), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn envelope_of_in_band_sine() {
        let rate = 100.0;
        let x: Vec<f64> = (0..30_000).map(|i| 3.0 * (2.0 * PI * 2.0 * i as f64 / rate).sin()).collect();
        let env = sleep_envelope(&Recording::new(x, rate, "t").unwrap(), &SleepParams::default());
        for &v in &env[5000..25_000] {
            assert!((v - 3.0).abs() <= 0.02 * 3.0, "{v}");
        }
    }

    fn alternating(bouts: &[(f64, f64)], total_s: f64, seed: u64) -> Recording {
        let rate = 100.0;
        let n = (total_s * rate) as usize;
        let mut x: Vec<f64> = normal(n, seed).into_iter().map(|v| 0.3 * v).collect();
        for &(s, e) in bouts {
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / rate;
                if t >= s && t < e {
                    *v += 3.0 * (2.0 * PI * 2.0 * t).sin();
                }
            }
        }
        Recording::new(x, rate, "t").unwrap()
    }

    fn iou(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
        let len = |v: &[(f64, f64)]| v.iter().map(|(s, e)| e - s).sum::<f64>();
        let mut inter = 0.0;
        for &(s1, e1) in a {
            for &(s2, e2) in b {
                inter += (e1.min(e2) - s1.max(s2)).max(0.0);
            }
        }
        inter / (len(a) + len(b) - inter)
    }

    #[test]
    fn alternating_sleep_is_recovered() {
        let truth: Vec<(f64, f64)> = (0..5).map(|k| (120.0 * k as f64 + 60.0, 120.0 * k as f64 + 120.0)).collect();
        let rec = alternating(&truth, 660.0, 3);
        let s = detect_sleep(&rec, &SleepParams::default()).unwrap();
        let got = blocks(&s);
        assert!(iou(&got, &truth) >= 0.9, "{got:?}");
        assert!(matches!(s.thresholds, Thresholds::Sleep { .. }));
    }

    #[test]
    fn bouts_fifteen_seconds_apart_merge() {
        let rec = alternating(&[(100.0, 160.0), (175.0, 235.0)], 400.0, 4);
        assert_eq!(detect_sleep(&rec, &SleepParams::default()).unwrap().intervals.len(), 1);
        let rec = alternating(&[(100.0, 160.0), (185.0, 245.0)], 400.0, 4);
        assert_eq!(detect_sleep(&rec, &SleepParams::default()).unwrap().intervals.len(), 2);
    }

    #[test]
    fn unimodal_gives_empty_with_diagnostic() {
        let rec = Recording::new(normal(30_000, 5), 100.0, "t").unwrap();
        let s = detect_sleep(&rec, &SleepParams::default()).unwrap();
        assert!(s.intervals.is_empty());
        assert!(s.diagnostic.is_some());
    }

    #[test]
    fn secondary_threshold_excludes_weak_candidates() {
        // Two strong bouts set the modes; a bout at ~60% of their amplitude
        // crosses the midpoint but never reaches the high mode.
        let rate = 100.0;
        let n = 900 * 100;
        let mut x: Vec<f64> = normal(n, 6).into_iter().map(|v| 0.3 * v).collect();
        for (s, e, a) in [(100.0, 300.0, 3.0), (400.0, 600.0, 3.0), (700.0, 760.0, 1.6)] {
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / rate;
                if t >= s && t < e {
                    *v += a * (2.0 * PI * 2.0 * t).sin();
                }
            }
        }
        let s = detect_sleep(&Recording::new(x, rate, "t").unwrap(), &SleepParams::default()).unwrap();
        let got = blocks(&s);
        assert_eq!(got.len(), 2, "{got:?} {:?}", s.thresholds);
        assert!(got.iter().all(|&(a, _)| a < 650.0));
    }

    #[test]
    fn proportion_examples() {
        let state = StateEpochs {
            kind: StateKind::Sleep,
            intervals: EventSet::new(vec![Interval::new(0.0, 10.0, SLEEP_LABEL)], 100.0).unwrap(),
            thresholds: Thresholds::Unimodal { peak: None },
            diagnostic: None,
        };
        let ev = |v: &[(f64, f64)]| EventSet::new(v.iter().map(|&(s, e)| Interval::new(s, e, "SWD")).collect(), 100.0).unwrap();
        assert_eq!(proportion_in_state(&ev(&[(1.0, 2.0), (3.0, 4.0)]), &state), 1.0);
        assert_eq!(proportion_in_state(&ev(&[(11.0, 12.0)]), &state), 0.0);
        let eight: Vec<(f64, f64)> = (0..8).map(|k| (5.0 + 10.0 * k as f64 - 0.5, 5.0 + 10.0 * k as f64 + 0.5)).collect();
        let mut v = eight.clone();
        v[1] = (9.5, 10.5);
        assert_eq!(proportion_in_state(&ev(&v), &state), 0.25);
        assert_eq!(proportion_in_state(&EventSet::empty(100.0), &state), 0.0);
    }

    #[test]
    fn merging_is_idempotent() {
        let ivs = vec![(0.0, 1.0), (1.0, 2.0), (25.0, 30.0), (30.5, 31.0), (80.0, 90.0)];
        let once = merge_close(ivs, 20.0);
        assert_eq!(merge_close(once.clone(), 20.0), once);
        assert_eq!(once, vec![(0.0, 2.0), (25.0, 31.0), (80.0, 90.0)]);
    }
}

//! Mask-to-event conversion, pointwise and any-overlap event scoring, and
//! per-event features (duration, Welch peak frequency).

use serde::{Deserialize, Serialize};

use crate::dsp::welch;
use crate::error::{Error, Result};
use crate::signal_io::{BinaryMask, EventSet, Interval, Recording};

pub const SWD_LABEL: &str = "SWD";

/// Post-processing applied when turning a predicted mask into events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostProcess {
    pub threshold: f64,
    pub min_duration_s: f64,
    pub merge_gap_s: f64,
}

impl Default for PostProcess {
    fn default() -> Self {
        Self { threshold: 0.5, min_duration_s: 0.5, merge_gap_s: 0.2 }
    }
}

impl PostProcess {
    /// No merging and no duration floor: runs map one-to-one onto events.
    pub fn raw() -> Self {
        Self { min_duration_s: 0.0, merge_gap_s: 0.0, ..Self::default() }
    }
}

/// Maximal runs of ones become `[start, end)` intervals. Runs separated by
/// less than `merge_gap_s` are joined first, then events shorter than
/// `min_duration_s` are dropped.
pub fn mask_to_events(mask: &BinaryMask, min_duration_s: f64, merge_gap_s: f64) -> EventSet {
    let rate = mask.sample_rate_hz;
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &v) in mask.values.iter().enumerate() {
        match (v != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.len()));
    }

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(runs.len());
    for (s, e) in runs {
        match merged.last_mut() {
            Some(last) if ((s - last.1) as f64) / rate < merge_gap_s => last.1 = e,
            _ => merged.push((s, e)),
        }
    }

    let intervals = merged
        .into_iter()
        .filter(|&(s, e)| ((e - s) as f64) / rate >= min_duration_s)
        .map(|(s, e)| Interval::new(s as f64 / rate, e as f64 / rate, SWD_LABEL))
        .collect();
    EventSet { intervals, total_duration_s: mask.len() as f64 / rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseScore {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl PointwiseScore {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self { tp, fp, fn_, tn, precision, recall, f1: harmonic(precision, recall) }
    }

    /// Sums counts of two scores and recomputes the rates.
    pub fn merge(&self, other: &Self) -> Self {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_, self.tn + other.tn)
    }
}

pub fn pointwise_metrics(pred: &BinaryMask, truth: &BinaryMask) -> Result<PointwiseScore> {
    pointwise_from_slices(&pred.values, &truth.values)
}

pub fn pointwise_from_slices(pred: &[u8], truth: &[u8]) -> Result<PointwiseScore> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} samples, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(PointwiseScore::from_counts(tp, fp, fn_, tn))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventScore {
    pub tp_pred: u64,
    pub fp_pred: u64,
    pub tp_truth: u64,
    pub fn_truth: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EventScore {
    pub fn from_counts(tp_pred: u64, fp_pred: u64, tp_truth: u64, fn_truth: u64) -> Self {
        let precision = ratio(tp_pred, tp_pred + fp_pred);
        let recall = ratio(tp_truth, tp_truth + fn_truth);
        Self { tp_pred, fp_pred, tp_truth, fn_truth, precision, recall, f1: harmonic(precision, recall) }
    }
}

/// Answers "does `[s, e)` overlap any interval of the set" in `O(log n)`.
struct OverlapIndex {
    starts: Vec<f64>,
    prefix_max_end: Vec<f64>,
}

impl OverlapIndex {
    fn new(set: &EventSet) -> Self {
        let mut spans: Vec<(f64, f64)> = set.intervals.iter().map(|iv| (iv.start_s, iv.end_s)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut running = f64::NEG_INFINITY;
        let prefix_max_end = spans
            .iter()
            .map(|&(_, e)| {
                running = running.max(e);
                running
            })
            .collect();
        Self { starts: spans.into_iter().map(|(s, _)| s).collect(), prefix_max_end }
    }

    fn hits(&self, iv: &Interval) -> bool {
        let n = self.starts.partition_point(|&s| s < iv.end_s);
        n > 0 && self.prefix_max_end[n - 1] > iv.start_s
    }
}

/// Any-overlap event scoring: a prediction is a true positive iff it
/// overlaps at least one reference event; a reference event is detected iff
/// at least one prediction overlaps it.
pub fn eventwise_metrics(pred: &EventSet, truth: &EventSet) -> EventScore {
    let truth_idx = OverlapIndex::new(truth);
    let pred_idx = OverlapIndex::new(pred);
    let tp_pred = pred.intervals.iter().filter(|iv| truth_idx.hits(iv)).count() as u64;
    let tp_truth = truth.intervals.iter().filter(|iv| pred_idx.hits(iv)).count() as u64;
    EventScore::from_counts(
        tp_pred,
        pred.len() as u64 - tp_pred,
        tp_truth,
        truth.len() as u64 - tp_truth,
    )
}

pub const PEAK_BAND_HZ: (f64, f64) = (1.0, 20.0);

/// Frequency of maximum Welch power within 1–20 Hz over the interval's
/// samples (1 s Hann segments, 50% overlap, 4x zero padding).
pub fn peak_frequency(rec: &Recording, interval: &Interval) -> Result<f64> {
    let rate = rec.sample_rate_hz;
    let segment = rate.round() as usize;
    let samples = rec.slice_seconds(interval.start_s, interval.end_s);
    if interval.duration_s() < 1.0 || samples.len() < segment {
        return Err(Error::InputTooShort { needed: segment, got: samples.len() });
    }
    let spectrum = welch(samples, rate, segment, segment / 2, 4 * segment)
        .ok_or(Error::InputTooShort { needed: segment, got: samples.len() })?;
    let hi = PEAK_BAND_HZ.1.min(rate / 2.0);
    spectrum
        .peak_in_band(PEAK_BAND_HZ.0, hi)
        .ok_or_else(|| Error::InvalidConfig(format!("no spectral bins in [{}, {hi}] Hz", PEAK_BAND_HZ.0)))
}

/// Mean and sample (n - 1) standard deviation; absent when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
        let sd = match (n, mean) {
            (n, Some(m)) if n > 1 => {
                Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
            }
            _ => None,
        };
        Self { n, mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub count: usize,
    pub rate_per_hour: f64,
    pub duration_s: Summary,
}

pub fn event_stats(events: &EventSet, total_duration_s: f64) -> EventStats {
    let durations: Vec<f64> = events.intervals.iter().map(Interval::duration_s).collect();
    let rate_per_hour = if total_duration_s > 0.0 { events.len() as f64 / (total_duration_s / 3600.0) } else { 0.0 };
    EventStats { count: events.len(), rate_per_hour, duration_s: Summary::of(&durations) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFeatures {
    pub duration_s: Vec<f64>,
    /// Peak frequency per event; `None` for events shorter than 1 s.
    pub peak_frequency_hz: Vec<Option<f64>>,
    pub rate_per_hour: f64,
    pub duration_summary: Summary,
    pub peak_frequency_summary: Summary,
}

pub fn event_features(rec: &Recording, events: &EventSet) -> EventFeatures {
    let duration_s: Vec<f64> = events.intervals.iter().map(Interval::duration_s).collect();
    let peak_frequency_hz: Vec<Option<f64>> =
        events.intervals.iter().map(|iv| peak_frequency(rec, iv).ok()).collect();
    let peaks: Vec<f64> = peak_frequency_hz.iter().flatten().copied().collect();
    let stats = event_stats(events, rec.duration_s());
    EventFeatures {
        duration_summary: stats.duration_s,
        peak_frequency_summary: Summary::of(&peaks),
        rate_per_hour: stats.rate_per_hour,
        duration_s,
        peak_frequency_hz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mask(v: &[u8], rate: f64) -> BinaryMask {
        BinaryMask { values: v.to_vec(), sample_rate_hz: rate }
    }

    fn set(spans: &[(f64, f64)]) -> EventSet {
        EventSet::from_intervals(spans.iter().map(|&(s, e)| Interval::new(s, e, SWD_LABEL)).collect()).unwrap()
    }

    fn spans(ev: &EventSet) -> Vec<(f64, f64)> {
        ev.intervals.iter().map(|iv| (iv.start_s, iv.end_s)).collect()
    }

    #[test]
    fn runs_become_intervals() {
        let ev = mask_to_events(&mask(&[0, 1, 1, 0, 1, 0], 100.0), 0.0, 0.0);
        assert_eq!(spans(&ev), vec![(0.01, 0.03), (0.04, 0.05)]);
        let ev = mask_to_events(&mask(&[1, 1, 1], 100.0), 0.0, 0.0);
        assert_eq!(spans(&ev), vec![(0.0, 0.03)]);
    }

    #[test]
    fn close_runs_merge_and_short_runs_drop() {
        let mut v = vec![0u8; 200];
        v[10..60].fill(1);
        v[70..120].fill(1);
        let ev = mask_to_events(&mask(&v, 100.0), 0.0, 0.2);
        assert_eq!(ev.len(), 1);
        assert_eq!(spans(&ev), vec![(0.1, 1.2)]);

        let mut v = vec![0u8; 200];
        v[50..80].fill(1);
        assert!(mask_to_events(&mask(&v, 100.0), 0.5, 0.2).is_empty());
    }

    #[test]
    fn pointwise_examples() {
        let s = pointwise_metrics(&mask(&[1, 0, 1, 1], 1.0), &mask(&[1, 0, 1, 1], 1.0)).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        let s = pointwise_metrics(&mask(&[1, 1, 0, 0], 1.0), &mask(&[1, 0, 1, 0], 1.0)).unwrap();
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (1, 1, 1, 1));
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));

        let s = pointwise_metrics(&mask(&[0, 0, 0], 1.0), &mask(&[0, 1, 1], 1.0)).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));

        assert!(pointwise_metrics(&mask(&[0, 0], 1.0), &mask(&[0], 1.0)).is_err());
    }

    #[test]
    fn eventwise_examples() {
        let s = eventwise_metrics(&set(&[(0.0, 2.0), (10.0, 12.0)]), &set(&[(1.0, 3.0), (20.0, 22.0)]));
        assert_eq!((s.tp_pred, s.fp_pred, s.tp_truth, s.fn_truth), (1, 1, 1, 1));
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));

        let a = set(&[(1.0, 2.0), (5.0, 9.0)]);
        let s = eventwise_metrics(&a, &a);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));

        let s = eventwise_metrics(&set(&[(0.0, 100.0)]), &set(&[(1.0, 2.0), (30.0, 40.0), (90.0, 95.0)]));
        assert_eq!((s.precision, s.recall), (1.0, 1.0));
        assert_eq!((s.tp_pred, s.tp_truth), (1, 3));
    }

    #[test]
    fn touching_events_do_not_overlap() {
        let s = eventwise_metrics(&set(&[(0.0, 1.0)]), &set(&[(1.0, 2.0)]));
        assert_eq!(s.tp_pred, 0);
    }

    fn sine_rec(freq: f64, seconds: f64) -> Recording {
        let rate = 100.0;
        let n = (seconds * rate) as usize;
        Recording::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect(), rate, "s").unwrap()
    }

    #[test]
    fn peak_frequency_of_sines() {
        for f in [6.0, 3.0] {
            let rec = sine_rec(f, 5.0);
            let pf = peak_frequency(&rec, &Interval::new(0.0, 5.0, SWD_LABEL)).unwrap();
            assert!((pf - f).abs() <= 0.5, "{f}: {pf}");
        }
        let rec = sine_rec(6.0, 5.0);
        assert!(peak_frequency(&rec, &Interval::new(0.0, 0.5, SWD_LABEL)).is_err());
    }

    #[test]
    fn stats_examples() {
        let ev = set(&(0..10).map(|i| (i as f64 * 100.0, i as f64 * 100.0 + 1.0)).collect::<Vec<_>>());
        assert!((event_stats(&ev, 3600.0).rate_per_hour - 10.0).abs() < 1e-12);

        let st = event_stats(&set(&[(0.0, 2.0), (10.0, 14.0)]), 100.0);
        assert_eq!(st.duration_s.mean, Some(3.0));
        assert!((st.duration_s.sd.unwrap() - 2f64.sqrt()).abs() < 1e-12);

        let st = event_stats(&EventSet::empty(100.0), 100.0);
        assert_eq!(st.rate_per_hour, 0.0);
        assert_eq!(st.duration_s.mean, None);
        assert_eq!(st.duration_s.sd, None);
    }
}

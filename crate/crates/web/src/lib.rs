//! Browser demo bindings. Each exported function returns a JSON string with
//! ready-to-insert SVG markup plus the numbers shown next to it.

use serde_json::json;
use wasm_bindgen::prelude::*;

use swd_core::dsp::welch;
use swd_core::events::{eventwise_metrics, peak_frequency};
use swd_core::pipeline::{classify_states, PipelineConfig};
use swd_core::preprocess::{resample, ResampleSpec};
use swd_core::render::{histogram_svg, line_plot_svg, trace_svg, TraceStyle};
use swd_core::signal_io::Recording;
use swd_core::states::{analyze_sleep, SleepParams, Thresholds};
use swd_core::synth::{generate, SynthConfig};
use swd_core::Result;

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

fn synth(seed: u64, duration_s: f64) -> Result<swd_core::synth::SynthOutput> {
    generate(&SynthConfig { duration_s, seed, subject_id: format!("synth-{seed}"), ..SynthConfig::default() })
}

/// Synthetic recording window with SWD, sleep and noise lanes.
pub fn synth_trace_json(seed: u64, duration_s: f64, start_s: f64, window_s: f64) -> Result<String> {
    let out = synth(seed, duration_s)?;
    let style = TraceStyle { width: 960, height: 220, lane_height: 12 };
    let svg = trace_svg(&out.recording, &[out.swd.clone(), out.sleep.clone(), out.noise.clone()], start_s, window_s, &style)?;
    let freqs: Vec<f64> = out.swd.iter().filter_map(|iv| peak_frequency(&out.recording, iv).ok()).collect();
    let first_swd = out.swd.iter().next().map(|iv| iv.start_s);
    Ok(json!({
        "svg": svg,
        "n_swd": out.swd.len(),
        "n_noise": out.noise.len(),
        "sleep_s": out.sleep.covered_s(),
        "swd_peak_hz": freqs,
        "first_swd_s": first_swd,
    })
    .to_string())
}

/// Welch spectra of a sine (plus a tone above the new Nyquist) before and after resampling.
pub fn resample_spectra_json(source_hz: f64, target_hz: f64, tone_hz: f64) -> Result<String> {
    let n = (30.0 * source_hz).round() as usize;
    let alias_hz = 0.45 * source_hz;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / source_hz;
            (2.0 * std::f64::consts::PI * tone_hz * t).sin() + 0.5 * (2.0 * std::f64::consts::PI * alias_hz * t).sin()
        })
        .collect();
    let rec = Recording::new(x, source_hz, "tone")?;
    let out = resample(&rec, &ResampleSpec::new(source_hz, target_hz))?;
    let spec = |r: &Recording| {
        let seg = (4.0 * r.sample_rate_hz).round() as usize;
        welch(&r.samples, r.sample_rate_hz, seg, seg / 2, seg)
    };
    let (Some(a), Some(b)) = (spec(&rec), spec(&out)) else {
        return Err(swd_core::Error::InputTooShort { needed: 0, got: n });
    };
    // Common grid up to the lower Nyquist so both curves share an axis.
    let nyq = source_hz.min(target_hz) / 2.0;
    let grid: Vec<f64> = b.freqs.iter().copied().filter(|&f| f <= nyq).collect();
    let at = |s: &swd_core::dsp::Spectrum, f: f64| {
        let k = s.freqs.partition_point(|&g| g < f).min(s.freqs.len() - 1);
        s.power[k]
    };
    let pa: Vec<f64> = grid.iter().map(|&f| at(&a, f)).collect();
    let pb: Vec<f64> = grid.iter().map(|&f| at(&b, f)).collect();
    let title = format!("PSD, {source_hz} Hz -> {target_hz} Hz (log scale)");
    let svg = line_plot_svg(&title, &grid, &[("input", &pa), ("resampled", &pb)], 960, 320, true)?;
    let gain = (b.peak_in_band(tone_hz - 1.0, tone_hz + 1.0).map_or(0.0, |f| at(&b, f))
        / a.peak_in_band(tone_hz - 1.0, tone_hz + 1.0).map_or(1.0, |f| at(&a, f)))
    .sqrt();
    Ok(json!({
        "svg": svg,
        "input_len": rec.len(),
        "output_len": out.len(),
        "peak_in_hz": a.peak_in_band(0.5, nyq),
        "peak_out_hz": b.peak_in_band(0.5, nyq),
        "tone_gain": gain,
    })
    .to_string())
}

/// Sleep envelope histogram with thresholds, and noise/sleep detection scored against the generator.
pub fn states_json(seed: u64, duration_s: f64) -> Result<String> {
    let out = synth(seed, duration_s)?;
    let cfg = PipelineConfig::default();
    let analysis = analyze_sleep(&out.recording, &SleepParams::default())?;
    let h = &analysis.histogram;
    let markers: Vec<(&str, f64)> = match analysis.epochs.thresholds {
        Thresholds::Sleep { wake_peak, lower, secondary, .. } => vec![("wake", wake_peak), ("lower", lower), ("secondary", secondary)],
        _ => vec![],
    };
    let hist = histogram_svg("0.1-4 Hz envelope", h.lo, h.hi, &h.smoothed, &markers, 960, 280)?;
    let states = classify_states(&out.recording, &cfg)?;
    let iou = interval_iou(&states.sleep.intervals, &out.sleep);
    Ok(json!({
        "svg": hist,
        "thresholds": analysis.epochs.thresholds,
        "diagnostic": analysis.epochs.diagnostic,
        "sleep_detected": states.sleep.intervals.len(),
        "sleep_truth": out.sleep.len(),
        "sleep_iou": iou,
        "noise_detected": states.noise.intervals.len(),
        "noise_truth": out.noise.len(),
        "noise_match": eventwise_metrics(&states.noise.intervals, &out.noise),
    })
    .to_string())
}

fn interval_iou(a: &swd_core::signal_io::EventSet, b: &swd_core::signal_io::EventSet) -> f64 {
    let inter: f64 = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| (x.end_s.min(y.end_s) - x.start_s.max(y.start_s)).max(0.0)))
        .sum();
    let union = a.covered_s() + b.covered_s() - inter;
    if union > 0.0 { inter / union } else { 1.0 }
}

#[wasm_bindgen]
pub fn synth_trace(seed: u32, duration_s: f64, start_s: f64, window_s: f64) -> std::result::Result<String, JsError> {
    js(synth_trace_json(seed.into(), duration_s, start_s, window_s))
}

#[wasm_bindgen]
pub fn resample_spectra(source_hz: f64, target_hz: f64, tone_hz: f64) -> std::result::Result<String, JsError> {
    js(resample_spectra_json(source_hz, target_hz, tone_hz))
}

#[wasm_bindgen]
pub fn detect_states(seed: u32, duration_s: f64) -> std::result::Result<String, JsError> {
    js(states_json(seed.into(), duration_s))
}

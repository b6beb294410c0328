//! FFT-backed signal helpers: FIR design, zero-phase filtering, analytic
//! signal and Welch spectra.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub fn fft(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
}

/// Normalized sinc, `sin(pi x) / (pi x)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn hamming_symmetric(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Hamming-windowed sinc low-pass with `taps` coefficients (odd) and unit DC gain.
pub fn lowpass_fir(cutoff_hz: f64, rate_hz: f64, taps: usize) -> Vec<f64> {
    assert!(taps % 2 == 1, "FIR length must be odd");
    let fc = cutoff_hz / rate_hz;
    let mid = (taps / 2) as f64;
    let win = hamming_symmetric(taps);
    let mut h: Vec<f64> = (0..taps).map(|i| 2.0 * fc * sinc(2.0 * fc * (i as f64 - mid)) * win[i]).collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Band-pass as the difference of two unit-gain low-passes.
///
/// The tap count is chosen so the Hamming transition band (about
/// `3.3 * rate / taps`) is no wider than the low cutoff, which keeps the
/// stopband below -50 dB.
pub fn bandpass_fir(low_hz: f64, high_hz: f64, rate_hz: f64) -> Vec<f64> {
    let mut taps = (3.3 * rate_hz / low_hz).ceil() as usize;
    if taps.is_multiple_of(2) {
        taps += 1;
    }
    let hi = lowpass_fir(high_hz, rate_hz, taps);
    let lo = lowpass_fir(low_hz, rate_hz, taps);
    hi.iter().zip(&lo).map(|(a, b)| a - b).collect()
}

/// Linear convolution with a symmetric odd-length kernel, re-centred so the
/// output aligns with the input (zero phase). Zero padding outside the signal.
pub fn filter_zero_phase(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = kernel.len();
    if n == 0 {
        return Vec::new();
    }
    let size = (n + m - 1).next_power_of_two();
    let xf = fft(x, size);
    let kf = fft(kernel, size);
    let mut prod: Vec<Complex64> = xf.iter().zip(&kf).map(|(a, b)| a * b).collect();
    ifft_in_place(&mut prod);
    let delay = m / 2;
    prod[delay..delay + n].iter().map(|c| c.re).collect()
}

/// Applies a real, even frequency response `gain(|f|)` to `x` over its
/// whole length (circular).
pub fn shape_spectrum(x: &[f64], rate_hz: f64, gain: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft(x, n);
    for (k, c) in spec.iter_mut().enumerate() {
        *c *= gain(k.min(n - k) as f64 * rate_hz / n as f64);
    }
    ifft_in_place(&mut spec);
    spec.iter().map(|c| c.re).collect()
}

/// Analytic signal by the frequency-domain method over the whole input.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft(x, n);
    let half = n / 2;
    for (k, c) in spec.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= gain;
    }
    ifft_in_place(&mut spec);
    spec
}

/// Instantaneous amplitude (magnitude of the analytic signal).
pub fn envelope(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).iter().map(|c| c.norm()).collect()
}

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    /// Frequency of maximum power within `[lo, hi]`; earliest bin on ties.
    pub fn peak_in_band(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (&f, &p) in self.freqs.iter().zip(&self.power) {
            if f < lo || f > hi {
                continue;
            }
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((f, p));
            }
        }
        best.map(|(f, _)| f)
    }
}

/// Welch-averaged one-sided periodogram with a periodic Hann window, mean
/// removal per segment and zero padding each segment to `nfft`.
///
/// Returns `None` when the input is shorter than one segment.
pub fn welch(x: &[f64], rate_hz: f64, segment: usize, hop: usize, nfft: usize) -> Option<Spectrum> {
    if segment == 0 || x.len() < segment || nfft < segment {
        return None;
    }
    let win = hann_periodic(segment);
    let norm: f64 = win.iter().map(|w| w * w).sum::<f64>() * rate_hz;
    let bins = nfft / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut count = 0usize;
    let mut planner = FftPlanner::new();
    let plan = planner.plan_fft_forward(nfft);
    let mut start = 0;
    while start + segment <= x.len() {
        let seg = &x[start..start + segment];
        let mean = seg.iter().sum::<f64>() / segment as f64;
        let mut buf: Vec<Complex64> = seg
            .iter()
            .zip(&win)
            .map(|(&v, &w)| Complex64::new((v - mean) * w, 0.0))
            .collect();
        buf.resize(nfft, Complex64::new(0.0, 0.0));
        plan.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let mut p = buf[k].norm_sqr() / norm;
            if k != 0 && !(nfft.is_multiple_of(2) && k == nfft / 2) {
                p *= 2.0;
            }
            *a += p;
        }
        count += 1;
        start += hop.max(1);
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    let freqs = (0..bins).map(|k| k as f64 * rate_hz / nfft as f64).collect();
    Some(Spectrum { freqs, power: acc })
}

/// Magnitude spectrum `|X_k| / n` for `k = 0..=n/2` with the bin frequencies.
pub fn magnitude_spectrum(x: &[f64], rate_hz: f64) -> Spectrum {
    let n = x.len();
    let spec = fft(x, n);
    let bins = n / 2 + 1;
    Spectrum {
        freqs: (0..bins).map(|k| k as f64 * rate_hz / n as f64).collect(),
        power: spec[..bins].iter().map(|c| c.norm() / n as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_of_sine_is_amplitude() {
        let rate = 100.0;
        let x: Vec<f64> = (0..6000).map(|i| 2.5 * (2.0 * PI * 2.0 * i as f64 / rate).sin()).collect();
        let env = envelope(&x);
        for v in &env[500..5500] {
            assert!((v - 2.5).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn bandpass_passes_band_and_blocks_outside() {
        let rate = 100.0;
        let h = bandpass_fir(0.1, 4.0, rate);
        assert_eq!(h.len() % 2, 1);
        let gain = |f: f64| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in h.iter().enumerate() {
                let w = 2.0 * PI * f / rate * i as f64;
                re += v * w.cos();
                im -= v * w.sin();
            }
            (re * re + im * im).sqrt()
        };
        assert!((gain(2.0) - 1.0).abs() < 0.01);
        assert!((gain(1.0) - 1.0).abs() < 0.01);
        assert!(gain(0.0) < 0.01);
        assert!(gain(6.0) < 0.01);
        assert!(gain(20.0) < 0.01);
    }

    #[test]
    fn zero_phase_filter_does_not_shift() {
        let x: Vec<f64> = (0..400).map(|i| if i == 200 { 1.0 } else { 0.0 }).collect();
        let k = lowpass_fir(10.0, 100.0, 31);
        let y = filter_zero_phase(&x, &k);
        let argmax = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 200);
        assert!((y[200] - k[15]).abs() < 1e-12);
    }

    #[test]
    fn welch_locates_sine() {
        let rate = 100.0;
        let x: Vec<f64> = (0..500).map(|i| (2.0 * PI * 7.0 * i as f64 / rate).sin()).collect();
        let s = welch(&x, rate, 100, 50, 400).unwrap();
        let f = s.peak_in_band(1.0, 20.0).unwrap();
        assert!((f - 7.0).abs() < 0.26, "{f}");
        assert!(welch(&x[..50], rate, 100, 50, 400).is_none());
    }
}

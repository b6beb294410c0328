//! Static SVG figures: signal traces with label overlays and simple line
//! or bar plots. Output is a pure function of the inputs (fixed number
//! formatting, no timestamps), so reruns are byte-identical.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::signal_io::{EventSet, Recording};

const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStyle {
    pub width: u32,
    pub height: u32,
    /// Height of each label lane under the trace.
    pub lane_height: u32,
}

impl Default for TraceStyle {
    fn default() -> Self {
        Self { width: 1200, height: 240, lane_height: 14 }
    }
}

/// `[start_s, start_s + window_s)` of `rec`, one lane per label layer.
pub fn trace_svg(rec: &Recording, layers: &[EventSet], start_s: f64, window_s: f64, style: &TraceStyle) -> Result<String> {
    if !(window_s > 0.0) || !(start_s >= 0.0) || start_s >= rec.duration_s() {
        return Err(Error::InvalidConfig(format!(
            "window [{start_s}, {start_s}+{window_s}) does not intersect the {:.3} s recording",
            rec.duration_s()
        )));
    }
    let (w, h) = (style.width as f64, style.height as f64);
    let pad = 40.0;
    let lanes = layers.len() as f64 * style.lane_height as f64;
    let total_h = h + lanes + 2.0 * pad;
    let rate = rec.sample_rate_hz;
    let i0 = (start_s * rate).floor() as usize;
    let i1 = (((start_s + window_s) * rate).ceil() as usize).min(rec.len()).max(i0 + 1);
    let seg = &rec.samples[i0..i1];
    let (lo, hi) = seg.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x_of = |t: f64| pad + (t - start_s) / window_s * (w - 2.0 * pad);
    let y_of = |v: f64| pad + (1.0 - (v - lo) / span) * h;

    let mut s = header(w, total_h);
    let _ = writeln!(
        s,
        r##"<text x="{pad}" y="{:.0}" font-size="12">{} | {:.1}-{:.1} s</text>"##,
        pad - 12.0,
        escape(&rec.subject_id),
        start_s,
        start_s + window_s
    );
    for (k, layer) in layers.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let lane_y = pad + h + 4.0 + k as f64 * style.lane_height as f64;
        for iv in layer.iter().filter(|iv| iv.end_s > start_s && iv.start_s < start_s + window_s) {
            let (a, b) = (x_of(iv.start_s.max(start_s)), x_of(iv.end_s.min(start_s + window_s)));
            let _ = writeln!(
                s,
                r##"<rect x="{a:.2}" y="{pad:.2}" width="{:.2}" height="{h:.2}" fill="{color}" fill-opacity="0.12"/>"##,
                (b - a).max(0.5)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{a:.2}" y="{lane_y:.2}" width="{:.2}" height="{:.2}" fill="{color}"><title>{}</title></rect>"##,
                (b - a).max(0.5),
                style.lane_height as f64 - 3.0,
                escape(&iv.label)
            );
        }
    }
    // Min/max envelope per pixel column keeps spikes visible when decimating.
    let cols = (w - 2.0 * pad).max(1.0) as usize;
    let mut pts = String::new();
    if seg.len() <= 2 * cols {
        for (j, &v) in seg.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x_of((i0 + j) as f64 / rate), y_of(v));
        }
    } else {
        for c in 0..cols {
            let a = c * seg.len() / cols;
            let b = ((c + 1) * seg.len() / cols).max(a + 1);
            let chunk = &seg[a..b];
            let (mn, mx) = chunk.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(p, q), &v| (p.min(v), q.max(v)));
            let x = x_of((i0 + a) as f64 / rate);
            let _ = write!(pts, "{x:.2},{:.2} {x:.2},{:.2} ", y_of(mn), y_of(mx));
        }
    }
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#222" stroke-width="0.8"/>"##, pts.trim_end());
    axis_x(&mut s, start_s, start_s + window_s, pad, w - pad, pad + h + lanes + 6.0);
    s.push_str("</svg>\n");
    Ok(s)
}

/// One curve per series over a shared x axis.
pub fn line_plot_svg(title: &str, x: &[f64], series: &[(&str, &[f64])], width: u32, height: u32, log_y: bool) -> Result<String> {
    if x.is_empty() || series.iter().any(|(_, y)| y.len() != x.len()) {
        return Err(Error::InvalidConfig("series lengths must match a non-empty x axis".into()));
    }
    let tf = |v: f64| if log_y { v.max(1e-30).log10() } else { v };
    let ys = series.iter().flat_map(|(_, y)| y.iter().map(|&v| tf(v))).filter(|v| v.is_finite());
    let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let (x0, x1) = (x[0], *x.last().unwrap());
    let xspan = if x1 > x0 { x1 - x0 } else { 1.0 };
    let (w, h, pad) = (width as f64, height as f64, 40.0);
    let mut s = header(w, h);
    let _ = writeln!(s, r##"<text x="{pad}" y="24" font-size="13">{}</text>"##, escape(title));
    for (k, (name, y)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(y.iter())
            .map(|(&xv, &yv)| {
                let px = pad + (xv - x0) / xspan * (w - 2.0 * pad);
                let py = pad + (1.0 - (tf(yv).clamp(lo, hi) - lo) / (hi - lo)) * (h - 2.0 * pad);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"##, pts.join(" "));
        let _ = writeln!(
            s,
            r##"<text x="{:.0}" y="{:.0}" font-size="11" fill="{color}">{}</text>"##,
            w - pad - 120.0,
            24.0 + 14.0 * k as f64,
            escape(name)
        );
    }
    axis_x(&mut s, x0, x1, pad, w - pad, h - pad + 6.0);
    s.push_str("</svg>\n");
    Ok(s)
}

/// Bars for `counts` over `[lo, hi]` with optional vertical markers.
pub fn histogram_svg(title: &str, lo: f64, hi: f64, counts: &[f64], markers: &[(&str, f64)], width: u32, height: u32) -> Result<String> {
    if counts.is_empty() || !(hi > lo) {
        return Err(Error::InvalidConfig("histogram needs bins and hi > lo".into()));
    }
    let (w, h, pad) = (width as f64, height as f64, 40.0);
    let top = counts.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let bw = (w - 2.0 * pad) / counts.len() as f64;
    let mut s = header(w, h);
    let _ = writeln!(s, r##"<text x="{pad}" y="24" font-size="13">{}</text>"##, escape(title));
    for (i, &c) in counts.iter().enumerate() {
        let bh = c / top * (h - 2.0 * pad);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#1f77b4"/>"##,
            pad + i as f64 * bw,
            h - pad - bh,
            bw.max(0.5)
        );
    }
    for (k, (name, v)) in markers.iter().enumerate() {
        let px = pad + (v - lo) / (hi - lo) * (w - 2.0 * pad);
        let color = PALETTE[(k + 2) % PALETTE.len()];
        let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{pad}" x2="{px:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"##, h - pad);
        let _ = writeln!(s, r##"<text x="{:.2}" y="{:.0}" font-size="11" fill="{color}">{}</text>"##, px + 3.0, pad + 12.0 * (k + 1) as f64, escape(name));
    }
    axis_x(&mut s, lo, hi, pad, w - pad, h - pad + 6.0);
    s.push_str("</svg>\n");
    Ok(s)
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn axis_x(s: &mut String, v0: f64, v1: f64, px0: f64, px1: f64, y: f64) {
    let _ = writeln!(s, r##"<line x1="{px0:.2}" y1="{y:.2}" x2="{px1:.2}" y2="{y:.2}" stroke="#888"/>"##);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let px = px0 + f * (px1 - px0);
        let _ = writeln!(
            s,
            r##"<text x="{px:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
            y + 14.0,
            tick(v0 + f * (v1 - v0))
        );
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

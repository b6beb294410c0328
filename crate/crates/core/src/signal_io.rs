//! Recordings, labeled intervals and per-sample masks, plus their on-disk formats.
//!
//! Signal CSV: a `sample_rate_hz=<float>` line followed by one amplitude per line.
//! Signal binary: little-endian `f32` values in `<name>.f32` with a sidecar
//! `<name>.json` holding `{"sample_rate_hz": .., "subject_id": ".."}`.
//! Labels CSV: header `start_s,end_s,label`, one interval per row.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub subject_id: String,
}

impl Recording {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, subject_id: impl Into<String>) -> Result<Self> {
        check_rate(sample_rate_hz)?;
        if samples.is_empty() {
            return Err(Error::InputTooShort { needed: 1, got: 0 });
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::MalformedSample { line: i + 1, value: samples[i].to_string() });
        }
        Ok(Self { samples, sample_rate_hz, subject_id: subject_id.into() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Samples covering `[start_s, end_s)`, clamped to the recording.
    pub fn slice_seconds(&self, start_s: f64, end_s: f64) -> &[f64] {
        let a = seconds_to_index(start_s, self.sample_rate_hz).min(self.len());
        let b = seconds_to_index(end_s, self.sample_rate_hz).clamp(a, self.len());
        &self.samples[a..b]
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveRate(rate))
    }
}

/// Smallest sample index `i` with `i / rate >= t`.
pub(crate) fn seconds_to_index(t: f64, rate: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    let mut i = (t * rate).ceil() as usize;
    while i > 0 && (i - 1) as f64 / rate >= t {
        i -= 1;
    }
    while (i as f64) / rate < t {
        i += 1;
    }
    i
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

impl Interval {
    pub fn new(start_s: f64, end_s: f64, label: impl Into<String>) -> Self {
        Self { start_s, end_s, label: label.into() }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Half-open overlap test; touching intervals do not overlap.
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.start_s < other.end_s && other.start_s < self.end_s
    }

    fn validate(&self) -> Result<()> {
        let ok = self.start_s.is_finite()
            && self.end_s.is_finite()
            && self.start_s >= 0.0
            && self.start_s < self.end_s;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInterval { start: self.start_s, end: self.end_s })
        }
    }
}

/// Labeled intervals on a recording timeline.
///
/// Canonical form: ordered by `(start, end, label)`, and intervals sharing a
/// label never overlap or touch (such pairs are merged on construction).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventSet {
    pub intervals: Vec<Interval>,
    pub total_duration_s: f64,
}

impl EventSet {
    pub fn empty(total_duration_s: f64) -> Self {
        Self { intervals: Vec::new(), total_duration_s }
    }

    pub fn new(intervals: Vec<Interval>, total_duration_s: f64) -> Result<Self> {
        for iv in &intervals {
            iv.validate()?;
            if iv.end_s > total_duration_s {
                return Err(Error::InvalidInterval { start: iv.start_s, end: iv.end_s });
            }
        }
        Ok(Self { intervals: canonicalize(intervals), total_duration_s })
    }

    /// Builds a set whose total duration is the latest interval end.
    pub fn from_intervals(intervals: Vec<Interval>) -> Result<Self> {
        let total = intervals.iter().map(|iv| iv.end_s).fold(0.0, f64::max);
        Self::new(intervals, total)
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Interval> {
        self.intervals.iter()
    }

    /// Intervals carrying `label`, preserving canonical order.
    pub fn with_label(&self, label: &str) -> EventSet {
        EventSet {
            intervals: self.intervals.iter().filter(|iv| iv.label == label).cloned().collect(),
            total_duration_s: self.total_duration_s,
        }
    }

    /// Union of two sets on the same timeline, re-canonicalized.
    pub fn union(&self, other: &EventSet) -> EventSet {
        let mut all = self.intervals.clone();
        all.extend(other.intervals.iter().cloned());
        EventSet {
            intervals: canonicalize(all),
            total_duration_s: self.total_duration_s.max(other.total_duration_s),
        }
    }

    /// Total covered time, counting overlapping intervals once.
    pub fn covered_s(&self) -> f64 {
        let mut spans: Vec<(f64, f64)> = self.intervals.iter().map(|iv| (iv.start_s, iv.end_s)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut total = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in spans {
            match cur {
                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs;
                    cur = Some((s, e));
                }
                None => cur = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = cur {
            total += ce - cs;
        }
        total
    }
}

fn canonicalize(intervals: Vec<Interval>) -> Vec<Interval> {
    let mut by_label: BTreeMap<String, Vec<Interval>> = BTreeMap::new();
    for iv in intervals {
        by_label.entry(iv.label.clone()).or_default().push(iv);
    }
    let mut out = Vec::new();
    for (_, mut group) in by_label {
        group.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
        let mut merged: Vec<Interval> = Vec::with_capacity(group.len());
        for iv in group {
            match merged.last_mut() {
                Some(last) if iv.start_s <= last.end_s => last.end_s = last.end_s.max(iv.end_s),
                _ => merged.push(iv),
            }
        }
        out.extend(merged);
    }
    out.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.end_s.total_cmp(&b.end_s))
            .then_with(|| a.label.cmp(&b.label))
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub values: Vec<u8>,
    pub sample_rate_hz: f64,
}

impl BinaryMask {
    pub fn zeros(n: usize, sample_rate_hz: f64) -> Self {
        Self { values: vec![0; n], sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// Rasterizes intervals: sample `i` is set iff `i / rate` lies in some `[start, end)`.
pub fn events_to_mask(events: &EventSet, n_samples: usize, sample_rate_hz: f64) -> BinaryMask {
    let mut mask = BinaryMask::zeros(n_samples, sample_rate_hz);
    for iv in &events.intervals {
        let a = seconds_to_index(iv.start_s, sample_rate_hz).min(n_samples);
        let b = seconds_to_index(iv.end_s, sample_rate_hz).min(n_samples);
        mask.values[a..b.max(a)].iter_mut().for_each(|v| *v = 1);
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalFormat {
    Csv,
    F32,
}

impl SignalFormat {
    /// Picks the format from the file extension; anything other than `.f32` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("f32") => SignalFormat::F32,
            _ => SignalFormat::Csv,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    sample_rate_hz: f64,
    subject_id: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string()
}

pub fn load_signal(path: impl AsRef<Path>, format: SignalFormat) -> Result<Recording> {
    let path = path.as_ref();
    match format {
        SignalFormat::Csv => load_signal_csv(path),
        SignalFormat::F32 => load_signal_f32(path),
    }
}

/// Loads a signal, choosing the format from the extension.
pub fn load_signal_auto(path: impl AsRef<Path>) -> Result<Recording> {
    let path = path.as_ref();
    load_signal(path, SignalFormat::from_path(path))
}

fn load_signal_csv(path: &Path) -> Result<Recording> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    let rate = parse_rate_header(header.trim()).ok_or_else(|| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: format!("expected `sample_rate_hz=<float>`, got {header:?}"),
    })?;
    check_rate(rate)?;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let v: f64 = text
            .parse()
            .map_err(|_| Error::MalformedSample { line: i + 2, value: text.to_string() })?;
        if !v.is_finite() {
            return Err(Error::MalformedSample { line: i + 2, value: text.to_string() });
        }
        samples.push(v);
    }
    Recording::new(samples, rate, stem(path))
}

fn parse_rate_header(line: &str) -> Option<f64> {
    let (key, value) = line.split_once('=')?;
    if key.trim() != "sample_rate_hz" {
        return None;
    }
    value.trim().parse().ok()
}

fn load_signal_f32(path: &Path) -> Result<Recording> {
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_reader(BufReader::new(File::open(&side).map_err(|e| {
        Error::MalformedHeader { path: side.clone(), reason: e.to_string() }
    })?))
    .map_err(|e| Error::MalformedHeader { path: side.clone(), reason: e.to_string() })?;
    check_rate(sidecar.sample_rate_hz)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: format!("byte length {} is not a multiple of 4", bytes.len()),
        });
    }
    let mut samples = Vec::with_capacity(bytes.len() / 4);
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::MalformedSample { line: i + 1, value: v.to_string() });
        }
        samples.push(v as f64);
    }
    Recording::new(samples, sidecar.sample_rate_hz, sidecar.subject_id)
}

pub fn save_signal(rec: &Recording, path: impl AsRef<Path>, format: SignalFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        SignalFormat::Csv => {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "sample_rate_hz={}", rec.sample_rate_hz)?;
            for v in &rec.samples {
                writeln!(w, "{v}")?;
            }
            w.flush()?;
        }
        SignalFormat::F32 => {
            let mut bytes = Vec::with_capacity(rec.samples.len() * 4);
            for &v in &rec.samples {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            fs::write(path, bytes)?;
            let sidecar = Sidecar { sample_rate_hz: rec.sample_rate_hz, subject_id: rec.subject_id.clone() };
            fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    start_s: f64,
    end_s: f64,
    label: String,
}

/// Reads a labels CSV. The total duration is taken as the latest interval end.
pub fn load_labels(path: impl AsRef<Path>) -> Result<EventSet> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut intervals = Vec::new();
    for row in reader.deserialize() {
        let row: LabelRow = row?;
        intervals.push(Interval::new(row.start_s, row.end_s, row.label));
    }
    EventSet::from_intervals(intervals)
}

pub fn save_labels(events: &EventSet, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    write_labels(events, &mut writer)?;
    writer.flush()?;
    Ok(())
}

/// Labels CSV as a string, byte-identical to what [`save_labels`] writes.
pub fn labels_to_csv_string(events: &EventSet) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    write_labels(events, &mut writer)?;
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_labels<W: Write>(events: &EventSet, writer: &mut csv::Writer<W>) -> Result<()> {
    writer.write_record(["start_s", "end_s", "label"])?;
    for iv in &events.intervals {
        writer.write_record([iv.start_s.to_string(), iv.end_s.to_string(), iv.label.clone()])?;
    }
    Ok(())
}

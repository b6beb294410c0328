//! End-to-end glue: composite configuration, synthetic corpora on disk,
//! recording preparation, full-recording prediction and evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{
    eventwise_metrics, event_features, mask_to_events, pointwise_metrics, EventFeatures, EventScore, PointwiseScore,
    PostProcess, SWD_LABEL,
};
use crate::model::{predict_mask, ModelParams, UNetConfig};
use crate::preprocess::{epoch_len, epochize, minmax_scale, resample, ResampleSpec, DEFAULT_HALF_WIDTH};
use crate::signal_io::{
    events_to_mask, load_labels, load_signal_auto, save_labels, save_signal, BinaryMask, EventSet, Recording,
    SignalFormat,
};
use crate::states::{detect_noise, detect_sleep, NoiseParams, SleepParams, StateEpochs};
use crate::synth::{generate, SynthConfig};
use crate::training::{SubjectEpochs, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleDefaults {
    pub target_rate_hz: f64,
    pub kernel_half_width_zero_crossings: usize,
}

impl Default for ResampleDefaults {
    fn default() -> Self {
        Self { target_rate_hz: 100.0, kernel_half_width_zero_crossings: DEFAULT_HALF_WIDTH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub subjects: usize,
    /// Template for every subject; subject `i` uses seed `seed + i`.
    pub recording: SynthConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { subjects: 3, recording: SynthConfig { duration_s: 7200.0, ..SynthConfig::default() } }
    }
}

/// Every tunable of the pipeline in one JSON document. Augmentation
/// settings live under `train.augment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub resample: ResampleDefaults,
    pub epoch_seconds: f64,
    pub model: UNetConfig,
    pub train: TrainConfig,
    pub postprocess: PostProcess,
    pub noise: NoiseParams,
    pub sleep: SleepParams,
    pub synth: CorpusConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            resample: ResampleDefaults::default(),
            epoch_seconds: 20.0,
            model: UNetConfig::default(),
            train: TrainConfig::default(),
            postprocess: PostProcess::default(),
            noise: NoiseParams::default(),
            sleep: SleepParams::default(),
            synth: CorpusConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        ResampleSpec {
            source_rate_hz: self.resample.target_rate_hz,
            target_rate_hz: self.resample.target_rate_hz,
            kernel_half_width_zero_crossings: self.resample.kernel_half_width_zero_crossings,
        }
        .validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.synth.recording.validate()?;
        let len = epoch_len(self.epoch_seconds, self.resample.target_rate_hz);
        if len != self.model.input_length {
            return Err(Error::InvalidConfig(format!(
                "epoch_seconds x target rate gives {len} samples but model.input_length is {}",
                self.model.input_length
            )));
        }
        let p = &self.postprocess;
        if !(0.0..=1.0).contains(&p.threshold) || p.min_duration_s < 0.0 || p.merge_gap_s < 0.0 {
            return Err(Error::InvalidConfig("postprocess values out of range".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Paths of one subject inside a corpus directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectFiles {
    pub id: String,
    pub signal: PathBuf,
    pub swd: PathBuf,
    pub sleep: PathBuf,
    pub noise: PathBuf,
}

impl SubjectFiles {
    pub fn new(dir: &Path, id: &str) -> Self {
        Self {
            id: id.to_string(),
            signal: dir.join(format!("{id}.f32")),
            swd: dir.join(format!("{id}.swd.csv")),
            sleep: dir.join(format!("{id}.sleep.csv")),
            noise: dir.join(format!("{id}.noise.csv")),
        }
    }
}

/// Writes `cfg.subjects` synthetic recordings named `subject_00`, … and returns their ids.
pub fn write_corpus(dir: impl AsRef<Path>, cfg: &CorpusConfig, seed: u64) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut ids = Vec::with_capacity(cfg.subjects);
    for i in 0..cfg.subjects {
        let id = format!("subject_{i:02}");
        let synth = SynthConfig { subject_id: id.clone(), seed: seed.wrapping_add(i as u64), ..cfg.recording.clone() };
        let out = generate(&synth)?;
        let files = SubjectFiles::new(dir, &id);
        save_signal(&out.recording, &files.signal, SignalFormat::F32)?;
        save_labels(&out.swd, &files.swd)?;
        save_labels(&out.sleep, &files.sleep)?;
        save_labels(&out.noise, &files.noise)?;
        ids.push(id);
    }
    Ok(ids)
}

/// Subject ids (sorted) that have both a signal file and SWD labels.
pub fn list_subjects(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut ids: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".swd.csv")).map(str::to_string))
        .filter(|id| SubjectFiles::new(dir, id).signal.exists())
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(ids)
}

pub struct LabeledRecording {
    pub recording: Recording,
    pub swd: EventSet,
}

pub fn load_subject(dir: impl AsRef<Path>, id: &str) -> Result<LabeledRecording> {
    let files = SubjectFiles::new(dir.as_ref(), id);
    let recording = load_signal_auto(&files.signal)?;
    let labels = load_labels(&files.swd)?;
    let swd = EventSet::new(labels.with_label(SWD_LABEL).intervals, recording.duration_s())?;
    Ok(LabeledRecording { recording, swd })
}

/// Resamples to the model rate (when different) and min-max scales to [-1, 1].
pub fn prepare_recording(rec: &Recording, cfg: &PipelineConfig) -> Result<Recording> {
    let spec = ResampleSpec {
        source_rate_hz: rec.sample_rate_hz,
        target_rate_hz: cfg.resample.target_rate_hz,
        kernel_half_width_zero_crossings: cfg.resample.kernel_half_width_zero_crossings,
    };
    Ok(minmax_scale(&resample(rec, &spec)?))
}

pub fn subject_epochs(labeled: &LabeledRecording, cfg: &PipelineConfig) -> Result<SubjectEpochs> {
    let rec = prepare_recording(&labeled.recording, cfg)?;
    let mask = events_to_mask(&labeled.swd, rec.len(), rec.sample_rate_hz);
    Ok(SubjectEpochs { subject_id: rec.subject_id.clone(), epochs: epochize(&rec, &mask, cfg.epoch_seconds)? })
}

pub fn load_epochs(dir: impl AsRef<Path>, ids: &[String], cfg: &PipelineConfig) -> Result<Vec<SubjectEpochs>> {
    ids.iter().map(|id| subject_epochs(&load_subject(dir.as_ref(), id)?, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per-sample SWD probability at the model rate.
    pub probs: Vec<f32>,
    pub mask: BinaryMask,
    pub events: EventSet,
}

/// Probabilities for an already prepared recording: non-overlapping windows,
/// the last one zero-padded with its padding discarded.
pub fn predict_probs(params: &ModelParams<f32>, rec: &Recording, batch: usize) -> Result<Vec<f32>> {
    let window = params.config().input_length;
    if rec.len() < window {
        return Err(Error::InputTooShort { needed: window, got: rec.len() });
    }
    let n_windows = rec.len().div_ceil(window);
    let mut xs = vec![0.0f32; n_windows * window];
    xs.iter_mut().zip(&rec.samples).for_each(|(d, &s)| *d = s as f32);
    let mut probs = params.predict_windows(&xs, window, batch)?;
    probs.truncate(rec.len());
    Ok(probs)
}

/// Full inference chain on a raw recording.
pub fn predict_recording(params: &ModelParams<f32>, rec: &Recording, cfg: &PipelineConfig) -> Result<Prediction> {
    let window_s = params.config().input_length as f64 / cfg.resample.target_rate_hz;
    if rec.duration_s() + 1e-9 < window_s {
        let needed = (window_s * rec.sample_rate_hz).ceil() as usize;
        return Err(Error::InputTooShort { needed, got: rec.len() });
    }
    let prepared = prepare_recording(rec, cfg)?;
    let probs = predict_probs(params, &prepared, cfg.train.batch_size)?;
    let mask = BinaryMask { values: predict_mask(&probs, cfg.postprocess.threshold), sample_rate_hz: prepared.sample_rate_hz };
    let pp = &cfg.postprocess;
    let mut events = mask_to_events(&mask, pp.min_duration_s, pp.merge_gap_s);
    events.total_duration_s = events.total_duration_s.max(rec.duration_s());
    Ok(Prediction { probs, mask, events })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub subject_id: String,
    pub duration_s: f64,
    pub pointwise: PointwiseScore,
    pub eventwise: EventScore,
    pub predicted: EventFeatures,
    pub truth: EventFeatures,
}

/// Scores `pred` against `truth` on the recording's own sample grid.
pub fn evaluate(pred: &EventSet, truth: &EventSet, rec: &Recording) -> Result<EvalReport> {
    let total = rec.duration_s();
    let clip = |ev: &EventSet| -> Result<EventSet> {
        let ivs = ev
            .intervals
            .iter()
            .filter(|iv| iv.start_s < total)
            .map(|iv| crate::signal_io::Interval::new(iv.start_s, iv.end_s.min(total), iv.label.clone()))
            .filter(|iv| iv.start_s < iv.end_s)
            .collect();
        EventSet::new(ivs, total)
    };
    let (pred, truth) = (clip(pred)?, clip(truth)?);
    let pm = events_to_mask(&pred, rec.len(), rec.sample_rate_hz);
    let tm = events_to_mask(&truth, rec.len(), rec.sample_rate_hz);
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        subject_id: rec.subject_id.clone(),
        duration_s: total,
        pointwise: pointwise_metrics(&pm, &tm)?,
        eventwise: eventwise_metrics(&pred, &truth),
        predicted: event_features(rec, &pred),
        truth: event_features(rec, &truth),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatesReport {
    pub schema_version: u32,
    pub subject_id: String,
    pub noise: StateEpochs,
    pub sleep: StateEpochs,
}

impl StatesReport {
    /// Noise and sleep intervals in one set, distinguished by label.
    pub fn combined(&self) -> EventSet {
        self.noise.intervals.union(&self.sleep.intervals)
    }
}

/// Noise and sleep detection on the raw (unscaled) recording.
pub fn classify_states(rec: &Recording, cfg: &PipelineConfig) -> Result<StatesReport> {
    Ok(StatesReport {
        schema_version: SCHEMA_VERSION,
        subject_id: rec.subject_id.clone(),
        noise: detect_noise(rec, &cfg.noise)?,
        sleep: detect_sleep(rec, &cfg.sleep)?,
    })
}

//! Optimizer, learning-rate schedule, early stopping, data splits, the
//! training loop, repeated runs and ablation sweeps.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, example_rng, AugmentConfig};
use crate::autodiff::{Graph, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::events::{pointwise_from_slices, PointwiseScore};
use crate::model::{predict_mask, DiceAccumulator, ModelParams, Mode, UNetConfig, BN_MOMENTUM, DICE_SMOOTH};
use crate::preprocess::EpochPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub cycle_steps: u64,
    pub lr_min: f64,
    pub gamma: f64,
    pub patience_epochs: usize,
    pub val_fraction: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub train_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-3,
            max_epochs: 50,
            batch_size: 32,
            warmup_steps: 500,
            cycle_steps: 1000,
            lr_min: 1e-5,
            gamma: 0.9,
            patience_epochs: 10,
            val_fraction: 0.05,
            adam: AdamConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            train_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction must be in (0, 1]");
        }
        if self.patience_epochs == 0 || self.batch_size == 0 || self.cycle_steps == 0 {
            return bad("patience_epochs, batch_size and cycle_steps must be >= 1");
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad("learning rates must satisfy 0 <= lr_min <= lr_max, lr_max > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps > 0");
        }
        self.augment.validate()
    }
}

impl TrainConfig {
    /// Optimizer steps a full run takes on `n_segments` segments.
    pub fn step_budget(&self, n_segments: usize) -> Result<u64> {
        let split = split_segments(n_segments, self)?;
        Ok(split.train.len().div_ceil(self.batch_size.max(1)) as u64 * self.max_epochs as u64)
    }

    /// Copy whose warmup and cycle lengths are a fifth and two fifths of the
    /// step budget, keeping the 1:2 warmup-to-cycle ratio of the defaults.
    /// For short runs where the default warmup would never finish.
    pub fn with_budget_schedule(&self, n_segments: usize) -> Result<Self> {
        let steps = self.step_budget(n_segments)?;
        Ok(Self { warmup_steps: (steps / 5).max(1), cycle_steps: (2 * steps / 5).max(1), ..self.clone() })
    }
}

/// Learning rate within cosine cycle `cycle` at offset `t` steps from its start.
pub fn lr_in_cycle(cycle: u64, t: u64, cfg: &TrainConfig) -> f64 {
    let peak = cfg.lr_max * cfg.gamma.powi(cycle.min(i32::MAX as u64) as i32);
    let cos = (1.0 + (PI * t as f64 / cfg.cycle_steps as f64).cos()) / 2.0;
    (cfg.lr_min + (peak - cfg.lr_min) * cos).max(cfg.lr_min)
}

/// Linear warmup to `lr_max`, then hard-restart cosine cycles whose peaks
/// decay by `gamma`. Cycle `c` covers steps `warmup + c·cycle + (0, cycle]`,
/// so the step ending a cycle sits at `lr_min` and the following step
/// restarts near the decayed peak.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if step <= cfg.warmup_steps {
        return if cfg.warmup_steps == 0 { cfg.lr_max } else { cfg.lr_max * step as f64 / cfg.warmup_steps as f64 };
    }
    let s = step - cfg.warmup_steps;
    let cycle = (s - 1) / cfg.cycle_steps;
    lr_in_cycle(cycle, s - cycle * cfg.cycle_steps, cfg)
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!("{} params, {} grads", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(format!("parameter tensor {i}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c = T::from_f64_lossy;
    let (b1, b2, eps) = (c(cfg.beta1), c(cfg.beta2), c(cfg.eps));
    let bc1 = c(1.0 - cfg.beta1.powi(t));
    let bc2 = c(1.0 - cfg.beta2.powi(t));
    let lr = c(lr);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience counter over 1-based epochs; any strict decrease is an improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let improved = match self.best {
            None => loss.is_finite(),
            Some((_, best)) => loss < best,
        };
        if improved {
            self.best = Some((epoch, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision { improved, stop: self.since_best >= self.patience }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// `round(fraction · total)`.
pub fn fraction_subset_size(total: usize, fraction: f64) -> usize {
    ((total as f64) * fraction).round() as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

const SPLIT_TAG: u64 = 0x5EED_0001;
const SHUFFLE_TAG: u64 = 0x5EED_0002;
const AUGMENT_TAG: u64 = 0x5EED_0003;

fn seeded(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Seeded permutation of all segment indices. Its first
/// `round(train_fraction · n)` entries are kept (so smaller fractions are
/// prefixes of larger ones); of those, the first `round(val_fraction · m)`
/// (at least one) are validation and the rest train.
pub fn split_segments(n_total: usize, cfg: &TrainConfig) -> Result<Split> {
    let mut perm: Vec<usize> = (0..n_total).collect();
    perm.shuffle(&mut seeded(cfg.seed, SPLIT_TAG));
    let kept = fraction_subset_size(n_total, cfg.train_fraction).min(n_total);
    let n_val = fraction_subset_size(kept, cfg.val_fraction).max(1);
    if kept < n_val + 1 {
        return Err(Error::EmptyDataset);
    }
    Ok(Split { val: perm[..n_val].to_vec(), train: perm[n_val..kept].to_vec() })
}

/// Fixed-length windows of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEpochs {
    pub subject_id: String,
    pub epochs: Vec<EpochPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub pointwise: PointwiseScore,
}

/// Serializable part of a [`RunResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub n_train_segments: usize,
    pub n_val_segments: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub total_steps: u64,
    pub stopped_early: bool,
    pub test: Vec<SubjectScore>,
    pub test_aggregate: Option<PointwiseScore>,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: RunReport,
    /// Parameters from the epoch with the lowest validation loss.
    pub checkpoint: ModelParams<f32>,
}

fn flatten(subjects: &[SubjectEpochs]) -> Vec<&EpochPair> {
    subjects.iter().flat_map(|s| s.epochs.iter()).collect()
}

fn eval_loss(params: &ModelParams<f32>, data: &[&EpochPair], batch: usize, len: usize) -> Result<f64> {
    let mut acc = DiceAccumulator::default();
    for chunk in data.chunks(batch) {
        let xs: Vec<f32> = chunk.iter().flat_map(|e| e.signal.iter().copied()).collect();
        let probs = params.predict_windows(&xs, len, batch)?;
        let targets: Vec<f32> = chunk.iter().flat_map(|e| e.target.iter().copied()).collect();
        acc.add(&probs, &targets);
    }
    Ok(acc.loss(DICE_SMOOTH))
}

/// Pointwise score of thresholded predictions over one subject's windows.
pub fn score_subject(params: &ModelParams<f32>, subject: &SubjectEpochs, batch: usize, threshold: f64) -> Result<PointwiseScore> {
    let len = params.config().input_length;
    let xs: Vec<f32> = subject.epochs.iter().flat_map(|e| e.signal.iter().copied()).collect();
    let probs = params.predict_windows(&xs, len, batch)?;
    let truth: Vec<u8> = subject.epochs.iter().flat_map(|e| e.target.iter().map(|&t| u8::from(t >= 0.5))).collect();
    pointwise_from_slices(&predict_mask(&probs, threshold), &truth)
}

pub fn train(train_set: &[SubjectEpochs], test_set: &[SubjectEpochs], model: &UNetConfig, cfg: &TrainConfig) -> Result<RunResult> {
    train_with_progress(train_set, test_set, model, cfg, |_| {})
}

/// Trains from scratch; `progress` sees each finished epoch.
pub fn train_with_progress(
    train_set: &[SubjectEpochs],
    test_set: &[SubjectEpochs],
    model: &UNetConfig,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    let started = Instant::now();
    model.validate()?;
    cfg.validate()?;
    let segments = flatten(train_set);
    if segments.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let len = model.input_length;
    if let Some(bad) = segments.iter().chain(flatten(test_set).iter()).find(|e| e.len() != len || e.target.len() != len) {
        return Err(Error::ShapeMismatch(format!("segment of {} samples, model expects {len}", bad.len())));
    }
    let split = split_segments(segments.len(), cfg)?;
    let val: Vec<&EpochPair> = split.val.iter().map(|&i| segments[i]).collect();

    let mut params = ModelParams::<f32>::init(model, cfg.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut step = 0u64;
    let mut stopped_early = false;
    let aug_seed = cfg.seed ^ cfg.augment.rng_seed.rotate_left(17);

    for epoch in 1..=cfg.max_epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut seeded(cfg.seed, SHUFFLE_TAG ^ ((epoch as u64) << 32)));
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut xs = Vec::with_capacity(batch.len() * len);
            let mut ys = Vec::with_capacity(batch.len() * len);
            for &i in batch {
                let mut rng = example_rng(aug_seed ^ AUGMENT_TAG, epoch as u64, i as u64);
                xs.extend(apply_pipeline(&segments[i].signal, &cfg.augment, &mut rng));
                ys.extend_from_slice(&segments[i].target);
            }
            let x = Tensor::from_vec([batch.len(), 1, len], xs)?;
            let y = Tensor::from_vec([batch.len(), 1, len], ys)?;

            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let xv = g.input(x);
            let (probs, stats) = params.forward_graph(&mut g, &bound, xv, Mode::Train)?;
            let loss = g.dice_loss(probs, &y, DICE_SMOOTH as f32)?;
            let loss_value = g.value(loss).data()[0] as f64;
            let mut grads = g.backward(loss);
            let grads: Vec<Tensor<f32>> = bound
                .vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            drop(g);

            step += 1;
            lr = lr_at(step, cfg);
            adam_step(params.tensors_mut(), &grads, &mut adam, lr, &cfg.adam)
                .map_err(|e| match e {
                    Error::NonFiniteGradient(m) => Error::NonFiniteGradient(format!("{m} at step {step}")),
                    other => other,
                })?;
            params.update_running_stats(&stats, BN_MOMENTUM);
            loss_sum += loss_value;
            n_batches += 1;
        }
        let val_loss = eval_loss(&params, &val, cfg.batch_size, len)?;
        let record = EpochRecord { epoch, steps: step, lr, train_loss: loss_sum / n_batches.max(1) as f64, val_loss };
        progress(&record);
        history.push(record);
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = params.clone();
        }
        if decision.stop {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }

    let (best_epoch, best_val_loss) = stopper.best().unwrap_or((0, f64::NAN));
    let mut test = Vec::with_capacity(test_set.len());
    for subject in test_set {
        test.push(SubjectScore { subject_id: subject.subject_id.clone(), pointwise: score_subject(&best, subject, cfg.batch_size, 0.5)? });
    }
    let test_aggregate = test.iter().map(|s| s.pointwise).reduce(|a, b| a.merge(&b));
    Ok(RunResult {
        report: RunReport {
            seed: cfg.seed,
            n_train_segments: split.train.len(),
            n_val_segments: split.val.len(),
            history,
            best_epoch,
            best_val_loss,
            total_steps: step,
            stopped_early,
            test,
            test_aggregate,
            wall_clock_s: started.elapsed().as_secs_f64(),
        },
        checkpoint: best,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample SD; zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedResult {
    pub runs: Vec<RunReport>,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

/// `n` trainings with seeds `seed, seed + 1, …`, summarized on the
/// aggregate test score of each run.
pub fn run_repeated(
    train_set: &[SubjectEpochs],
    test_set: &[SubjectEpochs],
    model: &UNetConfig,
    cfg: &TrainConfig,
    n: usize,
) -> Result<RepeatedResult> {
    if n == 0 {
        return Err(Error::InvalidConfig("run count must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(n);
    for i in 0..n {
        let cfg = TrainConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
        runs.push(train(train_set, test_set, model, &cfg)?.report);
    }
    Ok(summarize_runs(runs))
}

pub fn summarize_runs(runs: Vec<RunReport>) -> RepeatedResult {
    let pick = |f: fn(&PointwiseScore) -> f64| -> MeanSd {
        MeanSd::of(&runs.iter().map(|r| r.test_aggregate.as_ref().map_or(f64::NAN, f)).collect::<Vec<_>>())
    };
    let precision = pick(|s| s.precision);
    let recall = pick(|s| s.recall);
    let f1 = pick(|s| s.f1);
    RepeatedResult { runs, precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Augment,
    Fraction,
    Pscale,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augment" | "augmentations" => Ok(Self::Augment),
            "fraction" | "train_fraction" => Ok(Self::Fraction),
            "pscale" | "p_scale" => Ok(Self::Pscale),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis '{other}'"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Augment => "augment",
            Self::Fraction => "fraction",
            Self::Pscale => "pscale",
        })
    }
}

pub const SWEEP_FRACTIONS: [f64; 6] = [0.05, 0.10, 0.25, 0.50, 0.75, 0.90];
pub const SWEEP_P_SCALE: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub config: TrainConfig,
}

/// Grid of configurations for one axis, derived from `base`.
///
/// The augmentation rows switch single operators on at their `base`
/// probabilities; the scaling-probability rows keep the other operators as
/// in `base`.
pub fn sweep_plan(axis: SweepAxis, base: &TrainConfig) -> Vec<SweepPoint> {
    let point = |label: String, config: TrainConfig| SweepPoint { label, config };
    match axis {
        SweepAxis::Augment => {
            let a = &base.augment;
            let off = AugmentConfig { rng_seed: a.rng_seed, ..AugmentConfig::disabled() };
            let rows = [
                ("none", off.clone()),
                ("noise", AugmentConfig { p_noise: a.p_noise, noise_level_max: a.noise_level_max, ..off.clone() }),
                ("invert", AugmentConfig { p_invert: a.p_invert, ..off.clone() }),
                ("scaling", AugmentConfig { p_scale: a.p_scale, scale_range: a.scale_range, ..off.clone() }),
                ("all", a.clone()),
            ];
            rows.into_iter()
                .map(|(label, augment)| point(label.into(), TrainConfig { augment, ..base.clone() }))
                .collect()
        }
        SweepAxis::Fraction => SWEEP_FRACTIONS
            .iter()
            .map(|&f| point(format!("{f:.2}"), TrainConfig { train_fraction: f, ..base.clone() }))
            .collect(),
        SweepAxis::Pscale => SWEEP_P_SCALE
            .iter()
            .map(|&p| {
                let augment = AugmentConfig { p_scale: p, ..base.augment.clone() };
                point(format!("{p:.1}"), TrainConfig { augment, ..base.clone() })
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub label: String,
    pub segments: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One training per grid point, in plan order.
pub fn sweep(
    train_set: &[SubjectEpochs],
    test_set: &[SubjectEpochs],
    model: &UNetConfig,
    base: &TrainConfig,
    axis: SweepAxis,
) -> Result<Vec<SweepRow>> {
    let total: usize = train_set.iter().map(|s| s.epochs.len()).sum();
    sweep_plan(axis, base)
        .into_iter()
        .map(|p| {
            let run = train(train_set, test_set, model, &p.config)?;
            let score = run.report.test_aggregate.unwrap_or(PointwiseScore::from_counts(0, 0, 0, 0));
            Ok(SweepRow {
                axis,
                label: p.label,
                segments: fraction_subset_size(total, p.config.train_fraction),
                precision: score.precision,
                recall: score.recall,
                f1: score.f1,
            })
        })
        .collect()
}

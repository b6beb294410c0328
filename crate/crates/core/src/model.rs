//! Residual 1D U-Net, Dice loss and checkpoint I/O.
//!
//! Layout for `depth = D` and `base_channels = C`:
//! encoder level `i` is a residual block to `C·2^i` channels followed by
//! max-pooling; a bottleneck block keeps `C·2^(D-1)` channels; decoder level
//! `i` upsamples, concatenates the level-`i` skip and applies a residual
//! block back to `C·2^i` channels; a 1×1 head and a sigmoid give per-sample
//! probabilities.
//!
//! A residual block is `convs_per_block` repetitions of conv → norm → ReLU on
//! the block input, added to a shortcut that is the identity when channel
//! counts match and a 1×1 conv (plus norm, when enabled) otherwise.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormMode, BatchStats, Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DICE_SMOOTH: f64 = 1.0;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub convs_per_block: usize,
    pub norm: bool,
    pub input_length: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 16, kernel_size: 7, convs_per_block: 2, norm: true, input_length: 2000 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.convs_per_block == 0 {
            return Err(Error::InvalidConfig("depth, base_channels and convs_per_block must be >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        self.check_length(self.input_length)
    }

    pub fn check_length(&self, len: usize) -> Result<()> {
        let factor = 1usize << self.depth;
        if len == 0 || !len.is_multiple_of(factor) {
            return Err(Error::IndivisibleLength(len, factor));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone)]
struct BlockIdx {
    stages: Vec<(ConvIdx, Option<NormIdx>)>,
    shortcut: Option<(ConvIdx, Option<NormIdx>)>,
}

#[derive(Debug, Clone)]
struct Layout {
    encoder: Vec<BlockIdx>,
    bottleneck: BlockIdx,
    decoder: Vec<BlockIdx>,
    head: ConvIdx,
}

/// Shape and name of one stored array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 3],
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    fan_in: Vec<Option<usize>>,
    norm_channels: Vec<(String, usize)>,
}

impl LayoutBuilder {
    fn tensor(&mut self, name: String, shape: [usize; 3], fan_in: Option<usize>) -> usize {
        self.specs.push(ParamSpec { name, shape });
        self.fan_in.push(fan_in);
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize) -> ConvIdx {
        let w = self.tensor(format!("{prefix}.weight"), [cout, cin, k], Some(cin * k));
        let b = self.tensor(format!("{prefix}.bias"), [1, cout, 1], None);
        ConvIdx { w, b }
    }

    fn norm(&mut self, prefix: &str, c: usize) -> NormIdx {
        let gamma = self.tensor(format!("{prefix}.gamma"), [1, c, 1], None);
        let beta = self.tensor(format!("{prefix}.beta"), [1, c, 1], None);
        self.norm_channels.push((prefix.to_string(), c));
        NormIdx { gamma, beta, stats: self.norm_channels.len() - 1 }
    }

    fn block(&mut self, prefix: &str, cin: usize, cout: usize, cfg: &UNetConfig) -> BlockIdx {
        let mut stages = Vec::with_capacity(cfg.convs_per_block);
        let mut c = cin;
        for j in 0..cfg.convs_per_block {
            let conv = self.conv(&format!("{prefix}.conv{j}"), c, cout, cfg.kernel_size);
            let norm = cfg.norm.then(|| self.norm(&format!("{prefix}.norm{j}"), cout));
            stages.push((conv, norm));
            c = cout;
        }
        let shortcut = (cin != cout).then(|| {
            let conv = self.conv(&format!("{prefix}.shortcut"), cin, cout, 1);
            let norm = cfg.norm.then(|| self.norm(&format!("{prefix}.shortcut_norm"), cout));
            (conv, norm)
        });
        BlockIdx { stages, shortcut }
    }
}

fn build_layout(cfg: &UNetConfig) -> (Layout, LayoutBuilder) {
    let mut lb = LayoutBuilder { specs: Vec::new(), fan_in: Vec::new(), norm_channels: Vec::new() };
    let mut encoder = Vec::with_capacity(cfg.depth);
    let mut cin = 1;
    for i in 0..cfg.depth {
        let cout = cfg.channels(i);
        encoder.push(lb.block(&format!("enc{i}"), cin, cout, cfg));
        cin = cout;
    }
    let deepest = cfg.channels(cfg.depth - 1);
    let bottleneck = lb.block("bottleneck", deepest, deepest, cfg);
    let mut decoder = Vec::with_capacity(cfg.depth);
    let mut below = deepest;
    for i in (0..cfg.depth).rev() {
        let cout = cfg.channels(i);
        decoder.push(lb.block(&format!("dec{i}"), below + cout, cout, cfg));
        below = cout;
    }
    let head = lb.conv("head", cfg.channels(0), 1, 1);
    (Layout { encoder, bottleneck, decoder, head }, lb)
}

/// Batch-norm running estimates for one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// All learnable arrays in canonical order plus batch-norm buffers.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    config: UNetConfig,
    specs: Vec<ParamSpec>,
    tensors: Vec<Tensor<T>>,
    running: Vec<RunningStats<T>>,
    norm_names: Vec<String>,
    layout: Layout,
}

impl<T: Scalar> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tensors == other.tensors && self.running == other.running
    }
}

/// Graph handles for every parameter, in canonical order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl<T: Scalar> ModelParams<T> {
    /// He-normal conv weights (variance `2 / fan_in`), zero biases, unit
    /// norm scale, zero shift.
    pub fn init(config: &UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, lb) = build_layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = lb
            .specs
            .iter()
            .zip(&lb.fan_in)
            .map(|(spec, fan_in)| match fan_in {
                Some(fan_in) => {
                    let normal = Normal::new(0.0, (2.0 / *fan_in as f64).sqrt()).expect("positive sd");
                    let n = spec.shape.iter().product();
                    let data = (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
                    Tensor::from_vec(spec.shape, data).expect("spec shape")
                }
                None if spec.name.ends_with(".gamma") => Tensor::full(spec.shape, T::one()),
                None => Tensor::zeros(spec.shape),
            })
            .collect();
        let running = lb
            .norm_channels
            .iter()
            .map(|(_, c)| RunningStats { mean: vec![T::zero(); *c], var: vec![T::one(); *c] })
            .collect();
        Ok(Self {
            config: config.clone(),
            specs: lb.specs,
            tensors,
            running,
            norm_names: lb.norm_channels.into_iter().map(|(n, _)| n).collect(),
            layout,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
            && self.running.iter().all(|r| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN))).collect();
        ModelParams {
            config: self.config.clone(),
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            running: self.running.iter().map(|r| RunningStats { mean: conv(&r.mean), var: conv(&r.var) }).collect(),
            norm_names: self.norm_names.clone(),
            layout: self.layout.clone(),
        }
    }

    /// Registers every parameter in `g`, differentiable when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
            .collect();
        BoundParams { vars }
    }

    fn block(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        idx: &BlockIdx,
        x: Var,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let mut h = x;
        for (conv, norm) in &idx.stages {
            h = g.conv1d(h, p.vars[conv.w], Some(p.vars[conv.b]))?;
            if let Some(n) = norm {
                h = self.norm(g, p, n, h, mode, stats)?;
            }
            h = g.relu(h);
        }
        let shortcut = match &idx.shortcut {
            Some((conv, norm)) => {
                let s = g.conv1d(x, p.vars[conv.w], Some(p.vars[conv.b]))?;
                match norm {
                    Some(n) => self.norm(g, p, n, s, mode, stats)?,
                    None => s,
                }
            }
            None => x,
        };
        g.add(h, shortcut)
    }

    fn norm(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        n: &NormIdx,
        x: Var,
        mode: Mode,
        stats: &mut Vec<(usize, BatchStats<T>)>,
    ) -> Result<Var> {
        let eps = T::from_f64_lossy(BN_EPS);
        let rs = &self.running[n.stats];
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train { eps },
            Mode::Eval => BatchNormMode::Eval { mean: &rs.mean, var: &rs.var, eps },
        };
        let (y, s) = g.batchnorm(x, p.vars[n.gamma], p.vars[n.beta], bn_mode)?;
        if let Some(s) = s {
            stats.push((n.stats, s));
        }
        Ok(y)
    }

    /// Builds the forward computation for `x: (B, 1, L)` and returns the
    /// probability node plus, in train mode, the batch statistics of every
    /// norm layer (indexed like [`Self::running_stats`]).
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Vec<(usize, BatchStats<T>)>)> {
        let [_, c, l] = g.value(x).shape();
        if c != 1 {
            return Err(Error::ShapeMismatch(format!("expected 1 input channel, got {c}")));
        }
        self.config.check_length(l)?;
        let mut stats = Vec::new();
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut h = x;
        for idx in &self.layout.encoder {
            let e = self.block(g, p, idx, h, mode, &mut stats)?;
            skips.push(e);
            h = g.maxpool2(e)?;
        }
        h = self.block(g, p, &self.layout.bottleneck, h, mode, &mut stats)?;
        for idx in &self.layout.decoder {
            let up = g.upsample2(h);
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat(up, skip)?;
            h = self.block(g, p, idx, cat, mode, &mut stats)?;
        }
        let head = self.layout.head;
        let logits = g.conv1d(h, p.vars[head.w], Some(p.vars[head.b]))?;
        Ok((g.sigmoid(logits), stats))
    }

    /// Inference without gradient bookkeeping on parameters.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.input(x.clone());
        let (y, _) = self.forward_graph(&mut g, &p, xv, mode)?;
        Ok(g.value(y).clone())
    }

    /// Eval-mode probabilities for consecutive windows of `window` samples
    /// stored back to back in `signals`, evaluated `batch` windows at a time.
    pub fn predict_windows(&self, signals: &[T], window: usize, batch: usize) -> Result<Vec<T>> {
        if window == 0 || !signals.len().is_multiple_of(window) {
            return Err(Error::ShapeMismatch(format!("{} samples do not split into windows of {window}", signals.len())));
        }
        let mut out = Vec::with_capacity(signals.len());
        for chunk in signals.chunks(window * batch.max(1)) {
            let x = Tensor::from_vec([chunk.len() / window, 1, window], chunk.to_vec())?;
            out.extend_from_slice(self.forward(&x, Mode::Eval)?.data());
        }
        Ok(out)
    }

    /// Exponential moving update of the running statistics.
    pub fn update_running_stats(&mut self, stats: &[(usize, BatchStats<T>)], momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        let keep = T::one() - m;
        for (i, s) in stats {
            let rs = &mut self.running[*i];
            for (r, &b) in rs.mean.iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in rs.var.iter_mut().zip(&s.var_unbiased) {
                *r = keep * *r + m * b;
            }
        }
    }
}

/// `1 - (2·Σ p·g + smooth) / (Σ p + Σ g + smooth)` over all elements.
pub fn dice_loss<T: Scalar>(probs: &Tensor<T>, targets: &Tensor<T>, smooth: f64) -> Result<f64> {
    if probs.shape() != targets.shape() {
        return Err(Error::ShapeMismatch(format!("dice_loss: {:?} vs {:?}", probs.shape(), targets.shape())));
    }
    let mut g = Graph::new();
    let p = g.input(probs.clone());
    let l = g.dice_loss(p, targets, T::from_f64_lossy(smooth))?;
    Ok(g.value(l).data()[0].to_f64().unwrap_or(f64::NAN))
}

/// Dice sums accumulated across batches, so a loss over a whole split does
/// not depend on how it was batched.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DiceAccumulator {
    pub intersection: f64,
    pub sum_pred: f64,
    pub sum_target: f64,
}

impl DiceAccumulator {
    pub fn add<T: Scalar>(&mut self, probs: &[T], targets: &[T]) {
        for (&p, &t) in probs.iter().zip(targets) {
            let (p, t) = (p.to_f64().unwrap_or(0.0), t.to_f64().unwrap_or(0.0));
            self.intersection += p * t;
            self.sum_pred += p;
            self.sum_target += t;
        }
    }

    pub fn loss(&self, smooth: f64) -> f64 {
        1.0 - (2.0 * self.intersection + smooth) / (self.sum_pred + self.sum_target + smooth)
    }
}

/// 1 where probability >= threshold.
pub fn predict_mask<T: Scalar>(probs: &[T], threshold: f64) -> Vec<u8> {
    probs.iter().map(|p| u8::from(p.to_f64().unwrap_or(0.0) >= threshold)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// `manifest.json` of a checkpoint directory. Arrays live in `params.bin` as
/// little-endian `f32`: learnable tensors in canonical order, then for each
/// norm layer its running mean and running variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub config: UNetConfig,
    pub sample_rate_hz: f64,
    pub step: u64,
    pub epoch: usize,
    pub metrics: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub sample_rate_hz: f64,
    pub step: u64,
    pub epoch: usize,
    pub metrics: serde_json::Value,
}

impl ModelParams<f32> {
    /// Canonical binary blob and its array table.
    pub fn to_blob(&self) -> (Vec<u8>, Vec<ArrayEntry>) {
        let mut bytes = Vec::new();
        let mut arrays = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, data: &[f32]| {
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            arrays.push(ArrayEntry { name, shape, offset, len: data.len() });
            offset += data.len();
        };
        for (spec, t) in self.specs.iter().zip(&self.tensors) {
            push(spec.name.clone(), spec.shape.to_vec(), t.data());
        }
        for (name, rs) in self.norm_names.iter().zip(&self.running) {
            push(format!("{name}.running_mean"), vec![rs.mean.len()], &rs.mean);
            push(format!("{name}.running_var"), vec![rs.var.len()], &rs.var);
        }
        (bytes, arrays)
    }

    pub fn from_blob(config: &UNetConfig, bytes: &[u8]) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        let total: usize = params.parameter_count() + params.running.iter().map(|r| 2 * r.mean.len()).sum::<usize>();
        if bytes.len() != total * 4 {
            return Err(Error::Checkpoint(format!("expected {} bytes of parameters, got {}", total * 4, bytes.len())));
        }
        let mut values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for t in &mut params.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = values.next().expect("length checked"));
        }
        for rs in &mut params.running {
            rs.mean.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
            rs.var.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(params)
    }

    pub fn save_checkpoint(&self, dir: impl AsRef<Path>, meta: &CheckpointMeta) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let (bytes, arrays) = self.to_blob();
        let manifest = CheckpointManifest {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: self.config.clone(),
            sample_rate_hz: meta.sample_rate_hz,
            step: meta.step,
            epoch: meta.epoch,
            metrics: meta.metrics.clone(),
            arrays,
        };
        fs::write(dir.join(PARAMS_FILE), bytes)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(Self, CheckpointMeta)> {
        let dir = dir.as_ref();
        let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("unsupported schema_version {}", manifest.schema_version)));
        }
        let params = Self::from_blob(&manifest.config, &fs::read(dir.join(PARAMS_FILE))?)?;
        let (_, expected) = params.to_blob();
        if expected.iter().map(|a| (&a.name, a.len)).ne(manifest.arrays.iter().map(|a| (&a.name, a.len))) {
            return Err(Error::Checkpoint("array table does not match the configured architecture".into()));
        }
        let meta = CheckpointMeta {
            sample_rate_hz: manifest.sample_rate_hz,
            step: manifest.step,
            epoch: manifest.epoch,
            metrics: manifest.metrics,
        };
        Ok((params, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetConfig {
        UNetConfig { depth: 2, base_channels: 3, kernel_size: 3, input_length: 16, ..Default::default() }
    }

    fn input(b: usize, l: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        Tensor::from_vec([b, 1, l], (0..b * l).map(|_| n.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn init_is_reproducible() {
        let a = ModelParams::<f32>::init(&UNetConfig::default(), 9).unwrap();
        let b = ModelParams::<f32>::init(&UNetConfig::default(), 9).unwrap();
        assert_eq!(a.to_blob(), b.to_blob());
        let c = ModelParams::<f32>::init(&UNetConfig::default(), 10).unwrap();
        assert_ne!(a.to_blob().0, c.to_blob().0);
    }

    #[test]
    fn parameter_count_regression() {
        // Pinned from a standalone shape walk over the same layout.
        assert_eq!(ModelParams::<f32>::init(&UNetConfig::default(), 0).unwrap().parameter_count(), 1_016_433);
        let reduced = UNetConfig { depth: 3, base_channels: 8, ..Default::default() };
        assert_eq!(ModelParams::<f32>::init(&reduced, 0).unwrap().parameter_count(), 63_609);
    }

    #[test]
    fn init_weight_variance_matches_he() {
        // dec0.conv0 of the default net: 16 out, 48 in, k 7 -> 5376 weights; use a
        // wider custom layer to reach 10^4 elements.
        let cfg = UNetConfig { depth: 1, base_channels: 64, kernel_size: 3, input_length: 2, ..Default::default() };
        let p = ModelParams::<f64>::init(&cfg, 3).unwrap();
        let (spec, t) = p.specs().iter().zip(p.tensors()).find(|(s, _)| s.name == "bottleneck.conv0.weight").unwrap();
        assert_eq!(t.len(), 64 * 64 * 3);
        let n = t.len() as f64;
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / n;
        let expected = 2.0 / (spec.shape[1] * spec.shape[2]) as f64;
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = UNetConfig { input_length: 160, ..Default::default() };
        for seed in 0..3 {
            let mut p = ModelParams::<f64>::init(&cfg, seed).unwrap();
            let x = input(2, 160, seed + 10);
            // Running statistics taken from one batch so eval mode sees calibrated scales.
            let mut g = Graph::new();
            let b = p.bind(&mut g, false);
            let xv = g.input(x.clone());
            let (_, stats) = p.forward_graph(&mut g, &b, xv, Mode::Train).unwrap();
            p.update_running_stats(&stats, 1.0);
            for mode in [Mode::Train, Mode::Eval] {
                let y = p.forward(&x, mode).unwrap();
                assert_eq!(y.shape(), [2, 1, 160]);
                assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
        let p = ModelParams::<f64>::init(&small(), 1).unwrap();
        assert_eq!(p.forward(&input(3, 16, 2), Mode::Eval).unwrap().shape(), [3, 1, 16]);
        assert!(matches!(p.forward(&input(1, 10, 2), Mode::Eval), Err(Error::IndivisibleLength(10, 4))));
    }

    #[test]
    fn eval_is_deterministic_and_batch_equivariant() {
        let p = ModelParams::<f64>::init(&small(), 1).unwrap();
        let x = input(3, 16, 5);
        let y1 = p.forward(&x, Mode::Eval).unwrap();
        let y2 = p.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y1, y2);

        let perm = [2usize, 0, 1];
        let xp: Vec<f64> = perm.iter().flat_map(|&i| x.item(i).to_vec()).collect();
        let yp = p.forward(&Tensor::from_vec([3, 1, 16], xp).unwrap(), Mode::Eval).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(yp.item(j), y1.item(i));
        }
    }

    #[test]
    fn dice_examples() {
        let g = Tensor::from_vec([1, 1, 4], vec![1.0f64, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(dice_loss(&g, &g, 1.0).unwrap(), 0.0);
        let z = Tensor::<f64>::zeros([1, 1, 4]);
        assert_eq!(dice_loss(&z, &z, 1.0).unwrap(), 0.0);
        assert!(dice_loss(&z, &Tensor::zeros([1, 1, 5]), 1.0).is_err());

        let mut acc = DiceAccumulator::default();
        acc.add(g.data(), g.data());
        assert_eq!(acc.loss(1.0), 0.0);
    }

    #[test]
    fn predict_mask_examples() {
        assert_eq!(predict_mask(&[0.4f32, 0.5, 0.6], 0.5), vec![0, 1, 1]);
        assert_eq!(predict_mask(&[0.49f32; 4], 0.5), vec![0; 4]);
        assert_eq!(predict_mask(&[0.01f32, 0.2], 0.0), vec![1, 1]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ModelParams::<f32>::init(&small(), 4).unwrap();
        p.running[0].mean[1] = 0.25;
        let meta = CheckpointMeta { sample_rate_hz: 100.0, step: 7, epoch: 2, metrics: serde_json::json!({"val": 0.1}) };
        p.save_checkpoint(dir.path(), &meta).unwrap();
        let (q, m) = ModelParams::<f32>::load_checkpoint(dir.path()).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);

        fs::write(dir.path().join(PARAMS_FILE), [0u8; 12]).unwrap();
        assert!(ModelParams::<f32>::load_checkpoint(dir.path()).is_err());
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = ModelParams::<f64>::init(&small(), 4).unwrap();
        let c = p.running[0].mean.len();
        let s = BatchStats { mean: vec![1.0; c], var_unbiased: vec![3.0; c] };
        p.update_running_stats(&[(0, s)], BN_MOMENTUM);
        assert!((p.running[0].mean[0] - 0.1).abs() < 1e-12);
        assert!((p.running[0].var[0] - 1.2).abs() < 1e-12);
    }
}

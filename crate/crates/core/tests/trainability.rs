use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swd_core::autodiff::{Graph, Tensor};
use swd_core::model::{Mode, ModelParams, UNetConfig};
use swd_core::training::{adam_step, AdamConfig, AdamState};

const LEN: usize = 128;
const BATCH: usize = 4;

/// A fixed batch: a 10 Hz-like oscillation marks the target region, the
/// rest is low-level noise.
fn fixed_batch() -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut xs = Vec::with_capacity(BATCH * LEN);
    let mut ys = Vec::with_capacity(BATCH * LEN);
    for b in 0..BATCH {
        let (lo, hi) = (16 + 12 * b, 64 + 12 * b);
        for i in 0..LEN {
            let on = (lo..hi).contains(&i);
            let burst = if on { (i as f32 * 0.6).sin() * 0.8 } else { 0.0 };
            xs.push(burst + rng.random_range(-0.05..0.05));
            ys.push(f32::from(u8::from(on)));
        }
    }
    (Tensor::from_vec([BATCH, 1, LEN], xs).unwrap(), Tensor::from_vec([BATCH, 1, LEN], ys).unwrap())
}

/// Train-mode losses over `steps` Adam updates at a constant learning rate.
fn overfit(steps: usize, lr: f64) -> Vec<f64> {
    let cfg = UNetConfig { depth: 2, base_channels: 8, kernel_size: 7, convs_per_block: 2, norm: true, input_length: LEN };
    let mut params = ModelParams::<f32>::init(&cfg, 3).unwrap();
    let mut adam = AdamState::new(params.tensors());
    let (x, y) = fixed_batch();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let xv = g.input(x.clone());
        let (probs, stats) = params.forward_graph(&mut g, &bound, xv, Mode::Train).unwrap();
        let loss = g.dice_loss(probs, &y, 1.0).unwrap();
        losses.push(f64::from(g.value(loss).data()[0]));
        let mut grads = g.backward(loss);
        let grads: Vec<Tensor<f32>> = bound.vars.iter().zip(params.tensors()).map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape()))).collect();
        drop(g);
        adam_step(params.tensors_mut(), &grads, &mut adam, lr, &AdamConfig::default()).unwrap();
        params.update_running_stats(&stats, 0.1);
    }
    losses
}

#[test]
fn loss_falls_every_step_at_first() {
    let losses = overfit(21, 1e-3);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn single_batch_is_memorized() {
    let losses = overfit(300, 1e-3);
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best <= 0.05, "best dice loss {best}, last {:?}", &losses[losses.len() - 5..]);
}

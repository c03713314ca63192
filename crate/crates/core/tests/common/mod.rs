#![allow(dead_code)]

use adapower_core::numeric::{RngStream, Tensor};
use adapower_core::tsttt::TttConfig;
use adapower_core::world_model::{loss_and_grads, MemoryConfig, TrainSample, WorldModel, WorldModelConfig};

/// An 8×8 two-block model, small enough for coordinate-wise differences.
pub fn tiny_config() -> WorldModelConfig {
    WorldModelConfig {
        frame: [8, 8, 3],
        patch: 4,
        d_model: 8,
        blocks: 2,
        heads: 2,
        mlp_hidden: 8,
        adapter_stride: 1,
        action_hidden: 6,
        ttt: TttConfig {
            rank: 2,
            chunk: 3,
            ..TttConfig::default()
        },
        memory: MemoryConfig {
            capacity: 2,
            patch: 4,
            d_mem: 6,
            d_attn: 4,
            heads: 2,
        },
        ..WorldModelConfig::default()
    }
}

/// Replaces every parameter by Gaussian noise so no gradient is trivially zero.
pub fn randomize(model: &mut WorldModel<f64>, rng: &mut RngStream, std: f64) {
    let names: Vec<(String, Vec<usize>)> =
        model.params().iter().map(|(n, p)| (n.clone(), p.value.shape().to_vec())).collect();
    for (n, shape) in names {
        model.params_mut().set(&n, rng.gaussian_tensor(&shape, std)).unwrap();
    }
}

pub fn random_sample(cfg: &WorldModelConfig, model: &WorldModel<f64>, rng: &mut RngStream, memory_frames: usize) -> TrainSample<f64> {
    let (gh, gw) = cfg.grid();
    let context = (0..cfg.context).map(|_| rng.uniform_tensor(&[gh, gw, cfg.patch_dim()])).collect();
    let memory = (memory_frames > 0).then(|| {
        let enc = model.encoder();
        let toks: Vec<Tensor<f64>> = (0..memory_frames)
            .map(|_| enc.encode_frame(&rng.uniform_tensor(&cfg.frame)).unwrap())
            .collect();
        Tensor::concat_rows(&toks.iter().collect::<Vec<_>>()).unwrap()
    });
    TrainSample {
        context,
        action: vec![2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0],
        target: rng.uniform_tensor(&[gh, gw, cfg.patch_dim()]),
        memory,
    }
}

/// Largest relative error between the analytic gradient of the batch loss and
/// central differences, over `per_param` random entries of every parameter
/// whose name starts with one of `prefixes`.
pub fn model_grad_error(
    model: &WorldModel<f64>,
    batch: &[TrainSample<f64>],
    prefixes: &[&str],
    per_param: usize,
    rng: &mut RngStream,
) -> f64 {
    let (_, grads) = loss_and_grads(model, batch, None).unwrap();
    let names: Vec<String> = model
        .params()
        .iter()
        .map(|(n, _)| n.clone())
        .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
        .collect();
    assert!(!names.is_empty(), "no parameters match {prefixes:?}");
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for n in names {
        let base = model.params().tensor(&n).unwrap().clone();
        let g = &grads[&n];
        for _ in 0..per_param {
            let i = rng.below(base.numel());
            let at = |delta: f64| {
                let mut m = model.clone();
                let mut d = base.clone().into_data();
                d[i] += delta;
                m.params_mut().set(&n, Tensor::new(base.shape().to_vec(), d).unwrap()).unwrap();
                loss_and_grads(&m, batch, None).unwrap().0
            };
            let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
            let err = (g.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

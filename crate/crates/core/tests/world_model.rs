mod common;

use adapower_core::env::{default_tasks, env_step, render, EnvState, FRAME_SIZE};
use adapower_core::numeric::{RngStream, Tensor};
use adapower_core::tsttt::{AxisLayout, TttMode};
use adapower_core::world_model::*;
use common::{model_grad_error, random_sample, randomize, tiny_config};

fn random_latents(cfg: &WorldModelConfig, rng: &mut RngStream) -> Vec<Tensor<f64>> {
    let (gh, gw) = cfg.grid();
    (0..cfg.context).map(|_| rng.uniform_tensor(&[gh, gw, cfg.patch_dim()])).collect()
}

fn filled_bank(model: &WorldModel<f64>, rng: &mut RngStream, n: usize) -> adapower_core::memory::MemoryBank<f64> {
    let mut bank = model.new_bank();
    for _ in 0..n {
        bank.push_frame(rng.uniform_tensor(&model.config().frame)).unwrap();
    }
    bank
}

#[test]
fn fresh_adapters_reproduce_the_backbone() {
    let cfg = WorldModelConfig::default();
    let adapted = WorldModel::<f64>::build(&cfg, 3).unwrap();
    let base = WorldModel::<f64>::build(&cfg.base_only(), 3).unwrap();
    let mut rng = RngStream::new(1, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ctx = random_latents(&cfg, &mut rng);
        let action = [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0];
        let bank = filled_bank(&adapted, &mut rng, 3);
        let a = adapted.predict_step(&ctx, &action, Some(&bank), TttMode::Adaptive, None, None).unwrap();
        let b = base.predict_step(&ctx, &action, None, TttMode::Adaptive, None, None).unwrap();
        worst = worst.max(a.latent.max_abs_diff(&b.latent).unwrap());
    }
    assert!(worst <= 1e-12, "{worst}");
}

#[test]
fn adapter_sites_and_parameter_budget() {
    let cfg = WorldModelConfig::default();
    assert_eq!(cfg.adapter_sites(), vec![2, 4]);
    let m = WorldModel::<f64>::build(&cfg, 0).unwrap();
    let p = m.params();
    let adapters = p.count(ParamGroup::Ttt) + p.count(ParamGroup::Adapter);
    assert_eq!(adapters + p.count(ParamGroup::Base), p.total());
    assert!((adapters as f64) < 0.25 * p.total() as f64, "{adapters} of {}", p.total());
}

#[test]
fn patch_four_grid() {
    let mut rng = RngStream::new(2, 2);
    let f: Tensor<f64> = rng.uniform_tensor(&[32, 32, 3]);
    let l = patchify(&f, 4).unwrap();
    assert_eq!(l.shape(), &[8, 8, 48]);
    assert_eq!(unpatchify(&l, 4, 3).unwrap(), f);
    let c = patchify(&Tensor::<f64>::full(&[32, 32, 3], 0.25), 8).unwrap();
    assert!(c.data().iter().all(|&v| v == 0.25));
}

#[test]
fn invalid_config_and_inputs_rejected() {
    let mut cfg = WorldModelConfig::default();
    cfg.patch = 5;
    assert!(WorldModel::<f64>::build(&cfg, 0).is_err());
    let cfg = WorldModelConfig::default();
    let m = WorldModel::<f64>::build(&cfg, 0).unwrap();
    let mut rng = RngStream::new(0, 0);
    let ctx = random_latents(&cfg, &mut rng);
    assert!(m.predict_step(&ctx[..1], &[0.0, 0.0], None, TttMode::Adaptive, None, None).is_err());
    assert!(m.predict_step(&ctx, &[1.5, 0.0], None, TttMode::Adaptive, None, None).is_err());
}

#[test]
fn non_finite_input_names_the_block() {
    let cfg = WorldModelConfig::default();
    let m = WorldModel::<f64>::build(&cfg, 0).unwrap();
    let mut rng = RngStream::new(0, 1);
    let mut ctx = random_latents(&cfg, &mut rng);
    ctx[0] = ctx[0].map(|_| f64::NAN);
    let err = m.predict_step(&ctx, &[0.0, 0.0], None, TttMode::Adaptive, None, None).unwrap_err();
    assert!(err.to_string().contains("block"), "{err}");
}

#[test]
fn prediction_is_deterministic() {
    let mut cfg = WorldModelConfig::default();
    cfg.mode = PredictMode::NoiseConditioned;
    let m = WorldModel::<f64>::build(&cfg, 5).unwrap();
    let mut rng = RngStream::new(5, 5);
    let ctx = random_latents(&cfg, &mut rng);
    let run = |seed| {
        let mut s = RngStream::new(seed, 0);
        m.predict_step(&ctx, &[0.3, -0.2], None, TttMode::Adaptive, None, Some(&mut s)).unwrap().latent
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert!(m.predict_step(&ctx, &[0.3, -0.2], None, TttMode::Adaptive, None, None).is_err());
}

fn tiny_batch(model: &WorldModel<f64>, n: usize, seed: u64) -> Vec<TrainSample<f64>> {
    let mut rng = RngStream::new(seed, 9);
    (0..n).map(|i| random_sample(model.config(), model, &mut rng, i % 3)).collect()
}

fn frozen_base(cfg: &WorldModelConfig, seed: u64) -> WorldModel<f64> {
    let mut m = WorldModel::<f64>::build(cfg, seed).unwrap();
    m.params_mut().freeze_group(ParamGroup::Base);
    m
}

#[test]
fn base_stays_bit_identical_while_adapters_train() {
    let cfg = tiny_config();
    let mut m = frozen_base(&cfg, 1);
    let before = m.clone();
    let batch = tiny_batch(&m, 4, 1);
    let mut opt = AdamState::new(AdamConfig::default());
    let lrs = LearningRates { base: 1.0, ttt: 1e-3, adapter: 1e-4 };
    for _ in 0..100 {
        train_step(&mut m, &mut opt, &batch, lrs, None).unwrap();
    }
    for (name, p) in m.params().iter() {
        let old = before.params().tensor(name).unwrap();
        if p.group == ParamGroup::Base {
            assert_eq!(&p.value, old, "{name} moved");
        }
    }
    let moved = |g| m.params().iter().filter(|(_, p)| p.group == g).any(|(n, p)| &p.value != before.params().tensor(n).unwrap());
    assert!(moved(ParamGroup::Ttt) && moved(ParamGroup::Adapter));
}

#[test]
fn zero_learning_rates_keep_parameters_and_loss() {
    let cfg = tiny_config();
    let mut m = frozen_base(&cfg, 2);
    let before = m.clone();
    let batch = tiny_batch(&m, 3, 2);
    let mut opt = AdamState::new(AdamConfig::default());
    let lrs = LearningRates { base: 0.0, ttt: 0.0, adapter: 0.0 };
    let losses: Vec<f64> = (0..5).map(|_| train_step(&mut m, &mut opt, &batch, lrs, None).unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[0] == w[1]));
    for (name, p) in m.params().iter() {
        assert_eq!(&p.value, before.params().tensor(name).unwrap());
    }
}

#[test]
fn repeated_batch_loss_decreases() {
    let cfg = tiny_config();
    let mut m = WorldModel::<f64>::build(&cfg, 3).unwrap();
    let batch = tiny_batch(&m, 4, 3);
    let mut opt = AdamState::new(AdamConfig::default());
    let lrs = LearningRates { base: 1e-2, ttt: 1e-2, adapter: 1e-2 };
    let losses: Vec<f64> = (0..200).map(|_| train_step(&mut m, &mut opt, &batch, lrs, None).unwrap()).collect();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.9 * head, "{head} -> {tail}");
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config();
    let run = || {
        let mut m = frozen_base(&cfg, 4);
        let batch = tiny_batch(&m, 5, 4);
        let mut opt = AdamState::new(AdamConfig::default());
        let lrs = LearningRates { base: 0.0, ttt: 1e-3, adapter: 1e-3 };
        let losses: Vec<f64> = (0..5).map(|_| train_step(&mut m, &mut opt, &batch, lrs, None).unwrap()).collect();
        (losses, m)
    };
    let (la, ma) = run();
    let (lb, mb) = run();
    assert_eq!(la, lb);
    for (n, p) in ma.params().iter() {
        assert_eq!(&p.value, mb.params().tensor(n).unwrap());
    }
}

#[test]
fn backbone_and_action_encoder_gradients() {
    let cfg = tiny_config();
    let mut rng = RngStream::new(6, 6);
    let mut m = WorldModel::<f64>::build(&cfg, 6).unwrap();
    randomize(&mut m, &mut rng, 0.4);
    let batch = tiny_batch(&m, 2, 6);
    let err = model_grad_error(&m, &batch, &["embed", "pos", "block", "head", "action"], 2, &mut rng);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn adapter_gradients_for_every_layout() {
    for (i, layout) in AxisLayout::ALL.into_iter().enumerate() {
        let mut cfg = tiny_config();
        cfg.ttt.layout = layout;
        let mut rng = RngStream::new(7, i as u64);
        let mut m = WorldModel::<f64>::build(&cfg, 7).unwrap();
        randomize(&mut m, &mut rng, 0.4);
        let batch = tiny_batch(&m, 2, 7);
        let err = model_grad_error(&m, &batch, &["site"], 2, &mut rng);
        assert!(err < 1e-4, "{layout}: {err}");
    }
}

fn observation(frames: Vec<Tensor<f64>>, state: EnvState) -> Observation<f64> {
    Observation { history: frames, bank: None, state }
}

#[test]
fn rollout_bookkeeping() {
    let cfg = WorldModelConfig::default();
    let m = WorldModel::<f64>::build(&cfg, 8).unwrap();
    let mut rng = RngStream::new(8, 8);
    let frames: Vec<Tensor<f64>> = (0..2).map(|_| rng.uniform_tensor(&[32, 32, 3])).collect();
    let obs = observation(frames.clone(), EnvState::new([5.0, 5.0], [10.0, 10.0], [20.0, 20.0]));
    let empty = rollout(&m, &obs, &[], RngStream::new(0, 0)).unwrap();
    assert!(empty.frames.is_empty());

    let mut session = m.begin(&obs, RngStream::new(0, 0)).unwrap();
    let actions = vec![[0.5, -0.5]; 8];
    let traj = rollout_session(&m, &mut session, &actions).unwrap();
    assert_eq!(traj.frames.len(), 8);
    assert!(traj.frames.iter().all(|f| f.shape() == [32, 32, 3]));
    // displaced: the two observed frames, then predictions 1..=6; the bank keeps the last four
    let kept: Vec<&Tensor<f64>> = session.bank.frames().collect();
    assert_eq!(kept.len(), cfg.memory.capacity);
    for (k, f) in kept.iter().enumerate() {
        assert_eq!(*f, &traj.frames[2 + k]);
    }
}

#[test]
fn ground_truth_stub_replays_the_simulator() {
    let task = &default_tasks()[0];
    let mut rng = RngStream::new(9, 9);
    let s0 = task.spawn(&mut rng);
    let frame = |s: &EnvState| frame_from_rgb8::<f64>(&render(s), FRAME_SIZE, FRAME_SIZE).unwrap();
    let actions: Vec<[f64; 2]> = (0..12).map(|_| [2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0]).collect();
    let obs = observation(vec![frame(&s0)], s0);
    let traj = rollout(&GroundTruthStub, &obs, &actions, RngStream::new(0, 0)).unwrap();
    let mut s = s0;
    for (a, f) in actions.iter().zip(&traj.frames) {
        s = env_step(&s, *a).unwrap();
        assert_eq!(f, &frame(&s));
    }
}

#[test]
fn persistent_fast_weights_change_later_steps() {
    let mut cfg = WorldModelConfig::default();
    let mut rng = RngStream::new(10, 10);
    let frames: Vec<Tensor<f64>> = (0..3).map(|_| rng.uniform_tensor(&[32, 32, 3])).collect();
    let obs = observation(frames, EnvState::new([5.0, 5.0], [10.0, 10.0], [20.0, 20.0]));
    let run = |cfg: &WorldModelConfig| {
        let mut m = WorldModel::<f64>::build(cfg, 10).unwrap();
        randomize_adapter_outputs(&mut m);
        rollout(&m, &obs, &[[0.2, 0.1]; 3], RngStream::new(0, 0)).unwrap()
    };
    let off = run(&cfg);
    cfg.persist_ttt = true;
    let on = run(&cfg);
    assert_eq!(off.frames[0], on.frames[0]);
    assert_ne!(off.frames[2], on.frames[2]);
}

/// Gives the TTT output projections weight so the branches affect outputs.
fn randomize_adapter_outputs(m: &mut WorldModel<f64>) {
    let mut rng = RngStream::new(77, 0);
    let names: Vec<(String, Vec<usize>)> = m
        .params()
        .iter()
        .filter(|(n, _)| n.contains("theta_o"))
        .map(|(n, p)| (n.clone(), p.value.shape().to_vec()))
        .collect();
    for (n, s) in names {
        m.params_mut().set(&n, rng.gaussian_tensor(&s, 0.1)).unwrap();
    }
}

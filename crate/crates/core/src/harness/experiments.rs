use rayon::prelude::*;

use super::config::RunConfig;
use super::metrics::{schema, Cell, MetricsTable};
use crate::env::{default_tasks, gen_dataset, run_episode, EpisodeRecord, TaskSpec, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::memory::SurrogateEncoder;
use crate::mpc::{control_loop, EpisodeResult};
use crate::numeric::{RngStream, Scalar, Tensor};
use crate::tsttt::AxisLayout;
use crate::world_model::{
    frame_from_rgb8, patchify, rollout, train_step, AdamConfig, AdamState, Dynamics, GroundTruthStub, LearningRates,
    Observation, ParamGroup, TrainSample, WorldModel, WorldModelConfig,
};

const TRAIN_STREAM: u64 = 0x7A41_0000;
const PRETRAIN_TAG: u64 = 1;
const ADAPT_TAG: u64 = 2;
const VAL_STREAM: u64 = 0x7A42_0000;
const HELDOUT_STREAM: u64 = 0x4E1D_0000_0000;
const ROLLOUT_STREAM: u64 = 0x7A43_0000;
const MPC_STREAM: u64 = 0x3A9C_0000_0000;
/// Seed offset separating held-out episodes from training data.
const HELDOUT_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

fn frame<S: Scalar>(ep: &EpisodeRecord, i: usize) -> Result<Tensor<S>> {
    frame_from_rgb8(&ep.steps[i].frame, FRAME_SIZE, FRAME_SIZE)
}

/// Training tasks of the config.
pub fn train_tasks(cfg: &RunConfig) -> Result<Vec<TaskSpec>> {
    let all = default_tasks();
    cfg.env
        .train_tasks
        .iter()
        .map(|&id| {
            all.iter()
                .find(|t| t.id == id)
                .cloned()
                .ok_or_else(|| Error::config(format!("no task {id}")))
        })
        .collect()
}

/// The training dataset of the config, generated in memory.
pub fn training_episodes(cfg: &RunConfig) -> Result<Vec<EpisodeRecord>> {
    let (eps, _) = gen_dataset(
        cfg.env.episodes,
        cfg.env.expert_mix,
        cfg.seed,
        &train_tasks(cfg)?,
        cfg.env.imperfect(),
        &mut std::io::sink(),
    )?;
    Ok(eps)
}

/// Splits off the last `fraction` of episodes (at least one when non-zero).
pub fn split_episodes(eps: &[EpisodeRecord], fraction: f64) -> (&[EpisodeRecord], &[EpisodeRecord]) {
    let mut n_val = (eps.len() as f64 * fraction).ceil() as usize;
    if eps.len() > 1 {
        n_val = n_val.min(eps.len() - 1);
    } else {
        n_val = 0;
    }
    eps.split_at(eps.len() - n_val)
}

/// Every `(episode, t)` with a successor frame.
pub fn transitions(eps: &[EpisodeRecord]) -> Vec<(usize, usize)> {
    eps.iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.steps.len() - 1).map(move |t| (e, t)))
        .collect()
}

/// Transition `t → t+1` with the same context and memory a rollout session
/// would see after observing frames `0..=t`.
pub fn make_sample<S: Scalar>(
    cfg: &WorldModelConfig,
    encoder: &SurrogateEncoder<S>,
    ep: &EpisodeRecord,
    t: usize,
) -> Result<TrainSample<S>> {
    let c = cfg.context;
    let split = (t + 1).saturating_sub(c);
    let context = (0..c)
        .map(|j| patchify(&frame(ep, (t + 1 + j).saturating_sub(c))?, cfg.patch))
        .collect::<Result<Vec<_>>>()?;
    let memory = if cfg.adapters && cfg.use_memory && split > 0 {
        let from = split.saturating_sub(cfg.memory.capacity);
        let toks = (from..split)
            .map(|i| encoder.encode_frame(&frame(ep, i)?))
            .collect::<Result<Vec<_>>>()?;
        Some(Tensor::concat_rows(&toks.iter().collect::<Vec<_>>())?)
    } else {
        None
    };
    let a = ep.steps[t].action;
    Ok(TrainSample {
        context,
        action: vec![S::of(a[0] as f64), S::of(a[1] as f64)],
        target: patchify(&frame(ep, t + 1)?, cfg.patch)?,
        memory,
    })
}

/// Learning-rate factor at iteration `i` of a `total`-iteration stage: linear
/// warm-up over `warmup` iterations, then linear decay towards zero.
pub fn lr_scale(i: usize, warmup: usize, total: usize) -> f64 {
    if i < warmup {
        (i + 1) as f64 / warmup as f64
    } else if total > warmup {
        (total.saturating_sub(i)) as f64 / (total - warmup) as f64
    } else {
        1.0
    }
}

/// Runs iterations `from..to` of a `total`-iteration training stage. Batches are drawn from
/// a stream keyed by `(seed, tag, iteration)`, so a resumed run sees the
/// same batches as an unbroken one. Returns `(iteration, loss, lr scale)`.
#[allow(clippy::too_many_arguments)]
pub fn train_iterations<S: Scalar>(
    model: &mut WorldModel<S>,
    opt: &mut AdamState<S>,
    eps: &[EpisodeRecord],
    lrs: LearningRates,
    batch: usize,
    warmup: usize,
    total: usize,
    seed: u64,
    tag: u64,
    from: usize,
    to: usize,
) -> Result<Vec<(usize, f64, f64)>> {
    let index = transitions(eps);
    if index.is_empty() {
        return Err(Error::config("training data holds no transitions"));
    }
    let cfg = model.config().clone();
    let enc = model.encoder().clone();
    let root = RngStream::new(seed, TRAIN_STREAM ^ tag);
    let mut curve = Vec::with_capacity(to.saturating_sub(from));
    for i in from..to {
        let mut rng = root.derive(i as u64);
        let picks: Vec<(usize, usize)> = (0..batch).map(|_| index[rng.below(index.len())]).collect();
        let samples = picks
            .par_iter()
            .map(|&(e, t)| make_sample(&cfg, &enc, &eps[e], t))
            .collect::<Result<Vec<_>>>()?;
        let scale = lr_scale(i, warmup, total);
        let loss = train_step(model, opt, &samples, lrs.scaled(scale), Some(&mut rng)).map_err(|e| match e {
            Error::Numeric(_) => Error::numeric(format!("training loss at iteration {i}")),
            other => other,
        })?;
        curve.push((i, loss.as_f64(), scale));
    }
    Ok(curve)
}

/// A model trained by [`train_pipeline`].
#[derive(Clone, Debug)]
pub struct Trained<S: Scalar> {
    pub model: WorldModel<S>,
    pub opt: AdamState<S>,
    pub losses: MetricsTable,
}

fn push_curve(t: &mut MetricsTable, stage: &str, curve: &[(usize, f64, f64)]) -> Result<()> {
    for &(i, l, s) in curve {
        t.push(vec![stage.into(), i.into(), l.into(), s.into()])?;
    }
    Ok(())
}

/// Trains the bare backbone on all parameters.
pub fn pretrain_base<S: Scalar>(cfg: &RunConfig, eps: &[EpisodeRecord]) -> Result<(WorldModel<S>, Vec<(usize, f64, f64)>)> {
    let mut base = WorldModel::build(&cfg.model.base_only(), cfg.seed)?;
    let mut opt = AdamState::new(AdamConfig::default());
    let curve = pretrain_iterations(cfg, &mut base, &mut opt, eps, 0, cfg.train.pretrain_iters)?;
    Ok((base, curve))
}

/// Runs backbone iterations `from..to` on `base`.
pub fn pretrain_iterations<S: Scalar>(
    cfg: &RunConfig,
    base: &mut WorldModel<S>,
    opt: &mut AdamState<S>,
    eps: &[EpisodeRecord],
    from: usize,
    to: usize,
) -> Result<Vec<(usize, f64, f64)>> {
    let t = &cfg.train;
    let lrs = LearningRates {
        base: t.lr_base,
        ttt: 0.0,
        adapter: 0.0,
    };
    train_iterations(base, opt, eps, lrs, t.batch, t.warmup, t.pretrain_iters, cfg.seed, PRETRAIN_TAG, from, to)
}

/// Adapted model on top of a frozen `base`, before any adapter training.
pub fn adapted_model<S: Scalar>(cfg: &RunConfig, base: &WorldModel<S>) -> Result<WorldModel<S>> {
    let mut m = WorldModel::build(&cfg.model, cfg.seed)?;
    m.load_base(base)?;
    m.params_mut().freeze_group(ParamGroup::Base);
    Ok(m)
}

pub fn adapter_rates(cfg: &RunConfig) -> LearningRates {
    LearningRates {
        base: 0.0,
        ttt: cfg.train.lr_ttt,
        adapter: cfg.train.lr_adapter,
    }
}

/// Runs adapter iterations `from..to` on `model`.
pub fn train_adapters<S: Scalar>(
    cfg: &RunConfig,
    model: &mut WorldModel<S>,
    opt: &mut AdamState<S>,
    eps: &[EpisodeRecord],
    from: usize,
    to: usize,
) -> Result<Vec<(usize, f64, f64)>> {
    let t = &cfg.train;
    train_iterations(model, opt, eps, adapter_rates(cfg), t.batch, t.warmup, t.iters, cfg.seed, ADAPT_TAG, from, to)
}

/// Backbone pretraining (skipped when `train.pretrain_iters = 0`), freeze,
/// then adapter training.
pub fn train_pipeline<S: Scalar>(cfg: &RunConfig, eps: &[EpisodeRecord]) -> Result<Trained<S>> {
    let (base, pre) = pretrain_base(cfg, eps)?;
    train_from_base(cfg, &base, eps, pre)
}

pub fn train_from_base<S: Scalar>(
    cfg: &RunConfig,
    base: &WorldModel<S>,
    eps: &[EpisodeRecord],
    pretrain_curve: Vec<(usize, f64, f64)>,
) -> Result<Trained<S>> {
    let mut losses = MetricsTable::new(schema::LOSS);
    push_curve(&mut losses, "pretrain", &pretrain_curve)?;
    let mut model = adapted_model(cfg, base)?;
    let mut opt = AdamState::new(AdamConfig::default());
    let curve = train_adapters(cfg, &mut model, &mut opt, eps, 0, cfg.train.iters)?;
    push_curve(&mut losses, "adapter", &curve)?;
    Ok(Trained { model, opt, losses })
}

/// Mean one-step MSE over every transition of `eps`.
pub fn one_step_mse<S: Scalar>(model: &WorldModel<S>, eps: &[EpisodeRecord], seed: u64) -> Result<f64> {
    let index = transitions(eps);
    if index.is_empty() {
        return Err(Error::config("no transitions to evaluate"));
    }
    let cfg = model.config().clone();
    let enc = model.encoder().clone();
    let root = RngStream::new(seed, VAL_STREAM);
    let errs = index
        .par_iter()
        .enumerate()
        .map(|(n, &(e, t))| {
            let s = make_sample(&cfg, &enc, &eps[e], t)?;
            let mut bank = model.new_bank();
            // the sample already holds encoded memory; rebuild it as frames
            let split = (t + 1).saturating_sub(cfg.context);
            for i in split.saturating_sub(cfg.memory.capacity)..split {
                bank.push_frame(frame(&eps[e], i)?)?;
            }
            let mut rng = root.derive(n as u64);
            let p = model.predict_step(&s.context, &s.action, Some(&bank), cfg.ttt_mode, None, Some(&mut rng))?;
            Ok(mse(&p.latent, &s.target))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn mse<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / a.numel() as f64
}

/// Imperfect-policy episodes on every task, long enough for a rollout of
/// `horizon` steps after `start + 1` observed frames.
pub fn heldout_episodes(cfg: &RunConfig) -> Result<Vec<EpisodeRecord>> {
    let tasks = default_tasks();
    let need = cfg.eval.start + cfg.eval.horizon + 1;
    let seed = cfg.seed ^ HELDOUT_SEED;
    let mut out = Vec::with_capacity(cfg.eval.episodes);
    let mut i = 0u64;
    while out.len() < cfg.eval.episodes {
        if i > 100 * cfg.eval.episodes as u64 + 100 {
            return Err(Error::config(format!("episodes too short for {need} frames")));
        }
        let task = &tasks[i as usize % tasks.len()];
        let ep = run_episode(task, cfg.env.imperfect(), &mut RngStream::new(seed, HELDOUT_STREAM + i))?;
        if ep.steps.len() >= need {
            out.push(ep);
        }
        i += 1;
    }
    Ok(out)
}

/// Open-loop rollout errors: `[episode][h]` is the frame MSE `h + 1` steps
/// after the last observed frame, driving the predictor with the recorded
/// actions. Also returns the predicted frames.
pub fn rollout_errors<S: Scalar, D: Dynamics<S>>(
    model: &D,
    eps: &[EpisodeRecord],
    start: usize,
    horizon: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Tensor<S>>>)> {
    let root = RngStream::new(seed, ROLLOUT_STREAM);
    let per: Vec<(Vec<f64>, Vec<Tensor<S>>)> = eps
        .par_iter()
        .enumerate()
        .map(|(n, ep)| {
            if ep.steps.len() < start + horizon + 1 {
                return Err(Error::contract(format!("episode {n} is too short for the rollout")));
            }
            let obs = Observation {
                history: (0..=start).map(|i| frame(ep, i)).collect::<Result<_>>()?,
                bank: None,
                state: crate::env::EnvState::from_snapshot(ep.steps[start].state, start),
            };
            let actions: Vec<[f64; 2]> = (start..start + horizon)
                .map(|i| [ep.steps[i].action[0] as f64, ep.steps[i].action[1] as f64])
                .collect();
            let traj = rollout(model, &obs, &actions, root.derive(n as u64))?;
            let errs = traj
                .frames
                .iter()
                .enumerate()
                .map(|(h, f)| Ok(mse(f, &frame(ep, start + h + 1)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((errs, traj.frames))
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().unzip())
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Per-horizon rollout MSE table (mean and std over held-out episodes).
pub fn rollout_table(errors: &[Vec<f64>], step: usize) -> Result<MetricsTable> {
    let mut t = MetricsTable::new(schema::ROLLOUT);
    let horizon = errors.first().map_or(0, |e| e.len());
    for h in 0..horizon {
        let col: Vec<f64> = errors.iter().map(|e| e[h]).collect();
        let (m, s) = mean_std(&col);
        t.push(vec![step.into(), (h + 1).into(), m.into(), s.into(), errors.len().into()])?;
    }
    Ok(t)
}

/// A strip image (RGB, row-major): recorded frames on top, predictions below.
pub fn frame_strip<S: Scalar>(truth: &[Tensor<S>], predicted: &[Tensor<S>]) -> (usize, usize, Vec<u8>) {
    let n = truth.len().max(predicted.len());
    let (w, h) = (n * FRAME_SIZE, 2 * FRAME_SIZE);
    let mut img = vec![0u8; w * h * 3];
    for (row, frames) in [truth, predicted].into_iter().enumerate() {
        for (k, f) in frames.iter().enumerate() {
            let px = crate::world_model::frame_to_rgb8(f);
            for y in 0..FRAME_SIZE {
                for x in 0..FRAME_SIZE {
                    let dst = ((row * FRAME_SIZE + y) * w + k * FRAME_SIZE + x) * 3;
                    let src = (y * FRAME_SIZE + x) * 3;
                    img[dst..dst + 3].copy_from_slice(&px[src..src + 3]);
                }
            }
        }
    }
    (w, h, img)
}

/// Seed of training run `k` in multi-seed experiments.
pub fn run_seed(cfg: &RunConfig, k: usize) -> u64 {
    cfg.seed.wrapping_add(k as u64)
}

fn with_seed(cfg: &RunConfig, seed: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutRun {
    pub layout: AxisLayout,
    pub seed: u64,
    /// `None` when training diverged.
    pub val_mse: Option<f64>,
}

/// Trains one adapted model per layout and seed on a shared pretrained
/// backbone per seed and reports one-step validation MSE.
pub fn layout_ablation<S: Scalar>(cfg: &RunConfig) -> Result<(Vec<LayoutRun>, MetricsTable, MetricsTable)> {
    let mut runs = Vec::new();
    for k in 0..cfg.eval.seeds {
        let c = with_seed(cfg, run_seed(cfg, k));
        let eps = training_episodes(&c)?;
        let (train, val) = split_episodes(&eps, c.train.val_fraction);
        let (base, _) = pretrain_base::<S>(&c, train)?;
        for layout in AxisLayout::ALL {
            let mut lc = c.clone();
            lc.model.ttt.layout = layout;
            let val_mse = match train_from_base(&lc, &base, train, Vec::new()) {
                Ok(t) => Some(one_step_mse(&t.model, val, lc.seed)).transpose(),
                Err(Error::Numeric(_)) => Ok(None),
                Err(e) => Err(e),
            };
            let val_mse = match val_mse {
                Ok(v) => v.filter(|m| m.is_finite()),
                Err(Error::Numeric(_)) => None,
                Err(e) => return Err(e),
            };
            runs.push(LayoutRun {
                layout,
                seed: lc.seed,
                val_mse,
            });
        }
    }
    let mut table = MetricsTable::new(schema::LAYOUT);
    for r in &runs {
        table.push(vec![
            r.layout.as_str().into(),
            Cell::Int(r.seed as i64),
            r.val_mse.map_or(Cell::Text("diverged".into()), Cell::Float),
            Cell::Int(r.val_mse.is_none() as i64),
        ])?;
    }
    let mut summary = MetricsTable::new(schema::LAYOUT_SUMMARY);
    for layout in AxisLayout::ALL {
        let ok: Vec<f64> = runs.iter().filter(|r| r.layout == layout).filter_map(|r| r.val_mse).collect();
        let diverged = cfg.eval.seeds - ok.len();
        let mean = if ok.is_empty() { f64::NAN } else { mean_std(&ok).0 };
        summary.push(vec![layout.as_str().into(), mean.into(), diverged.into(), cfg.eval.seeds.into()])?;
    }
    Ok((runs, table, summary))
}

/// Horizon-`eval.horizon` rollout MSE of an adapted model trained from a
/// shared backbone, with memory on and off, per seed: `(with, without)`.
pub fn memory_ablation<S: Scalar>(cfg: &RunConfig) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for k in 0..cfg.eval.seeds {
        let c = with_seed(cfg, run_seed(cfg, k));
        let eps = training_episodes(&c)?;
        let (base, _) = pretrain_base::<S>(&c, &eps)?;
        let held = heldout_episodes(&c)?;
        let mut pair = [0.0; 2];
        for (slot, use_memory) in [(0, true), (1, false)] {
            let mut mc = c.clone();
            mc.model.use_memory = use_memory;
            let t = train_from_base(&mc, &base, &eps, Vec::new())?;
            let (errs, _) = rollout_errors(&t.model, &held, c.eval.start, c.eval.horizon, c.seed)?;
            let last: Vec<f64> = errs.iter().map(|e| e[c.eval.horizon - 1]).collect();
            pair[slot] = mean_std(&last).0;
        }
        out.push((pair[0], pair[1]));
    }
    Ok(out)
}

/// Paired per-episode outcomes of one task.
#[derive(Clone, Debug)]
pub struct MpcEpisode {
    pub task_id: usize,
    pub episode: usize,
    pub bare_success: bool,
    pub mpc: EpisodeResult,
    pub oracle_success: bool,
}

/// Episode stream shared by every condition of episode `e` of `task_id`.
pub fn mpc_stream(seed: u64, task_id: usize, e: usize) -> RngStream {
    RngStream::new(seed, MPC_STREAM + (task_id as u64) * 1_000_000 + e as u64)
}

/// Bare imperfect policy, MPC with `model`, and MPC with the true simulator,
/// all on the same episode streams.
pub fn mpc_eval<S: Scalar, D: Dynamics<S>>(cfg: &RunConfig, model: &D) -> Result<(Vec<MpcEpisode>, MetricsTable)> {
    let policy = cfg.env.imperfect();
    let planner = &cfg.mpc.planner;
    let mut eps = Vec::new();
    let mut table = MetricsTable::new(schema::MPC);
    let rate = |n: usize, d: usize| n as f64 / d as f64;
    let (mut tb, mut tm, mut to, mut tn) = (0, 0, 0, 0);
    for task in default_tasks() {
        let (mut b, mut m, mut o) = (0, 0, 0);
        for e in 0..cfg.mpc.episodes {
            let s = mpc_stream(cfg.seed, task.id, e);
            let bare = run_episode(&task, policy, &mut s.clone())?.success;
            let mpc = control_loop(&task, policy, model, planner, &mut s.clone())?;
            let oracle = control_loop::<S, _>(&task, policy, &GroundTruthStub, planner, &mut s.clone())?.success;
            b += bare as usize;
            m += mpc.success as usize;
            o += oracle as usize;
            eps.push(MpcEpisode {
                task_id: task.id,
                episode: e,
                bare_success: bare,
                mpc,
                oracle_success: oracle,
            });
        }
        let n = cfg.mpc.episodes;
        table.push(vec![
            task.id.to_string().into(),
            n.into(),
            rate(b, n).into(),
            rate(m, n).into(),
            rate(o, n).into(),
            (rate(m, n) - rate(b, n)).into(),
        ])?;
        (tb, tm, to, tn) = (tb + b, tm + m, to + o, tn + n);
    }
    table.push(vec![
        "avg".into(),
        tn.into(),
        rate(tb, tn).into(),
        rate(tm, tn).into(),
        rate(to, tn).into(),
        (rate(tm, tn) - rate(tb, tn)).into(),
    ])?;
    Ok((eps, table))
}

/// Module ablation: adapters with TTT only, memory only, and both, each
/// trained from the same backbone and evaluated by rollout and MPC.
pub fn module_ablation<S: Scalar>(cfg: &RunConfig) -> Result<MetricsTable> {
    let eps = training_episodes(cfg)?;
    let (base, _) = pretrain_base::<S>(cfg, &eps)?;
    let held = heldout_episodes(cfg)?;
    let mut table = MetricsTable::new(schema::MODULES);
    for (name, ttt, mem) in [("ttt_only", true, false), ("mp_only", false, true), ("ttt_mp", true, true)] {
        let mut c = cfg.clone();
        c.model.use_ttt = ttt;
        c.model.use_memory = mem;
        let t = train_from_base(&c, &base, &eps, Vec::new())?;
        let (errs, _) = rollout_errors(&t.model, &held, c.eval.start, c.eval.horizon, c.seed)?;
        let last: Vec<f64> = errs.iter().map(|e| e[c.eval.horizon - 1]).collect();
        let (_, mpc) = mpc_eval(&c, &t.model)?;
        let avg = mpc.rows.len() - 1;
        let f = |col| mpc.float(avg, col).unwrap_or(f64::NAN);
        table.push(vec![
            name.into(),
            f("bare_success").into(),
            f("mpc_success").into(),
            f("delta").into(),
            mean_std(&last).0.into(),
        ])?;
    }
    Ok(table)
}

//! `adapower`: data generation, training, rollout evaluation, ablations and
//! MPC evaluation on the push-box world.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adapower_core::env::{read_dataset, EpisodeRecord};
use adapower_core::harness::experiments::*;
use adapower_core::harness::*;
use adapower_core::numeric::Tensor;
use adapower_core::world_model::{AdamConfig, AdamState, GroundTruthStub, WorldModel};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

/// Models are trained and checkpointed in single precision.
type S = f32;

const STAGE_KEY: &str = "train.stage";

#[derive(Parser, Debug)]
#[command(name = "adapower", version, about = "Adapters, test-time training and MPC on a toy push world")]
struct Cli {
    /// Run configuration (`key = value` lines); omitted keys keep defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate the training dataset into OUT/dataset.bin.
    GenData,
    /// Pretrain the backbone, freeze it and train the adapters.
    Train {
        /// Dataset from gen-data; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop adapter training after this iteration (the learning-rate
        /// schedule still spans `train.iters`); resume later with `--resume`.
        #[arg(long)]
        until: Option<usize>,
    },
    /// Open-loop rollout MSE per horizon on held-out episodes.
    EvalRollout {
        #[arg(long, required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Held-out episodes; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluate the true simulator instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Layout or module ablation.
    Ablate {
        #[arg(value_enum)]
        which: Ablation,
    },
    /// Success of the bare policy, learned-model MPC and simulator MPC.
    MpcEval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Ablation {
    Layout,
    Modules,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_csv(&self, name: &str, t: &MetricsTable) -> Result<PathBuf> {
        let p = self.path(name);
        let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
        t.write_csv(&mut w)?;
        w.flush()?;
        Ok(p)
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn save_checkpoint(ctx: &Ctx, c: &Checkpoint, name: &str) -> Result<PathBuf> {
    let p = ctx.path(name);
    let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
    c.write(&mut w)?;
    w.flush()?;
    Ok(p)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Checkpoint::read(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<WorldModel<S>> {
    let mut m = WorldModel::build(&cfg.model, cfg.seed)?;
    restore_model(&load_checkpoint(path)?, &mut m, AdamConfig::default())
        .with_context(|| format!("{} does not match the configured model", path.display()))?;
    Ok(m)
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let p = ctx.path("dataset.bin");
    let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
    let (_, s) = adapower_core::env::gen_dataset(
        cfg.env.episodes,
        cfg.env.expert_mix,
        cfg.seed,
        &train_tasks(cfg)?,
        cfg.env.imperfect(),
        &mut w,
    )?;
    w.flush()?;
    drop(w);
    let sum = checksum(&std::fs::read(&p)?);
    ctx.say(format!(
        "{}: {} episodes ({} expert), success expert {:.3} imperfect {:.3}, mean length {:.1}, checksum {sum:016x}",
        p.display(),
        s.episodes,
        s.expert_episodes,
        s.expert_success_rate,
        s.imperfect_success_rate,
        s.mean_length
    ));
    Ok(())
}

fn push_curve(t: &mut MetricsTable, stage: &str, curve: &[(usize, f64, f64)]) -> Result<()> {
    for &(i, l, s) in curve {
        t.push(vec![stage.into(), i.into(), l.into(), s.into()])?;
    }
    Ok(())
}

fn stage_checkpoint(model: &WorldModel<S>, opt: &AdamState<S>, iteration: usize, stage: usize) -> Checkpoint {
    let mut c = checkpoint_model(model, Some(opt), iteration);
    c.insert(STAGE_KEY, &Tensor::<f64>::scalar(stage as f64));
    c
}

fn train(ctx: &Ctx, data: Option<&Path>, resume: Option<&Path>, until: Option<usize>) -> Result<()> {
    let cfg = &ctx.cfg;
    let eps = match data {
        Some(p) => read_episodes(p)?,
        None => training_episodes(cfg)?,
    };
    let t = &cfg.train;
    let (mut stage, mut from, mut saved) = (0, 0, None);
    if let Some(p) = resume {
        let c = load_checkpoint(p)?;
        stage = c.get::<f64>(STAGE_KEY).and_then(|s| s.item()).context("checkpoint has no training stage")? as usize;
        saved = Some(c);
    }
    let mut losses = MetricsTable::new(schema::LOSS);

    let mut base = WorldModel::<S>::build(&cfg.model.base_only(), cfg.seed)?;
    if stage == 0 {
        let mut opt = AdamState::new(AdamConfig::default());
        if let Some(c) = saved.take() {
            let (o, it) = restore_model(&c, &mut base, AdamConfig::default())?;
            opt = o.unwrap_or(opt);
            from = it;
        }
        let to = t.pretrain_iters.max(from);
        let curve = pretrain_iterations(cfg, &mut base, &mut opt, &eps, from, to)?;
        push_curve(&mut losses, "pretrain", &curve)?;
        save_checkpoint(ctx, &stage_checkpoint(&base, &opt, to, 0), "base.ckpt")?;
        from = 0;
    }

    let mut model = adapted_model(cfg, &base)?;
    let mut opt = AdamState::new(AdamConfig::default());
    if let Some(c) = saved.take() {
        let (o, it) = restore_model(&c, &mut model, AdamConfig::default())?;
        opt = o.unwrap_or(opt);
        from = it;
    }
    let to = until.map_or(t.iters, |u| u.min(t.iters)).max(from);
    let curve = train_adapters(cfg, &mut model, &mut opt, &eps, from, to)?;
    push_curve(&mut losses, "adapter", &curve)?;
    let ck = save_checkpoint(ctx, &stage_checkpoint(&model, &opt, to, 1), "model.ckpt")?;
    let csv = ctx.write_csv("losses.csv", &losses)?;
    let last = curve.last().map_or(f64::NAN, |c| c.1);
    ctx.say(format!("{}: adapter iteration {to}, last loss {last:.6}; curve in {}", ck.display(), csv.display()));
    Ok(())
}

fn write_png(path: &Path, w: usize, h: usize, rgb: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(w as u32, h as u32, rgb).context("strip buffer size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn eval_rollout(ctx: &Ctx, checkpoint: Option<&Path>, data: Option<&Path>, oracle: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let (start, horizon) = (cfg.eval.start, cfg.eval.horizon);
    let held = match data {
        Some(p) => {
            let eps: Vec<_> = read_episodes(p)?.into_iter().filter(|e| e.steps.len() > start + horizon).collect();
            if eps.is_empty() {
                bail!("no episode in {} is long enough for a {horizon}-step rollout", p.display());
            }
            eps
        }
        None => heldout_episodes(cfg)?,
    };
    let (errs, frames) = match checkpoint.filter(|_| !oracle) {
        Some(p) => rollout_errors(&load_model(cfg, p)?, &held, start, horizon, cfg.seed)?,
        None => rollout_errors::<S, _>(&GroundTruthStub, &held, start, horizon, cfg.seed)?,
    };
    let table = rollout_table(&errs, cfg.train.iters)?;
    let csv = ctx.write_csv("rollout.csv", &table)?;
    for (k, (ep, pred)) in held.iter().zip(&frames).take(cfg.eval.strips).enumerate() {
        let truth = (start + 1..=start + horizon)
            .map(|i| adapower_core::world_model::frame_from_rgb8(&ep.steps[i].frame, 32, 32))
            .collect::<adapower_core::Result<Vec<Tensor<S>>>>()?;
        let (w, h, px) = frame_strip(&truth, pred);
        write_png(&ctx.path(&format!("strip_{k:03}.png")), w, h, px)?;
    }
    let f = |i: usize| table.float(i, "mse_mean").unwrap_or(f64::NAN);
    ctx.say(format!(
        "{}: {} episodes, mse h1 {:.6} h{horizon} {:.6}",
        csv.display(),
        held.len(),
        f(0),
        f(horizon - 1)
    ));
    Ok(())
}

fn ablate(ctx: &Ctx, which: Ablation) -> Result<()> {
    let cfg = &ctx.cfg;
    match which {
        Ablation::Layout => {
            let (_, runs, summary) = layout_ablation::<S>(cfg)?;
            ctx.write_csv("layout.csv", &runs)?;
            let p = ctx.write_csv("layout_summary.csv", &summary)?;
            ctx.say(format!("{}:\n{}", p.display(), summary.to_csv().trim_end()));
        }
        Ablation::Modules => {
            let t = module_ablation::<S>(cfg)?;
            let p = ctx.write_csv("modules.csv", &t)?;
            ctx.say(format!("{}:\n{}", p.display(), t.to_csv().trim_end()));
        }
    }
    Ok(())
}

fn mpc_eval_cmd(ctx: &Ctx, checkpoint: &Path) -> Result<()> {
    let cfg = &ctx.cfg;
    let model = load_model(cfg, checkpoint)?;
    let (eps, table) = mpc_eval(cfg, &model)?;
    let csv = ctx.write_csv("mpc.csv", &table)?;
    let p = ctx.path("mpc_episodes.jsonl");
    let mut w = BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?);
    for e in &eps {
        e.mpc.write_jsonl(&mut w)?;
    }
    w.flush()?;
    ctx.say(format!("{}:\n{}", csv.display(), table.to_csv().trim_end()));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_thread_pool();
    let cfg = load_config(cli.config.as_deref(), cli.seed)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx { cfg, out: cli.out, quiet: cli.quiet };
    match &cli.cmd {
        Cmd::GenData => gen_data(&ctx),
        Cmd::Train { data, resume, until } => train(&ctx, data.as_deref(), resume.as_deref(), *until),
        Cmd::EvalRollout { checkpoint, data, oracle } => eval_rollout(&ctx, checkpoint.as_deref(), data.as_deref(), *oracle),
        Cmd::Ablate { which } => ablate(&ctx, *which),
        Cmd::MpcEval { checkpoint } => mpc_eval_cmd(&ctx, checkpoint),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

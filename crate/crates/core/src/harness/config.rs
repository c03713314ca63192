use std::fmt::Write as _;
use std::str::FromStr;

use crate::env::PolicyProfile;
use crate::error::{Error, Result};
use crate::mpc::PlannerConfig;
use crate::tsttt::{AxisLayout, TttMode};
use crate::world_model::{PredictMode, WorldModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// Training episodes generated by `gen-data`.
    pub episodes: usize,
    pub expert_mix: f64,
    /// Task ids the training data is drawn from.
    pub train_tasks: Vec<usize>,
    pub bias: [f64; 2],
    pub noise_std: f64,
}

impl EnvConfig {
    pub fn imperfect(&self) -> PolicyProfile {
        PolicyProfile::Imperfect {
            bias: self.bias,
            noise_std: self.noise_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Iterations of backbone pretraining; 0 skips the stage.
    pub pretrain_iters: usize,
    pub iters: usize,
    pub batch: usize,
    pub lr_base: f64,
    pub lr_ttt: f64,
    pub lr_adapter: f64,
    pub warmup: usize,
    /// Fraction of episodes held out for validation.
    pub val_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub horizon: usize,
    /// Observed frames before the first predicted one.
    pub start: usize,
    pub episodes: usize,
    /// Training seeds averaged over by the ablations.
    pub seeds: usize,
    /// Episodes written as PNG strips by `eval-rollout`.
    pub strips: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcConfig {
    pub planner: PlannerConfig,
    /// Episodes per task.
    pub episodes: usize,
}

/// Everything a command needs. Text form: one `key = value` per line, `#`
/// comments; unknown or repeated keys are rejected and omitted keys keep
/// their defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: WorldModelConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub mpc: MpcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: WorldModelConfig::default(),
            env: EnvConfig {
                episodes: 2000,
                expert_mix: 0.5,
                train_tasks: vec![1, 2, 3],
                bias: [0.3, 0.0],
                noise_std: 0.2,
            },
            train: TrainConfig {
                pretrain_iters: 1000,
                iters: 1000,
                batch: 16,
                lr_base: 1e-3,
                lr_ttt: 1e-3,
                lr_adapter: 1e-4,
                warmup: 100,
                val_fraction: 0.1,
            },
            eval: EvalConfig {
                horizon: 16,
                start: 4,
                episodes: 40,
                seeds: 3,
                strips: 0,
            },
            mpc: MpcConfig {
                planner: PlannerConfig::default(),
                episodes: 40,
            },
        }
    }
}

trait Value: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                <$t>::from_str(s).map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, u64, f64, bool);

impl Value for AxisLayout {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl Value for TttMode {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adaptive" => Ok(TttMode::Adaptive),
            "frozen" => Ok(TttMode::Frozen),
            _ => Err("expected adaptive or frozen".into()),
        }
    }
    fn render(&self) -> String {
        match self {
            TttMode::Adaptive => "adaptive",
            TttMode::Frozen => "frozen",
        }
        .into()
    }
}

impl Value for PredictMode {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "deterministic" => Ok(PredictMode::Deterministic),
            "noise" => Ok(PredictMode::NoiseConditioned),
            _ => Err("expected deterministic or noise".into()),
        }
    }
    fn render(&self) -> String {
        match self {
            PredictMode::Deterministic => "deterministic",
            PredictMode::NoiseConditioned => "noise",
        }
        .into()
    }
}

impl Value for Vec<usize> {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Applies `$body` to `(key, field)` for every configurable field.
macro_rules! for_each_key {
    ($c:expr, $key:ident, $field:ident, $body:block) => {{
        macro_rules! visit {
            ($k:literal, $f:expr) => {{
                let $key: &str = $k;
                let $field = &mut $f;
                $body
            }};
        }
        visit!("env.bias_x", $c.env.bias[0]);
        visit!("env.bias_y", $c.env.bias[1]);
        visit!("env.episodes", $c.env.episodes);
        visit!("env.expert_mix", $c.env.expert_mix);
        visit!("env.noise_std", $c.env.noise_std);
        visit!("env.train_tasks", $c.env.train_tasks);
        visit!("eval.episodes", $c.eval.episodes);
        visit!("eval.horizon", $c.eval.horizon);
        visit!("eval.seeds", $c.eval.seeds);
        visit!("eval.start", $c.eval.start);
        visit!("eval.strips", $c.eval.strips);
        visit!("memory.capacity", $c.model.memory.capacity);
        visit!("memory.d_attn", $c.model.memory.d_attn);
        visit!("memory.d_mem", $c.model.memory.d_mem);
        visit!("memory.heads", $c.model.memory.heads);
        visit!("memory.patch", $c.model.memory.patch);
        visit!("model.action_hidden", $c.model.action_hidden);
        visit!("model.adapter_stride", $c.model.adapter_stride);
        visit!("model.blocks", $c.model.blocks);
        visit!("model.context", $c.model.context);
        visit!("model.d_model", $c.model.d_model);
        visit!("model.heads", $c.model.heads);
        visit!("model.mlp_hidden", $c.model.mlp_hidden);
        visit!("model.mode", $c.model.mode);
        visit!("model.noise_std", $c.model.noise_std);
        visit!("model.patch", $c.model.patch);
        visit!("model.use_memory", $c.model.use_memory);
        visit!("model.use_ttt", $c.model.use_ttt);
        visit!("mpc.discount", $c.mpc.planner.discount);
        visit!("mpc.episodes", $c.mpc.episodes);
        visit!("mpc.horizon", $c.mpc.planner.horizon);
        visit!("mpc.k", $c.mpc.planner.k);
        visit!("mpc.m", $c.mpc.planner.m);
        visit!("mpc.parallel", $c.mpc.planner.parallel);
        visit!("mpc.sigma", $c.mpc.planner.sigma);
        visit!("mpc.stride", $c.mpc.planner.replan_stride);
        visit!("run.seed", $c.seed);
        visit!("train.batch", $c.train.batch);
        visit!("train.iters", $c.train.iters);
        visit!("train.lr_adapter", $c.train.lr_adapter);
        visit!("train.lr_base", $c.train.lr_base);
        visit!("train.lr_ttt", $c.train.lr_ttt);
        visit!("train.pretrain_iters", $c.train.pretrain_iters);
        visit!("train.val_fraction", $c.train.val_fraction);
        visit!("train.warmup", $c.train.warmup);
        visit!("ttt.chunk", $c.model.ttt.chunk);
        visit!("ttt.detach_inner", $c.model.ttt.detach_inner);
        visit!("ttt.eta_scale", $c.model.ttt.eta_scale);
        visit!("ttt.layout", $c.model.ttt.layout);
        visit!("ttt.mode", $c.model.ttt_mode);
        visit!("ttt.persist", $c.model.persist_ttt);
        visit!("ttt.rank", $c.model.ttt.rank);
    }};
}

impl RunConfig {
    /// Every accepted key, sorted.
    pub fn keys() -> Vec<&'static str> {
        let mut c = RunConfig::default();
        let mut keys = Vec::new();
        for_each_key!(c, key, _f, { keys.push(key) });
        keys
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
            if !seen.insert(k.trim().to_string()) {
                return Err(Error::config(format!("line {}: key {} repeated", n + 1, k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut found = None;
        for_each_key!(self, k, field, {
            if k == key {
                found = Some(set_value(field, value).map_err(|e| Error::config(format!("{key}: {e}"))));
            }
        });
        found.unwrap_or_else(|| Err(Error::config(format!("unknown key {key}"))))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let mut c = self.clone();
        let mut out = None;
        for_each_key!(c, k, field, {
            if k == key {
                out = Some(field.render());
            }
        });
        out
    }

    /// Canonical text: every key, sorted, one per line.
    pub fn to_text(&self) -> String {
        let mut c = self.clone();
        let mut out = String::new();
        for_each_key!(c, key, field, {
            let _ = writeln!(out, "{key} = {}", field.render());
        });
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mpc.planner.validate()?;
        let e = &self.env;
        if !(0.0..=1.0).contains(&e.expert_mix) || !(e.noise_std >= 0.0) {
            return Err(Error::config("env.expert_mix must lie in [0, 1] and env.noise_std be ≥ 0"));
        }
        if e.train_tasks.is_empty() || e.train_tasks.iter().any(|&t| t == 0 || t > 5) {
            return Err(Error::config("env.train_tasks must list ids in 1..=5"));
        }
        let t = &self.train;
        if t.batch == 0 || !(0.0..1.0).contains(&t.val_fraction) {
            return Err(Error::config("train.batch must be positive and train.val_fraction in [0, 1)"));
        }
        for lr in [t.lr_base, t.lr_ttt, t.lr_adapter] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::config(format!("learning rate {lr} must be finite and ≥ 0")));
            }
        }
        if self.eval.horizon == 0 || self.eval.seeds == 0 {
            return Err(Error::config("eval.horizon and eval.seeds must be positive"));
        }
        Ok(())
    }
}

fn set_value<T: Value>(field: &mut T, text: &str) -> std::result::Result<(), String> {
    *field = T::parse(text)?;
    Ok(())
}

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::candidates::{propose_candidates, CandidateSet, PlannerConfig};
use super::reward::reward_progress_discounted;
use crate::env::{env_step, render, EnvState, PolicyProfile, TaskSpec, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::numeric::{RngStream, Scalar};
use crate::world_model::{frame_from_rgb8, rollout, Dynamics, Observation};

/// Tag deriving the planner's stream from an episode stream.
pub const PLANNER_STREAM_TAG: u64 = 0x504c_414e;

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub best: usize,
    /// Per-candidate reward; failed rollouts hold `-inf`.
    pub rewards: Vec<f64>,
    pub failed: Vec<usize>,
}

/// Rolls every candidate out from `obs` (each with its own session, memory
/// clone and the stream `streams.derive(i)`) and picks the highest reward,
/// ties going to the lowest index. Rollouts that hit a numeric error or give
/// a non-finite reward score `-inf`; if all of them do, planning fails.
pub fn evaluate_and_select<S: Scalar, D: Dynamics<S>>(
    model: &D,
    obs: &Observation<S>,
    cands: &mut CandidateSet,
    goal: [f64; 2],
    cfg: &PlannerConfig,
    streams: &RngStream,
) -> Result<Selection> {
    if cands.is_empty() {
        return Err(Error::contract("no candidates to evaluate"));
    }
    if obs.history.len() < model.context_len() {
        return Err(Error::contract(format!(
            "observation holds {} frames, predictor needs {}",
            obs.history.len(),
            model.context_len()
        )));
    }
    let eval = |i: usize| -> Result<f64> {
        let traj = rollout(model, obs, &cands.candidates[i].actions, streams.derive(i as u64));
        match traj.and_then(|t| reward_progress_discounted(&t.frames, goal, cfg.discount)) {
            Ok(r) if r.is_finite() => Ok(r),
            Ok(_) | Err(Error::Numeric(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    };
    let n = cands.len();
    let rewards: Vec<f64> = if cfg.parallel {
        (0..n).into_par_iter().map(eval).collect::<Result<_>>()?
    } else {
        (0..n).map(eval).collect::<Result<_>>()?
    };
    let failed: Vec<usize> = (0..n).filter(|&i| rewards[i] == f64::NEG_INFINITY).collect();
    if failed.len() == n {
        return Err(Error::Planner(format!("all {n} candidate rollouts failed")));
    }
    let mut best = 0;
    for i in 1..n {
        if rewards[i] > rewards[best] {
            best = i;
        }
    }
    for (c, r) in cands.candidates.iter_mut().zip(&rewards) {
        c.reward = Some(*r);
    }
    Ok(Selection { best, rewards, failed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplanRecord {
    pub step: usize,
    pub chosen: usize,
    /// Rewards of all candidates; failed ones serialize as `null`.
    pub rewards: Vec<f64>,
    pub executed: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub task_id: usize,
    pub success: bool,
    pub steps: usize,
    pub replans: Vec<ReplanRecord>,
    /// States from spawn to termination.
    pub states: Vec<EnvState>,
    pub actions: Vec<[f64; 2]>,
}

impl EpisodeResult {
    pub fn write_jsonl(&self, w: &mut impl Write) -> Result<()> {
        for r in &self.replans {
            let line = serde_json::to_string(r).map_err(|e| Error::Io(e.into()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

fn observe<S: Scalar>(s: &EnvState) -> Result<crate::numeric::Tensor<S>> {
    frame_from_rgb8(&render(s), FRAME_SIZE, FRAME_SIZE)
}

/// Receding-horizon control of one episode. `rng` is the episode stream:
/// it spawns the task and feeds the policy draw that candidate 0 starts
/// with, exactly as a bare policy run would use it.
pub fn control_loop<S: Scalar, D: Dynamics<S>>(
    task: &TaskSpec,
    policy: PolicyProfile,
    model: &D,
    cfg: &PlannerConfig,
    rng: &mut RngStream,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let mut planner_rng = rng.derive(PLANNER_STREAM_TAG);
    let mut s = task.spawn(rng);
    let ctx = model.context_len().max(1);
    let mut bank = model.memory();
    let mut history: VecDeque<_> = VecDeque::with_capacity(ctx + 1);
    history.push_back(observe::<S>(&s)?);
    let mut states = vec![s];
    let mut actions = Vec::new();
    let mut replans = Vec::new();
    let mut replan = 0u64;

    while !task.is_success(&s) && s.steps < task.max_steps {
        let mut obs = Observation {
            history: history.iter().cloned().collect(),
            bank: bank.clone(),
            state: s,
        };
        // pad a short history by repeating the first frame
        while obs.history.len() < ctx {
            obs.history.insert(0, obs.history[0].clone());
        }
        let mut cands = propose_candidates(policy, &s, cfg, rng, &mut planner_rng)?;
        let sel = evaluate_and_select(model, &obs, &mut cands, s.goal, cfg, &planner_rng.derive(replan))?;
        replan += 1;
        let mut executed = Vec::new();
        for &a in cands.candidates[sel.best].actions.iter().take(cfg.replan_stride) {
            if task.is_success(&s) || s.steps >= task.max_steps {
                break;
            }
            // executed at the precision episodes are recorded with
            let a = [a[0] as f32 as f64, a[1] as f32 as f64];
            s = env_step(&s, a)?;
            executed.push(a);
            actions.push(a);
            states.push(s);
            history.push_back(observe::<S>(&s)?);
            if history.len() > ctx {
                let old = history.pop_front().expect("history is non-empty");
                if let Some(b) = bank.as_mut() {
                    b.push_frame(old)?;
                }
            }
        }
        replans.push(ReplanRecord {
            step: states.len() - 1 - executed.len(),
            chosen: sel.best,
            rewards: sel.rewards,
            executed,
        });
    }
    Ok(EpisodeResult {
        task_id: task.id,
        success: task.is_success(&s),
        steps: s.steps,
        replans,
        states,
        actions,
    })
}


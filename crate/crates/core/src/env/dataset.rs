use std::io::{Read, Write};

use rayon::prelude::*;

use super::policy::{scripted_policy, PolicyProfile};
use super::render::{render, FRAME_BYTES};
use super::sim::{env_step, EnvState, TaskSpec};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

pub const DATASET_MAGIC: &[u8; 4] = b"APEP";
pub const DATASET_VERSION: u32 = 1;

/// Stream namespace of per-episode dataset generators.
const EPISODE_STREAM_BASE: u64 = 0xDA7A_0000_0000;

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 32×32 RGB, row-major HWC.
    pub frame: Vec<u8>,
    /// Action taken from this frame; zero on the terminal step.
    pub action: [f32; 2],
    pub state: [f32; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub task_id: usize,
    pub expert: bool,
    pub success: bool,
    pub steps: Vec<StepRecord>,
}

/// Runs one episode until success or the task's step limit. The final record
/// holds the terminal frame with a zero action.
pub fn run_episode(task: &TaskSpec, profile: PolicyProfile, rng: &mut RngStream) -> Result<EpisodeRecord> {
    let mut s = task.spawn(rng);
    let mut steps = Vec::with_capacity(task.max_steps + 1);
    while !task.is_success(&s) && s.steps < task.max_steps {
        let a = scripted_policy(&s, profile, rng);
        steps.push(StepRecord {
            frame: render(&s),
            action: [a[0] as f32, a[1] as f32],
            state: s.snapshot(),
        });
        // the recorded (f32) action is what is executed
        s = env_step(&s, [a[0] as f32 as f64, a[1] as f32 as f64])?;
    }
    steps.push(StepRecord {
        frame: render(&s),
        action: [0.0, 0.0],
        state: s.snapshot(),
    });
    Ok(EpisodeRecord {
        task_id: task.id,
        expert: matches!(profile, PolicyProfile::Expert),
        success: task.is_success(&s),
        steps,
    })
}

impl EpisodeRecord {
    pub fn final_state(&self) -> EnvState {
        let last = self.steps.last().expect("episodes hold at least one step");
        EnvState::from_snapshot(last.state, self.steps.len() - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub episodes: usize,
    pub expert_episodes: usize,
    pub expert_success_rate: f64,
    pub imperfect_success_rate: f64,
    pub mean_length: f64,
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// `true` for episodes rolled out by the expert: exactly `floor(n·mix)` of the
/// first `n` episodes, spread evenly.
pub fn is_expert_episode(i: usize, mix: f64) -> bool {
    ((i + 1) as f64 * mix).floor() > (i as f64 * mix).floor()
}

/// Rolls out `n_episodes` (cycling through `tasks`) and writes them to `sink`.
pub fn gen_dataset(
    n_episodes: usize,
    mix: f64,
    master_seed: u64,
    tasks: &[TaskSpec],
    imperfect: PolicyProfile,
    sink: &mut impl Write,
) -> Result<(Vec<EpisodeRecord>, DatasetSummary)> {
    if n_episodes == 0 {
        return Err(Error::config("dataset needs at least one episode"));
    }
    if tasks.is_empty() || !(0.0..=1.0).contains(&mix) {
        return Err(Error::config("dataset needs tasks and an expert mix in [0, 1]"));
    }
    for t in tasks {
        t.validate()?;
    }
    let episodes = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(master_seed, EPISODE_STREAM_BASE + i as u64);
            let profile = if is_expert_episode(i, mix) {
                PolicyProfile::Expert
            } else {
                imperfect
            };
            run_episode(&tasks[i % tasks.len()], profile, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&episodes, sink)?;
    let experts = episodes.iter().filter(|e| e.expert).count();
    let ok = |expert: bool| episodes.iter().filter(|e| e.expert == expert && e.success).count();
    let summary = DatasetSummary {
        episodes: episodes.len(),
        expert_episodes: experts,
        expert_success_rate: rate(ok(true), experts),
        imperfect_success_rate: rate(ok(false), episodes.len() - experts),
        mean_length: episodes.iter().map(|e| e.steps.len() as f64).sum::<f64>() / episodes.len() as f64,
    };
    Ok((episodes, summary))
}

/// Byte layout (little-endian): `"APEP"`, u32 version, u32 episode count; per
/// episode u32 step count and one outcome byte (bit 0 success, bit 1 expert
/// profile, bits 2–7 task id); per step 3072 frame bytes, 2 f32 action,
/// 6 f32 state.
pub fn write_dataset(episodes: &[EpisodeRecord], sink: &mut impl Write) -> Result<()> {
    sink.write_all(DATASET_MAGIC)?;
    sink.write_all(&DATASET_VERSION.to_le_bytes())?;
    sink.write_all(&(episodes.len() as u32).to_le_bytes())?;
    for e in episodes {
        sink.write_all(&(e.steps.len() as u32).to_le_bytes())?;
        if e.task_id > 63 {
            return Err(Error::config(format!("task id {} does not fit the outcome byte", e.task_id)));
        }
        sink.write_all(&[e.success as u8 | (e.expert as u8) << 1 | (e.task_id as u8) << 2])?;
        for s in &e.steps {
            sink.write_all(&s.frame)?;
            for v in s.action.iter().chain(&s.state) {
                sink.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::format("episode dataset", e.to_string()))?;
    Ok(b)
}

pub fn read_dataset(r: &mut impl Read) -> Result<Vec<EpisodeRecord>> {
    if &read_exact::<4>(r)? != DATASET_MAGIC {
        return Err(Error::format("episode dataset", "bad magic"));
    }
    let version = u32::from_le_bytes(read_exact(r)?);
    if version != DATASET_VERSION {
        return Err(Error::format("episode dataset", format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(read_exact(r)?) as usize;
    let mut episodes = Vec::with_capacity(n);
    for _ in 0..n {
        let len = u32::from_le_bytes(read_exact(r)?) as usize;
        if len == 0 {
            return Err(Error::format("episode dataset", "empty episode"));
        }
        let [flags] = read_exact::<1>(r)?;
        let mut steps = Vec::with_capacity(len);
        for _ in 0..len {
            let mut frame = vec![0u8; FRAME_BYTES];
            r.read_exact(&mut frame)
                .map_err(|e| Error::format("episode dataset", e.to_string()))?;
            let mut vals = [0f32; 8];
            for v in vals.iter_mut() {
                *v = f32::from_le_bytes(read_exact(r)?);
            }
            steps.push(StepRecord {
                frame,
                action: [vals[0], vals[1]],
                state: [vals[2], vals[3], vals[4], vals[5], vals[6], vals[7]],
            });
        }
        episodes.push(EpisodeRecord {
            task_id: (flags >> 2) as usize,
            expert: flags & 2 != 0,
            success: flags & 1 != 0,
            steps,
        });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format("episode dataset", "trailing bytes"));
    }
    Ok(episodes)
}

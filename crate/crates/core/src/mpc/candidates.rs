use crate::env::{center_bounds, scripted_policy, EnvState, PolicyProfile, ACTION_SCALE, AGENT_EXTENT, BLOCK_EXTENT, CONTACT};
use crate::error::{Error, Result};
use crate::numeric::RngStream;

pub type ActionSequence = Vec<[f64; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Policy-sampled candidates.
    pub k: usize,
    /// Gaussian-perturbed candidates.
    pub m: usize,
    pub sigma: f64,
    /// Actions executed per plan.
    pub replan_stride: usize,
    pub discount: f64,
    /// Evaluate candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 8,
            k: 8,
            m: 8,
            sigma: 0.05,
            replan_stride: 1,
            discount: 1.0,
            parallel: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k + self.m == 0 {
            return Err(Error::config("planner needs at least one candidate"));
        }
        if self.k == 0 && self.m > 0 {
            return Err(Error::config("perturbed candidates need a policy candidate to perturb"));
        }
        if self.replan_stride == 0 || self.replan_stride > self.horizon {
            return Err(Error::config(format!(
                "replan stride {} must lie in 1..={}",
                self.replan_stride, self.horizon
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config(format!("perturbation std {} must be finite and ≥ 0", self.sigma)));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config(format!("discount {} must lie in (0, 1]", self.discount)));
        }
        Ok(())
    }

    pub fn candidates(&self) -> usize {
        self.k + self.m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Policy,
    /// Gaussian perturbation of the policy candidate with this index.
    Perturbed { source: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub actions: ActionSequence,
    pub provenance: Provenance,
    /// `None` until evaluated; `-inf` marks a failed rollout.
    pub reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// The policy's own guess of where things go: the agent moves freely inside
/// the walls and drags the block along whenever it ends up touching it. No
/// simulator code is involved.
pub fn heuristic_step(s: &EnvState, a: [f64; 2]) -> EnvState {
    let (alo, ahi) = center_bounds(AGENT_EXTENT);
    let (blo, bhi) = center_bounds(BLOCK_EXTENT);
    let mut n = *s;
    let mut moved = [0.0; 2];
    for i in 0..2 {
        let to = (s.agent[i] + ACTION_SCALE * a[i]).clamp(alo, ahi);
        moved[i] = to - s.agent[i];
        n.agent[i] = to;
    }
    let touching = (0..2).all(|i| (n.agent[i] - s.block[i]).abs() < CONTACT);
    if touching {
        let axis = if moved[0].abs() >= moved[1].abs() { 0 } else { 1 };
        n.block[axis] = (s.block[axis] + moved[axis]).clamp(blo, bhi);
    }
    n.steps += 1;
    n
}

fn policy_sequence(
    policy: PolicyProfile,
    state: &EnvState,
    first: Option<[f64; 2]>,
    horizon: usize,
    rng: &mut RngStream,
) -> ActionSequence {
    let mut s = *state;
    let mut seq = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let a = match (t, first) {
            (0, Some(a)) => a,
            _ => scripted_policy(&s, policy, rng),
        };
        seq.push(a);
        s = heuristic_step(&s, a);
    }
    seq
}

/// `k` policy rollouts against [`heuristic_step`] followed by `m` clipped
/// Gaussian perturbations of uniformly chosen policy candidates.
///
/// The first action of candidate 0 is drawn from `policy_rng` (the stream the
/// bare policy would use); every other draw comes from `rng`. With `k = 1`,
/// `m = 0` and stride 1 the executed actions therefore coincide with running
/// the policy alone.
pub fn propose_candidates(
    policy: PolicyProfile,
    obs_state: &EnvState,
    cfg: &PlannerConfig,
    policy_rng: &mut RngStream,
    rng: &mut RngStream,
) -> Result<CandidateSet> {
    cfg.validate()?;
    let mut candidates = Vec::with_capacity(cfg.candidates());
    for i in 0..cfg.k {
        let first = (i == 0).then(|| scripted_policy(obs_state, policy, policy_rng));
        candidates.push(Candidate {
            actions: policy_sequence(policy, obs_state, first, cfg.horizon, rng),
            provenance: Provenance::Policy,
            reward: None,
        });
    }
    for _ in 0..cfg.m {
        let source = rng.below(cfg.k);
        let actions = candidates[source]
            .actions
            .iter()
            .map(|a| {
                let g = [rng.gaussian(), rng.gaussian()];
                [
                    (a[0] + cfg.sigma * g[0]).clamp(-1.0, 1.0),
                    (a[1] + cfg.sigma * g[1]).clamp(-1.0, 1.0),
                ]
            })
            .collect();
        candidates.push(Candidate {
            actions,
            provenance: Provenance::Perturbed { source },
            reward: None,
        });
    }
    Ok(CandidateSet { candidates })
}

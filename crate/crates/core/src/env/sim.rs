use crate::error::{Error, Result};
use crate::numeric::RngStream;

pub const FRAME_SIZE: usize = 32;
pub const AGENT_EXTENT: usize = 2;
pub const BLOCK_EXTENT: usize = 4;
pub const GOAL_EXTENT: usize = 5;

/// Agent displacement per unit action, in pixels.
pub const ACTION_SCALE: f64 = 2.0;

/// Positions are object centers in pixel units (`x` = column, `y` = row).
/// All coordinates are kept at 32-bit precision so state snapshots are exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub agent: [f64; 2],
    pub block: [f64; 2],
    pub goal: [f64; 2],
    pub steps: usize,
}

/// Valid center range of an object with the given pixel extent.
pub fn center_bounds(extent: usize) -> (f64, f64) {
    let half = (extent as f64 - 1.0) / 2.0;
    (half, (FRAME_SIZE - 1) as f64 - half)
}

fn snap(v: f64) -> f64 {
    v as f32 as f64
}

fn clamp_center(v: f64, extent: usize) -> f64 {
    let (lo, hi) = center_bounds(extent);
    snap(v.clamp(lo, hi))
}

impl EnvState {
    pub fn new(agent: [f64; 2], block: [f64; 2], goal: [f64; 2]) -> Self {
        EnvState {
            agent: agent.map(|v| clamp_center(v, AGENT_EXTENT)),
            block: block.map(|v| clamp_center(v, BLOCK_EXTENT)),
            goal: goal.map(|v| clamp_center(v, GOAL_EXTENT)),
            steps: 0,
        }
    }

    /// `[agent.x, agent.y, block.x, block.y, goal.x, goal.y]`.
    pub fn snapshot(&self) -> [f32; 6] {
        [
            self.agent[0] as f32,
            self.agent[1] as f32,
            self.block[0] as f32,
            self.block[1] as f32,
            self.goal[0] as f32,
            self.goal[1] as f32,
        ]
    }

    pub fn from_snapshot(s: [f32; 6], steps: usize) -> Self {
        EnvState {
            agent: [s[0] as f64, s[1] as f64],
            block: [s[2] as f64, s[3] as f64],
            goal: [s[4] as f64, s[5] as f64],
            steps,
        }
    }

    pub fn block_goal_distance(&self) -> f64 {
        dist(self.block, self.goal)
    }
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Center distance at which agent and block touch along an axis.
pub const CONTACT: f64 = (AGENT_EXTENT + BLOCK_EXTENT) as f64 / 2.0;

pub fn check_action(a: [f64; 2]) -> Result<()> {
    if a.iter().all(|v| v.abs() <= 1.0) {
        Ok(())
    } else {
        Err(Error::contract(format!("action {a:?} outside [-1, 1]²")))
    }
}

/// Ground-truth dynamics. The agent moves by `2·a`; if its box then overlaps
/// the block, the block is pushed out along the axis of least penetration by
/// the penetration depth. Whatever the wall stops the block from absorbing is
/// taken back from the agent, so the two never end a step overlapping.
pub fn env_step(s: &EnvState, a: [f64; 2]) -> Result<EnvState> {
    check_action(a)?;
    let mut next = *s;
    next.steps += 1;
    for k in 0..2 {
        next.agent[k] = clamp_center(s.agent[k] + ACTION_SCALE * a[k], AGENT_EXTENT);
    }
    let dx = next.block[0] - next.agent[0];
    let dy = next.block[1] - next.agent[1];
    let (px, py) = (CONTACT - dx.abs(), CONTACT - dy.abs());
    if px <= 0.0 || py <= 0.0 {
        return Ok(next);
    }
    let (axis, depth, rel) = if px <= py { (0, px, dx) } else { (1, py, dy) };
    // a head-on overlap pushes along the action
    let dir = if rel > 0.0 || (rel == 0.0 && a[axis] >= 0.0) { 1.0 } else { -1.0 };
    let wanted = next.block[axis] + dir * depth;
    let moved = clamp_center(wanted, BLOCK_EXTENT);
    next.block[axis] = moved;
    let shortfall = (wanted - moved).abs();
    if shortfall > 0.0 {
        next.agent[axis] = clamp_center(next.agent[axis] - dir * shortfall, AGENT_EXTENT);
    }
    Ok(next)
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]` of allowed centers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Region {
    pub const fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Region { x: (x0, x1), y: (y0, y1) }
    }

    pub fn sample(&self, rng: &mut RngStream) -> [f64; 2] {
        let x = self.x.0 + (self.x.1 - self.x.0) * rng.uniform();
        let y = self.y.0 + (self.y.1 - self.y.0) * rng.uniform();
        [x, y]
    }

    pub fn disjoint(&self, other: &Region) -> bool {
        self.x.1 < other.x.0 || other.x.1 < self.x.0 || self.y.1 < other.y.0 || other.y.1 < self.y.0
    }

    fn within(&self, lo: f64, hi: f64) -> bool {
        self.x.0 >= lo && self.x.1 <= hi && self.y.0 >= lo && self.y.1 <= hi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: usize,
    pub agent_region: Region,
    pub block_region: Region,
    pub goal_region: Region,
    pub max_steps: usize,
    pub success_radius: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let (alo, ahi) = center_bounds(AGENT_EXTENT);
        let (blo, bhi) = center_bounds(BLOCK_EXTENT);
        let (glo, ghi) = center_bounds(GOAL_EXTENT);
        if !self.agent_region.within(alo, ahi)
            || !self.block_region.within(blo, bhi)
            || !self.goal_region.within(glo, ghi)
        {
            return Err(Error::config(format!("task {} spawn region out of bounds", self.id)));
        }
        if !(self.success_radius > 0.0) || self.max_steps == 0 {
            return Err(Error::config(format!("task {} needs positive radius and length", self.id)));
        }
        Ok(())
    }

    pub fn spawn(&self, rng: &mut RngStream) -> EnvState {
        let agent = self.agent_region.sample(rng);
        let block = self.block_region.sample(rng);
        let goal = self.goal_region.sample(rng);
        EnvState::new(agent, block, goal)
    }

    pub fn is_success(&self, s: &EnvState) -> bool {
        s.block_goal_distance() <= self.success_radius
    }
}

/// The five default tasks. Block spawn regions are pairwise disjoint, as are
/// goal regions; every task needs a push along both axes or a long push along one.
pub fn default_tasks() -> Vec<TaskSpec> {
    let t = |id, agent: Region, block: Region, goal: Region| TaskSpec {
        id,
        agent_region: agent,
        block_region: block,
        goal_region: goal,
        max_steps: 26,
        success_radius: 1.5,
    };
    vec![
        t(1, Region::new(2.0, 5.0, 10.0, 14.0), Region::new(8.0, 11.0, 9.0, 13.0), Region::new(20.0, 24.0, 9.0, 13.0)),
        t(2, Region::new(10.0, 14.0, 26.0, 29.0), Region::new(9.0, 13.0, 19.0, 22.0), Region::new(9.0, 13.0, 6.0, 9.5)),
        t(3, Region::new(27.0, 29.0, 18.0, 22.0), Region::new(21.0, 24.0, 17.0, 21.0), Region::new(7.0, 11.0, 23.0, 26.0)),
        t(4, Region::new(14.0, 18.0, 1.0, 3.5), Region::new(14.0, 18.0, 7.0, 8.5), Region::new(23.0, 27.0, 17.0, 21.0)),
        t(5, Region::new(1.0, 2.5, 18.0, 21.0), Region::new(5.5, 7.5, 24.0, 27.0), Region::new(16.0, 20.0, 26.0, 28.0)),
    ]
}

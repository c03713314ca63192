use super::sim::{center_bounds, EnvState, ACTION_SCALE, AGENT_EXTENT, CONTACT};
use crate::numeric::RngStream;

/// Lateral clearance kept when walking around the block.
const CLEARANCE: f64 = CONTACT + 0.75;
/// Block-goal offset below which an axis counts as done.
const AXIS_TOL: f64 = 0.4;
/// Alignment slack for the pushing contact.
const ALIGN_TOL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyProfile {
    Expert,
    /// Expert action plus a constant bias and isotropic Gaussian noise.
    Imperfect { bias: [f64; 2], noise_std: f64 },
}

fn clip(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Proportional step toward `target`.
fn toward(agent: [f64; 2], target: [f64; 2]) -> [f64; 2] {
    [
        clip((target[0] - agent[0]) / ACTION_SCALE),
        clip((target[1] - agent[1]) / ACTION_SCALE),
    ]
}

/// Scripted pusher: fix the x offset first, then y. For the active axis it
/// walks to the contact point behind the block (detouring sideways when the
/// block is in the way) and then pushes by exactly the remaining offset.
pub fn expert_action(s: &EnvState) -> [f64; 2] {
    let d = [s.goal[0] - s.block[0], s.goal[1] - s.block[1]];
    let axis = if d[0].abs() > AXIS_TOL {
        0
    } else if d[1].abs() > AXIS_TOL {
        1
    } else {
        return [0.0, 0.0];
    };
    let other = 1 - axis;
    let dir = d[axis].signum();
    let (a, b) = (s.agent, s.block);
    // signed offset of the agent along the push direction, relative to the block
    let along = (a[axis] - b[axis]) * dir;
    let lateral = a[other] - b[other];

    let mut contact = b;
    contact[axis] = b[axis] - dir * CONTACT;

    if along <= -CONTACT + 0.25 && lateral.abs() <= ALIGN_TOL {
        // In the slot behind the block: push, carrying the remaining offset.
        let mut target = contact;
        target[axis] += d[axis];
        return toward(a, target);
    }
    if along < -CONTACT + 0.25 {
        // Behind the block but misaligned: slide over (nothing in the way).
        return toward(a, contact);
    }
    if lateral.abs() < CLEARANCE {
        // Beside or in front of the block: step sideways to clear it first.
        let mut side = if lateral >= 0.0 { 1.0 } else { -1.0 };
        let (lo, hi) = center_bounds(AGENT_EXTENT);
        let wanted = b[other] + side * (CLEARANCE + 0.25);
        if wanted < lo || wanted > hi {
            side = -side;
        }
        let mut target = a;
        target[other] = b[other] + side * (CLEARANCE + 0.25);
        return toward(a, target);
    }
    // Clear of the block laterally: walk back past it, then drop into the slot.
    let mut target = a;
    target[axis] = contact[axis];
    toward(a, target)
}

/// Expert action perturbed per `profile`. Two Gaussians are always drawn so
/// the stream position does not depend on the profile.
pub fn scripted_policy(s: &EnvState, profile: PolicyProfile, rng: &mut RngStream) -> [f64; 2] {
    let e = expert_action(s);
    let g = [rng.gaussian(), rng.gaussian()];
    match profile {
        PolicyProfile::Expert => e,
        PolicyProfile::Imperfect { bias, noise_std } => [
            clip(e[0] + bias[0] + noise_std * g[0]),
            clip(e[1] + bias[1] + noise_std * g[1]),
        ],
    }
}

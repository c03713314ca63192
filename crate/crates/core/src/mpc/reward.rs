use crate::env::{dist, extract_centroids_tensor};
use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// Per-frame reward when the block cannot be found (the image diagonal, rounded).
pub const MISSING_BLOCK_PENALTY: f64 = -64.0;

pub fn frame_progress<S: Scalar>(frame: &Tensor<S>, goal: [f64; 2]) -> f64 {
    match extract_centroids_tensor(frame).block {
        Some(b) => -dist(b, goal),
        None => MISSING_BLOCK_PENALTY,
    }
}

/// Negative block-goal distance averaged over the frames, weighting frame `t`
/// by `discount^t`. Higher is better.
pub fn reward_progress_discounted<S: Scalar>(frames: &[Tensor<S>], goal: [f64; 2], discount: f64) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::contract("progress reward needs at least one frame"));
    }
    let (mut num, mut den, mut w) = (0.0, 0.0, 1.0);
    for f in frames {
        num += w * frame_progress(f, goal);
        den += w;
        w *= discount;
    }
    Ok(num / den)
}

pub fn reward_progress<S: Scalar>(frames: &[Tensor<S>], goal: [f64; 2]) -> Result<f64> {
    reward_progress_discounted(frames, goal, 1.0)
}

use super::sim::{EnvState, AGENT_EXTENT, BLOCK_EXTENT, FRAME_SIZE, GOAL_EXTENT};
use crate::numeric::{Scalar, Tensor};

pub const FRAME_BYTES: usize = FRAME_SIZE * FRAME_SIZE * 3;

/// Channel intensity above which a pixel counts toward an object.
pub const DETECT_THRESHOLD: f64 = 128.0;

const GOAL_CHANNEL: usize = 1;
const BLOCK_CHANNEL: usize = 0;
const AGENT_CHANNEL: usize = 2;

/// First pixel row/column covered by an object centered at `c`.
pub fn box_start(c: f64, extent: usize) -> i64 {
    (c - (extent as f64 - 1.0) / 2.0).round() as i64
}

fn paint(buf: &mut [u8], center: [f64; 2], extent: usize, channel: usize) {
    let x0 = box_start(center[0], extent);
    let y0 = box_start(center[1], extent);
    let n = FRAME_SIZE as i64;
    for y in y0..y0 + extent as i64 {
        for x in x0..x0 + extent as i64 {
            if (0..n).contains(&x) && (0..n).contains(&y) {
                let i = (y as usize * FRAME_SIZE + x as usize) * 3;
                buf[i..i + 3].fill(0);
                buf[i + channel] = 255;
            }
        }
    }
}

/// Black background, green goal, red block, blue agent (drawn in that order).
/// Row-major HWC bytes.
pub fn render(s: &EnvState) -> Vec<u8> {
    let mut buf = vec![0u8; FRAME_BYTES];
    paint(&mut buf, s.goal, GOAL_EXTENT, GOAL_CHANNEL);
    paint(&mut buf, s.block, BLOCK_EXTENT, BLOCK_CHANNEL);
    paint(&mut buf, s.agent, AGENT_EXTENT, AGENT_CHANNEL);
    buf
}

/// Object centers recovered from pixels; `None` where nothing is visible.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Centroids {
    pub agent: Option<[f64; 2]>,
    pub block: Option<[f64; 2]>,
    pub goal: Option<[f64; 2]>,
}

fn centroids_by(get: impl Fn(usize) -> [f64; 3]) -> Centroids {
    let mut acc = [[0.0f64; 3]; 3];
    for y in 0..FRAME_SIZE {
        for x in 0..FRAME_SIZE {
            let px = get(y * FRAME_SIZE + x);
            let mut best = 0;
            for c in 1..3 {
                if px[c] > px[best] {
                    best = c;
                }
            }
            if px[best] > DETECT_THRESHOLD {
                acc[best][0] += x as f64;
                acc[best][1] += y as f64;
                acc[best][2] += 1.0;
            }
        }
    }
    let mean = |a: [f64; 3]| (a[2] > 0.0).then(|| [a[0] / a[2], a[1] / a[2]]);
    Centroids {
        agent: mean(acc[AGENT_CHANNEL]),
        block: mean(acc[BLOCK_CHANNEL]),
        goal: mean(acc[GOAL_CHANNEL]),
    }
}

/// Centroids of an 8-bit frame: mean pixel coordinate of every pixel whose
/// dominant channel exceeds the threshold, per object color.
pub fn extract_centroids(frame: &[u8]) -> Centroids {
    assert_eq!(frame.len(), FRAME_BYTES, "frame must be 32×32 RGB");
    centroids_by(|i| [frame[3 * i] as f64, frame[3 * i + 1] as f64, frame[3 * i + 2] as f64])
}

/// Same rule on a `32×32×3` frame with values in `[0, 1]`.
pub fn extract_centroids_tensor<S: Scalar>(frame: &Tensor<S>) -> Centroids {
    assert_eq!(frame.shape(), [FRAME_SIZE, FRAME_SIZE, 3], "frame must be 32×32×3");
    let d = frame.data();
    centroids_by(|i| {
        [
            d[3 * i].as_f64() * 255.0,
            d[3 * i + 1].as_f64() * 255.0,
            d[3 * i + 2].as_f64() * 255.0,
        ]
    })
}

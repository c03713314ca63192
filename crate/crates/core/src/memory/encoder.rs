use crate::error::{Error, Result};
use crate::numeric::{RngStream, Scalar, Tensor};
use crate::world_model::patchify;

/// Seed of the frozen patch projection. Changing it changes every memory
/// token, so it is fixed rather than configurable.
pub const SURROGATE_ENCODER_SEED: u64 = 0x0ADA_9017_E4C0_DE42;

/// Frozen random-projection patch encoder: patchify, project, then normalize
/// each token to zero mean and unit variance over its dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateEncoder<S: Scalar> {
    pub patch: usize,
    pub frame_shape: [usize; 3],
    projection: Tensor<S>,
    /// Token variance at or below this is treated as constant and mapped to zero.
    pub var_floor: S,
}

impl<S: Scalar> SurrogateEncoder<S> {
    pub fn new(frame_shape: [usize; 3], patch: usize, d_mem: usize) -> Result<Self> {
        let [h, w, c] = frame_shape;
        if patch == 0 || h % patch != 0 || w % patch != 0 || c == 0 || d_mem == 0 {
            return Err(Error::config(format!(
                "memory encoder: patch {patch} / width {d_mem} invalid for frame {frame_shape:?}"
            )));
        }
        let patch_dim = patch * patch * c;
        let mut rng = RngStream::new(SURROGATE_ENCODER_SEED, 0);
        Ok(SurrogateEncoder {
            patch,
            frame_shape,
            projection: rng.gaussian_tensor(&[patch_dim, d_mem], 1.0 / (patch_dim as f64).sqrt()),
            var_floor: S::of(1e-12),
        })
    }

    pub fn projection(&self) -> &Tensor<S> {
        &self.projection
    }

    /// Patches per frame.
    pub fn tokens_per_frame(&self) -> usize {
        let [h, w, _] = self.frame_shape;
        (h / self.patch) * (w / self.patch)
    }

    pub fn d_mem(&self) -> usize {
        self.projection.shape()[1]
    }

    /// `P × D_mem` tokens of one frame, patches in raster order.
    pub fn encode_frame(&self, frame: &Tensor<S>) -> Result<Tensor<S>> {
        if frame.shape() != self.frame_shape {
            return Err(Error::contract(format!(
                "memory frame {:?} does not match {:?}",
                frame.shape(),
                self.frame_shape
            )));
        }
        let p = self.tokens_per_frame();
        let patches = patchify(frame, self.patch)?;
        let patch_dim = patches.shape()[2];
        let mut tokens = patches.reshape(&[p, patch_dim])?.matmul(&self.projection)?;
        let d = S::from_usize(self.d_mem()).unwrap();
        for row in tokens.data_mut().chunks_exact_mut(self.d_mem()) {
            let mean = row.iter().copied().sum::<S>() / d;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / d;
            if var <= self.var_floor {
                row.fill(S::zero());
            } else {
                let inv = S::one() / var.sqrt();
                for x in row.iter_mut() {
                    *x = (*x - mean) * inv;
                }
            }
        }
        Ok(tokens)
    }
}

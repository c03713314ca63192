use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// Splits an `H_px×W_px×C` frame into an `(H_px/p)×(W_px/p)×(p·p·C)` grid of
/// flattened patches. Inside a patch, entries are ordered (row, column, channel).
pub fn patchify<S: Scalar>(frame: &Tensor<S>, patch: usize) -> Result<Tensor<S>> {
    let [h, w, c] = frame_dims(frame.shape())?;
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::contract(format!("patch size {patch} does not tile a {h}×{w} frame")));
    }
    let (gh, gw) = (h / patch, w / patch);
    frame
        .reshape(&[gh, patch, gw, patch * c])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[gh, gw, patch * patch * c])
}

pub fn unpatchify<S: Scalar>(latent: &Tensor<S>, patch: usize, channels: usize) -> Result<Tensor<S>> {
    let [gh, gw, d] = frame_dims(latent.shape())?;
    if patch == 0 || channels == 0 || d != patch * patch * channels {
        return Err(Error::contract(format!(
            "latent of patch dimension {d} cannot hold {patch}×{patch}×{channels} patches"
        )));
    }
    latent
        .reshape(&[gh, gw, patch, patch * channels])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[gh * patch, gw * patch, channels])
}

fn frame_dims(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::contract(format!("expected a rank-3 frame, got {shape:?}"))),
    }
}

/// 8-bit HWC pixels → values in `[0, 1]`.
pub fn frame_from_rgb8<S: Scalar>(pixels: &[u8], height: usize, width: usize) -> Result<Tensor<S>> {
    if pixels.len() != height * width * 3 {
        return Err(Error::contract(format!(
            "{} bytes is not a {height}×{width} RGB frame",
            pixels.len()
        )));
    }
    Tensor::new(
        vec![height, width, 3],
        pixels.iter().map(|&b| S::of(b as f64 / 255.0)).collect(),
    )
}

/// Inverse of [`frame_from_rgb8`], clamping to the displayable range.
pub fn frame_to_rgb8<S: Scalar>(frame: &Tensor<S>) -> Vec<u8> {
    frame
        .data()
        .iter()
        .map(|&v| {
            let x = v.as_f64();
            if x.is_nan() {
                0
            } else {
                (x.clamp(0.0, 1.0) * 255.0).round() as u8
            }
        })
        .collect()
}

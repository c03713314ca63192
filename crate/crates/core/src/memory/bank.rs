use std::collections::VecDeque;
use std::sync::Arc;

use super::encoder::SurrogateEncoder;
use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor};

/// FIFO of the most recent `capacity` frames with their cached encodings.
#[derive(Clone, Debug)]
pub struct MemoryBank<S: Scalar> {
    capacity: usize,
    encoder: Arc<SurrogateEncoder<S>>,
    frames: VecDeque<Tensor<S>>,
    encoded: VecDeque<Tensor<S>>,
}

impl<S: Scalar> MemoryBank<S> {
    pub fn new(capacity: usize, encoder: Arc<SurrogateEncoder<S>>) -> Self {
        MemoryBank {
            capacity,
            encoder,
            frames: VecDeque::with_capacity(capacity + 1),
            encoded: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn encoder(&self) -> &SurrogateEncoder<S> {
        &self.encoder
    }

    /// Retained frames, oldest first.
    pub fn frames(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.frames.iter()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
        self.encoded.clear();
    }

    pub fn push_frame(&mut self, frame: Tensor<S>) -> Result<()> {
        if frame.shape() != self.encoder.frame_shape {
            return Err(Error::contract(format!(
                "memory frame {:?} does not match bank frame shape {:?}",
                frame.shape(),
                self.encoder.frame_shape
            )));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        let tokens = self.encoder.encode_frame(&frame)?;
        self.frames.push_back(frame);
        self.encoded.push_back(tokens);
        while self.frames.len() > self.capacity {
            self.frames.pop_front();
            self.encoded.pop_front();
        }
        Ok(())
    }

    /// Cached `len·P × D_mem` memory tokens, oldest frame first; `None` when empty.
    pub fn tokens(&self) -> Option<Tensor<S>> {
        if self.encoded.is_empty() {
            return None;
        }
        let parts: Vec<&Tensor<S>> = self.encoded.iter().collect();
        Some(Tensor::concat_rows(&parts).expect("cached encodings share a width"))
    }
}

/// Encodes every retained frame from scratch. `None` signals an empty memory,
/// in which case fusion is skipped.
pub fn encode_history<S: Scalar>(bank: &MemoryBank<S>, enc: &SurrogateEncoder<S>) -> Result<Option<Tensor<S>>> {
    if bank.is_empty() {
        return Ok(None);
    }
    let parts = bank.frames().map(|f| enc.encode_frame(f)).collect::<Result<Vec<_>>>()?;
    Ok(Some(Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    fn bank(cap: usize) -> MemoryBank<f64> {
        MemoryBank::new(cap, Arc::new(SurrogateEncoder::new([8, 8, 3], 4, 6).unwrap()))
    }

    fn frame(v: f64) -> Tensor<f64> {
        Tensor::from_fn(&[8, 8, 3], |i| v + (i % 7) as f64 * 0.01)
    }

    #[test]
    fn fifo_keeps_last_frames_in_order() {
        let mut b = bank(4);
        for i in 0..7 {
            b.push_frame(frame(i as f64)).unwrap();
        }
        assert_eq!(b.len(), 4);
        let kept: Vec<f64> = b.frames().map(|f| f.data()[0]).collect();
        assert_eq!(kept, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn push_to_empty_bank() {
        let mut b = bank(4);
        assert!(b.tokens().is_none());
        assert!(encode_history(&b, b.encoder()).unwrap().is_none());
        b.push_frame(frame(0.0)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.tokens().unwrap().shape(), &[4, 6]);
    }

    #[test]
    fn older_frame_tokens_come_first() {
        let mut b = bank(4);
        let mut rng = RngStream::new(1, 1);
        let f0: Tensor<f64> = rng.uniform_tensor(&[8, 8, 3]);
        let f1: Tensor<f64> = rng.uniform_tensor(&[8, 8, 3]);
        b.push_frame(f0.clone()).unwrap();
        b.push_frame(f1).unwrap();
        let toks = b.tokens().unwrap();
        assert_eq!(toks.shape(), &[8, 6]);
        assert_eq!(toks.rows(0, 4).unwrap(), b.encoder().encode_frame(&f0).unwrap());
    }

    #[test]
    fn cache_matches_full_reencode() {
        let mut b = bank(3);
        let mut rng = RngStream::new(2, 2);
        for _ in 0..6 {
            b.push_frame(rng.uniform_tensor(&[8, 8, 3])).unwrap();
            let fresh = encode_history(&b, b.encoder()).unwrap().unwrap();
            assert_eq!(b.tokens().unwrap(), fresh);
        }
    }

    #[test]
    fn wrong_frame_shape_rejected() {
        let mut b = bank(2);
        assert!(matches!(b.push_frame(Tensor::zeros(&[8, 4, 3])), Err(Error::Contract(_))));
    }
}

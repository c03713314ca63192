use crate::error::{Error, Result};
use crate::tsttt::{TttConfig, TttMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PredictMode {
    /// Plain next-frame regression.
    Deterministic,
    /// The last context frame is perturbed by seeded Gaussian noise at a single
    /// level before prediction; the model regresses the clean next frame.
    NoiseConditioned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryConfig {
    /// Frames retained (`L`).
    pub capacity: usize,
    pub patch: usize,
    pub d_mem: usize,
    pub d_attn: usize,
    pub heads: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            capacity: 4,
            patch: 8,
            d_mem: 32,
            d_attn: 16,
            heads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelConfig {
    /// `[H_px, W_px, C]`.
    pub frame: [usize; 3],
    pub patch: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Adapters follow every `adapter_stride`-th block (never the last one).
    pub adapter_stride: usize,
    pub context: usize,
    pub action_dim: usize,
    pub action_hidden: usize,
    /// `false` builds the bare backbone.
    pub adapters: bool,
    pub use_ttt: bool,
    pub use_memory: bool,
    pub ttt: TttConfig,
    pub ttt_mode: TttMode,
    /// Carry fast weights across autoregressive steps of one rollout.
    pub persist_ttt: bool,
    pub memory: MemoryConfig,
    pub mode: PredictMode,
    pub noise_std: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        WorldModelConfig {
            frame: [32, 32, 3],
            patch: 8,
            d_model: 32,
            blocks: 6,
            heads: 2,
            mlp_hidden: 64,
            adapter_stride: 2,
            context: 2,
            action_dim: 2,
            action_hidden: 64,
            adapters: true,
            use_ttt: true,
            use_memory: true,
            ttt: TttConfig::default(),
            ttt_mode: TttMode::Adaptive,
            persist_ttt: false,
            memory: MemoryConfig::default(),
            mode: PredictMode::Deterministic,
            noise_std: 0.05,
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w, c] = self.frame;
        let bad = |m: String| Err(Error::config(m));
        if h == 0 || w == 0 || c == 0 {
            return bad(format!("frame extents must be positive: {:?}", self.frame));
        }
        if self.patch == 0 || h % self.patch != 0 || w % self.patch != 0 {
            return bad(format!("patch {} does not divide {h}×{w}", self.patch));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible into {} heads", self.d_model, self.heads));
        }
        if self.blocks == 0 || self.adapter_stride == 0 || self.adapter_stride > self.blocks {
            return bad(format!(
                "adapter stride {} must be in 1..={} blocks",
                self.adapter_stride, self.blocks
            ));
        }
        if self.context == 0 || self.mlp_hidden == 0 || self.action_dim == 0 || self.action_hidden == 0 {
            return bad("context, hidden and action widths must be positive".into());
        }
        let m = &self.memory;
        if m.patch == 0 || h % m.patch != 0 || w % m.patch != 0 {
            return bad(format!("memory patch {} does not divide {h}×{w}", m.patch));
        }
        if m.d_mem == 0 || m.heads == 0 || m.d_attn == 0 || !m.d_attn.is_multiple_of(m.heads) {
            return bad("memory widths must be positive and divisible by heads".into());
        }
        if self.ttt.rank == 0 || self.ttt.chunk == 0 || !(self.ttt.eta_scale >= 0.0) {
            return bad("ttt rank and chunk must be positive and eta non-negative".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        Ok(())
    }

    /// Patch grid `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.frame[0] / self.patch, self.frame[1] / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.frame[2]
    }

    pub fn tokens_per_frame(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    /// Feature extents `[T, H, W, D]` seen by the adapters.
    pub fn feature_dims(&self) -> [usize; 4] {
        let (gh, gw) = self.grid();
        [self.context, gh, gw, self.d_model]
    }

    /// 1-based indices of blocks followed by an adapter site.
    pub fn adapter_sites(&self) -> Vec<usize> {
        if !self.adapters {
            return Vec::new();
        }
        (1..self.blocks).filter(|i| i % self.adapter_stride == 0).collect()
    }

    /// The same configuration with every adapter removed.
    pub fn base_only(&self) -> Self {
        WorldModelConfig {
            adapters: false,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_blocks_stride_two_places_two_sites() {
        let cfg = WorldModelConfig::default();
        assert_eq!(cfg.adapter_sites(), vec![2, 4]);
        assert_eq!(cfg.base_only().adapter_sites(), Vec::<usize>::new());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = WorldModelConfig::default();
        cfg.patch = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = WorldModelConfig::default();
        cfg.adapter_stride = 7;
        assert!(cfg.validate().is_err());
        assert!(WorldModelConfig::default().validate().is_ok());
    }
}

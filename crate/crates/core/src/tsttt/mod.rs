//! Temporal-spatial test-time-training layer.
//!
//! A video feature `T×H×W×D` is rearranged into one token matrix per branch
//! (see [`AxisLayout`]). Each branch keeps low-rank fast weights `w` that take
//! gradient steps on a self-supervised reconstruction loss while the tokens
//! stream through, and emits a projection of its fast-weight output. Branch
//! outputs are folded back to `T×H×W×D` and added residually.

mod branch;
mod layer;
mod layout;

pub use branch::{
    branch_forward, inner_grad, inner_loss, inner_losses, inner_step, BranchOutput, BranchVars,
    InnerOptions, TTTBranchParams, TTTState, TttMode,
};
pub use layer::{layer_forward, LayerOutput, TsTttLayer, TttConfig};
pub use layout::{tokens_for_layout, AxisLayout, BranchAxes};

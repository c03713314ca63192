use super::branch::{branch_forward, BranchVars, InnerOptions, TTTBranchParams, TttMode};
use super::layout::{feature_dims, AxisLayout};
use crate::error::{Error, Result};
use crate::numeric::{RngStream, Scalar, Tape, Tensor, Var};

/// Hyperparameters shared by every branch of a TS-TTT layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TttConfig {
    pub layout: AxisLayout,
    pub rank: usize,
    pub chunk: usize,
    /// Inner learning rate is `eta_scale / d_tok` per branch.
    pub eta_scale: f64,
    pub detach_inner: bool,
}

impl Default for TttConfig {
    fn default() -> Self {
        TttConfig {
            layout: AxisLayout::TsPlusC,
            rank: 8,
            chunk: 16,
            eta_scale: 0.1,
            detach_inner: false,
        }
    }
}

/// Owned parameters of a TS-TTT layer for a fixed feature shape.
#[derive(Clone, Debug, PartialEq)]
pub struct TsTttLayer<S: Scalar> {
    pub layout: AxisLayout,
    pub dims: [usize; 4],
    pub branches: Vec<TTTBranchParams<S>>,
    pub detach_inner: bool,
}

impl<S: Scalar> TsTttLayer<S> {
    pub fn init(dims: [usize; 4], cfg: &TttConfig, rng: &mut RngStream) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::config(format!("feature extents must be positive: {dims:?}")));
        }
        let branches = cfg
            .layout
            .branches()
            .iter()
            .map(|b| {
                let (_, d_tok) = b.token_shape(dims);
                let eta = S::of(cfg.eta_scale / d_tok as f64);
                TTTBranchParams::init(d_tok, cfg.rank, cfg.chunk, eta, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TsTttLayer {
            layout: cfg.layout,
            dims,
            branches,
            detach_inner: cfg.detach_inner,
        })
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Vec<BranchVars<'t, S>> {
        self.branches.iter().map(|b| b.bind(tape)).collect()
    }

    /// Convenience forward on plain tensors.
    pub fn forward(&self, v: &Tensor<S>, mode: TttMode) -> Result<Tensor<S>> {
        let tape = Tape::inference();
        let vars: Vec<_> = self.branches.iter().map(|b| b.bind_constant(&tape)).collect();
        let opts = InnerOptions {
            detach_inner: self.detach_inner,
        };
        let out = layer_forward(tape.constant(v.clone()), self.layout, &vars, mode, opts, None, "ttt")?;
        Ok(out.output.value().as_ref().clone())
    }
}

pub struct LayerOutput<'t, S: Scalar> {
    pub output: Var<'t, S>,
    /// Final fast weights of each branch, in layout order.
    pub final_w: Vec<Var<'t, S>>,
}

/// `vᵒ = v + Σ_branches untokenize(branch_forward(tokenize(v)))`.
pub fn layer_forward<'t, S: Scalar>(
    v: Var<'t, S>,
    layout: AxisLayout,
    branches: &[BranchVars<'t, S>],
    mode: TttMode,
    opts: InnerOptions,
    init_w: Option<&[Var<'t, S>]>,
    label: &str,
) -> Result<LayerOutput<'t, S>> {
    let dims = feature_dims(&v.shape())?;
    let axes = layout.branches();
    if branches.len() != axes.len() {
        return Err(Error::contract(format!(
            "{label}: layout {layout} has {} branches, got {} parameter sets",
            axes.len(),
            branches.len()
        )));
    }
    if let Some(ws) = init_w {
        if ws.len() != axes.len() {
            return Err(Error::contract(format!("{label}: carried fast weights per branch")));
        }
    }
    let mut out = v;
    let mut final_w = Vec::with_capacity(axes.len());
    for (i, (axis, p)) in axes.iter().zip(branches).enumerate() {
        let (_, d_tok) = axis.token_shape(dims);
        if p.d_tok() != d_tok {
            return Err(Error::contract(format!(
                "{label}: branch {} expects token dimension {d_tok}, parameters have {}",
                axis.name(),
                p.d_tok()
            )));
        }
        let tokens = axis.tokenize_var(v)?;
        let branch_label = format!("{label}.{}", axis.name());
        let res = branch_forward(tokens, p, mode, opts, init_w.map(|w| w[i]), &branch_label)?;
        out = out.add(axis.untokenize_var(res.outputs, dims)?)?;
        final_w.push(res.final_w);
    }
    Ok(LayerOutput { output: out, final_w })
}

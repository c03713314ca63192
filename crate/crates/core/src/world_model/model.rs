use std::sync::Arc;

use super::config::{PredictMode, WorldModelConfig};
use super::params::{Bound, ParamGroup, ParameterSet};
use crate::error::{Error, Result};
use crate::memory::{cross_attend, CrossAttnParams, CrossAttnVars, MemoryBank, SurrogateEncoder};
use crate::numeric::{RngStream, Scalar, Tape, Tensor, Var};
use crate::tsttt::{layer_forward, BranchVars, InnerOptions, TsTttLayer, TttMode};

const LN_EPS: f64 = 1e-5;
const INIT_STREAM: u64 = 0x574d_1417;

/// FNV-1a, used to give every parameter its own initialization stream so that
/// the backbone draws do not depend on which adapters exist.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// One prediction request. `context` holds `C_ctx` latents, oldest first.
pub struct StepInput<'a, S: Scalar> {
    pub context: &'a [Tensor<S>],
    pub action: &'a [S],
    /// Encoded memory tokens (`M × D_mem`), if any.
    pub memory: Option<&'a Tensor<S>>,
    /// Starting fast weights per adapter branch; `w0` when absent.
    pub ttt_init: Option<&'a [Tensor<S>]>,
}

pub struct StepOutput<'t, S: Scalar> {
    /// Predicted latent, `rows × cols × patch_dim`.
    pub pred: Var<'t, S>,
    pub ttt_final: Vec<Var<'t, S>>,
}

#[derive(Clone, Debug)]
pub struct Prediction<S: Scalar> {
    pub latent: Tensor<S>,
    pub ttt_final: Vec<Tensor<S>>,
}

/// Transformer next-frame predictor over a `C_ctx × rows × cols` token grid,
/// with optional memory cross-attention and TS-TTT adapters after every
/// `adapter_stride`-th block and an additive action embedding.
#[derive(Clone, Debug)]
pub struct WorldModel<S: Scalar> {
    config: WorldModelConfig,
    params: ParameterSet<S>,
    encoder: Arc<SurrogateEncoder<S>>,
}

impl<S: Scalar> WorldModel<S> {
    pub fn build(config: &WorldModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(seed, INIT_STREAM);
        let stream = |name: &str| root.derive(fnv1a(name.as_bytes()));
        let gauss = |name: &str, shape: &[usize], std: f64| stream(name).gaussian_tensor::<S>(shape, std);
        let c = config;
        let (d, pd, hm) = (c.d_model, c.patch_dim(), c.mlp_hidden);
        let n_tok = c.context * c.tokens_per_frame();
        let inv = |n: usize| 1.0 / (n as f64).sqrt();

        let mut ps = ParameterSet::new();
        let base = ParamGroup::Base;
        ps.insert("embed.w", gauss("embed.w", &[pd, d], inv(pd)), base);
        ps.insert("embed.b", Tensor::zeros(&[1, d]), base);
        ps.insert("pos", gauss("pos", &[n_tok, d], 0.1), base);
        for i in 1..=c.blocks {
            let n = |s: &str| format!("block{i}.{s}");
            ps.insert(n("attn.w_qkv"), gauss(&n("attn.w_qkv"), &[d, 3 * d], inv(d)), base);
            ps.insert(n("attn.w_o"), gauss(&n("attn.w_o"), &[d, d], 0.5 * inv(d)), base);
            ps.insert(n("mlp.w1"), gauss(&n("mlp.w1"), &[d, hm], inv(d)), base);
            ps.insert(n("mlp.b1"), Tensor::zeros(&[1, hm]), base);
            ps.insert(n("mlp.w2"), gauss(&n("mlp.w2"), &[hm, d], 0.5 * inv(hm)), base);
            ps.insert(n("mlp.b2"), Tensor::zeros(&[1, d]), base);
        }
        ps.insert("head.w", gauss("head.w", &[d, pd], 0.01), base);
        ps.insert("head.b", Tensor::zeros(&[1, pd]), base);

        let encoder = Arc::new(SurrogateEncoder::new(c.frame, c.memory.patch, c.memory.d_mem)?);
        if c.adapters {
            let g = ParamGroup::Adapter;
            let (a, ha) = (c.action_dim, c.action_hidden);
            ps.insert("action.w1", gauss("action.w1", &[a, ha], 1.0), g);
            ps.insert("action.b1", Tensor::zeros(&[1, ha]), g);
            ps.insert("action.w2", Tensor::zeros(&[ha, d]), g);
            ps.insert("action.b2", Tensor::zeros(&[1, d]), g);
            for s in c.adapter_sites() {
                if c.use_memory {
                    let m = &c.memory;
                    let mut rng = stream(&format!("site{s}.mp"));
                    let p = CrossAttnParams::<S>::init(d, m.d_mem, m.d_attn, m.heads, encoder.tokens_per_frame(), &mut rng)?;
                    let n = |k: &str| format!("site{s}.mp.{k}");
                    ps.insert(n("w_q"), p.w_q, g);
                    ps.insert(n("w_k"), p.w_k, g);
                    ps.insert(n("w_v"), p.w_v, g);
                    ps.insert(n("w_o"), p.w_o, g);
                    ps.insert(n("key_pos"), p.key_pos, g);
                }
                if c.use_ttt {
                    let mut rng = stream(&format!("site{s}.ttt"));
                    let layer = TsTttLayer::<S>::init(c.feature_dims(), &c.ttt, &mut rng)?;
                    for (axis, b) in c.ttt.layout.branches().iter().zip(layer.branches) {
                        let n = |k: &str| format!("site{s}.ttt.{}.{k}", axis.name());
                        let t = ParamGroup::Ttt;
                        ps.insert(n("theta_q"), b.theta_q, t);
                        ps.insert(n("theta_k"), b.theta_k, t);
                        ps.insert(n("theta_v"), b.theta_v, t);
                        ps.insert(n("theta_o"), b.theta_o, t);
                        ps.insert(n("w0"), b.w0, t);
                    }
                }
            }
        }
        Ok(WorldModel {
            config: config.clone(),
            params: ps,
            encoder,
        })
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<S> {
        &mut self.params
    }

    pub fn encoder(&self) -> &Arc<SurrogateEncoder<S>> {
        &self.encoder
    }

    pub fn new_bank(&self) -> MemoryBank<S> {
        MemoryBank::new(self.config.memory.capacity, Arc::clone(&self.encoder))
    }

    /// Whether predictions read the memory bank at all.
    pub fn uses_memory(&self) -> bool {
        self.config.adapters && self.config.use_memory && !self.config.adapter_sites().is_empty()
    }

    /// Number of fast-weight matrices carried between steps.
    pub fn ttt_slots(&self) -> usize {
        if self.config.adapters && self.config.use_ttt {
            self.config.adapter_sites().len() * self.config.ttt.layout.branches().len()
        } else {
            0
        }
    }

    /// Copies the backbone parameters of `base` into this model.
    pub fn load_base(&mut self, base: &WorldModel<S>) -> Result<()> {
        for (name, p) in base.params.iter().filter(|(_, p)| p.group == ParamGroup::Base) {
            self.params.set(name, p.value.clone())?;
        }
        Ok(())
    }

    fn check_input(&self, inp: &StepInput<'_, S>) -> Result<()> {
        let c = &self.config;
        let (gh, gw) = c.grid();
        if inp.context.len() != c.context {
            return Err(Error::contract(format!(
                "expected {} context latents, got {}",
                c.context,
                inp.context.len()
            )));
        }
        for l in inp.context {
            if l.shape() != [gh, gw, c.patch_dim()] {
                return Err(Error::Shape {
                    op: "context latent",
                    lhs: l.shape().to_vec(),
                    rhs: vec![gh, gw, c.patch_dim()],
                });
            }
        }
        if inp.action.len() != c.action_dim {
            return Err(Error::contract(format!(
                "action has {} components, expected {}",
                inp.action.len(),
                c.action_dim
            )));
        }
        if inp.action.iter().any(|a| !(a.abs() <= S::one())) {
            return Err(Error::contract("action components must lie in [-1, 1]"));
        }
        if let Some(init) = inp.ttt_init {
            if init.len() != self.ttt_slots() {
                return Err(Error::contract(format!(
                    "{} carried fast weights for {} slots",
                    init.len(),
                    self.ttt_slots()
                )));
            }
        }
        Ok(())
    }

    fn block<'t>(&self, b: &Bound<'t, S>, i: usize, h: Var<'t, S>) -> Result<Var<'t, S>> {
        let c = &self.config;
        let n = |s: &str| format!("block{i}.{s}");
        let d = c.d_model;
        let dh = d / c.heads;
        let scale = S::one() / S::from_usize(dh).unwrap().sqrt();
        let qkv = h.layer_norm_rows(S::of(LN_EPS))?.matmul(b.get(&n("attn.w_qkv"))?)?;
        let mut heads = Vec::with_capacity(c.heads);
        for k in 0..c.heads {
            let q = qkv.cols(k * dh, (k + 1) * dh)?;
            let kk = qkv.cols(d + k * dh, d + (k + 1) * dh)?;
            let v = qkv.cols(2 * d + k * dh, 2 * d + (k + 1) * dh)?;
            let att = q.matmul(kk.transpose()?)?.scale(scale).softmax_rows()?;
            heads.push(att.matmul(v)?);
        }
        let mixed = if heads.len() == 1 {
            heads[0]
        } else {
            h.tape().concat_cols(&heads)?
        };
        let h = h.add(mixed.matmul(b.get(&n("attn.w_o"))?)?)?;
        let m = h
            .layer_norm_rows(S::of(LN_EPS))?
            .matmul(b.get(&n("mlp.w1"))?)?
            .add(b.get(&n("mlp.b1"))?)?
            .gelu()
            .matmul(b.get(&n("mlp.w2"))?)?
            .add(b.get(&n("mlp.b2"))?)?;
        h.add(m)
    }

    fn branch_vars<'t>(&self, tape: &'t Tape<S>, b: &Bound<'t, S>, site: usize) -> Result<Vec<BranchVars<'t, S>>> {
        let c = &self.config;
        c.ttt
            .layout
            .branches()
            .iter()
            .map(|axis| {
                let n = |k: &str| format!("site{site}.ttt.{}.{k}", axis.name());
                let (_, d_tok) = axis.token_shape(c.feature_dims());
                Ok(BranchVars {
                    theta_q: b.get(&n("theta_q"))?,
                    theta_k: b.get(&n("theta_k"))?,
                    theta_v: b.get(&n("theta_v"))?,
                    theta_o: b.get(&n("theta_o"))?,
                    w0: b.get(&n("w0"))?,
                    eta: tape.constant(Tensor::scalar(S::of(c.ttt.eta_scale / d_tok as f64))),
                    chunk: c.ttt.chunk,
                })
            })
            .collect()
    }

    /// Differentiable forward pass on `tape` with parameters `b`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<S>,
        b: &Bound<'t, S>,
        inp: &StepInput<'_, S>,
        mode: TttMode,
    ) -> Result<StepOutput<'t, S>> {
        self.check_input(inp)?;
        let c = &self.config;
        let (gh, gw) = c.grid();
        let (p, t, d, pd) = (gh * gw, c.context, c.d_model, c.patch_dim());
        let rows = inp
            .context
            .iter()
            .map(|l| l.reshape(&[p, pd]))
            .collect::<Result<Vec<_>>>()?;
        let x = Tensor::concat_rows(&rows.iter().collect::<Vec<_>>())?;
        let last = tape.constant(rows[t - 1].clone());
        let mut h = tape
            .constant(x)
            .matmul(b.get("embed.w")?)?
            .add(b.get("embed.b")?)?
            .add(b.get("pos")?)?;

        if c.adapters {
            let a = tape.constant(Tensor::new(vec![1, c.action_dim], inp.action.to_vec())?);
            let e = a
                .matmul(b.get("action.w1")?)?
                .add(b.get("action.b1")?)?
                .gelu()
                .matmul(b.get("action.w2")?)?
                .add(b.get("action.b2")?)?;
            h = if t == 1 {
                h.add(e)?
            } else {
                let head = h.rows(0, (t - 1) * p)?;
                let tail = h.rows((t - 1) * p, t * p)?.add(e)?;
                tape.concat_rows(&[head, tail])?
            };
        }

        let sites = c.adapter_sites();
        let memory = match inp.memory {
            Some(m) if c.use_memory && !sites.is_empty() => Some(tape.constant(m.clone())),
            _ => None,
        };
        let opts = InnerOptions {
            detach_inner: c.ttt.detach_inner,
        };
        let mut ttt_final = Vec::new();
        let mut slot = 0;
        for i in 1..=c.blocks {
            h = self.block(b, i, h)?.check_finite(|| format!("activations of block {i}"))?;
            if !sites.contains(&i) {
                continue;
            }
            let mut v = h.reshape(&[t, gh, gw, d])?;
            if c.use_memory {
                let n = |k: &str| format!("site{i}.mp.{k}");
                let vars = CrossAttnVars {
                    w_q: b.get(&n("w_q"))?,
                    w_k: b.get(&n("w_k"))?,
                    w_v: b.get(&n("w_v"))?,
                    w_o: b.get(&n("w_o"))?,
                    key_pos: b.get(&n("key_pos"))?,
                    heads: c.memory.heads,
                };
                v = cross_attend(v, memory, &vars)?;
            }
            if c.use_ttt {
                let vars = self.branch_vars(tape, b, i)?;
                let k = vars.len();
                let init: Option<Vec<Var<'t, S>>> = inp
                    .ttt_init
                    .map(|ws| ws[slot..slot + k].iter().map(|w| tape.constant(w.clone())).collect());
                let out = layer_forward(
                    v,
                    c.ttt.layout,
                    &vars,
                    mode,
                    opts,
                    init.as_deref(),
                    &format!("adapter after block {i}"),
                )?;
                v = out.output;
                ttt_final.extend(out.final_w);
                slot += k;
            }
            h = v
                .reshape(&[t * p, d])?
                .check_finite(|| format!("adapter after block {i}"))?;
        }

        let delta = h
            .rows((t - 1) * p, t * p)?
            .layer_norm_rows(S::of(LN_EPS))?
            .matmul(b.get("head.w")?)?
            .add(b.get("head.b")?)?;
        let pred = last.add(delta)?.reshape(&[gh, gw, pd])?;
        Ok(StepOutput { pred, ttt_final })
    }

    /// Predicts the next latent. In noise-conditioned mode the last context
    /// latent is perturbed with a draw from `noise`, which is then required.
    pub fn predict_step(
        &self,
        context: &[Tensor<S>],
        action: &[S],
        bank: Option<&MemoryBank<S>>,
        mode: TttMode,
        ttt_init: Option<&[Tensor<S>]>,
        noise: Option<&mut RngStream>,
    ) -> Result<Prediction<S>> {
        let memory = if self.uses_memory() {
            bank.and_then(|b| b.tokens())
        } else {
            None
        };
        let noised;
        let context = match self.config.mode {
            PredictMode::Deterministic => context,
            PredictMode::NoiseConditioned => {
                let rng = noise.ok_or_else(|| Error::contract("noise-conditioned prediction needs a noise stream"))?;
                noised = self.perturb_last(context, rng)?;
                &noised[..]
            }
        };
        let tape = Tape::inference();
        let b = self.params.bind(&tape, false);
        let out = self.forward(
            &tape,
            &b,
            &StepInput {
                context,
                action,
                memory: memory.as_ref(),
                ttt_init,
            },
            mode,
        )?;
        Ok(Prediction {
            latent: out.pred.value().as_ref().clone(),
            ttt_final: out.ttt_final.iter().map(|w| w.value().as_ref().clone()).collect(),
        })
    }

    pub(crate) fn perturb_last(&self, context: &[Tensor<S>], rng: &mut RngStream) -> Result<Vec<Tensor<S>>> {
        let mut ctx = context.to_vec();
        if let Some(last) = ctx.last_mut() {
            let eps: Tensor<S> = rng.gaussian_tensor(last.shape(), self.config.noise_std);
            *last = last.add(&eps)?;
        }
        Ok(ctx)
    }
}

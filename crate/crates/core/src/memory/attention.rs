use crate::error::{Error, Result};
use crate::numeric::{RngStream, Scalar, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Cross-attention from backbone tokens (queries) to memory tokens
/// (keys/values). Keys also receive a learned per-patch position code, shared
/// across remembered frames, so queries can address "the same place".
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttnParams<S: Scalar> {
    pub w_q: Tensor<S>,
    pub w_k: Tensor<S>,
    pub w_v: Tensor<S>,
    /// Zero at construction.
    pub w_o: Tensor<S>,
    /// `P × d_attn`.
    pub key_pos: Tensor<S>,
    pub heads: usize,
}

impl<S: Scalar> CrossAttnParams<S> {
    pub fn init(
        d_model: usize,
        d_mem: usize,
        d_attn: usize,
        heads: usize,
        tokens_per_frame: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if heads == 0 || d_attn == 0 || !d_attn.is_multiple_of(heads) || tokens_per_frame == 0 {
            return Err(Error::config(format!(
                "cross-attention width {d_attn} must be a positive multiple of {heads} heads"
            )));
        }
        Ok(CrossAttnParams {
            w_q: rng.gaussian_tensor(&[d_model, d_attn], 1.0 / (d_model as f64).sqrt()),
            w_k: rng.gaussian_tensor(&[d_mem, d_attn], 1.0 / (d_mem as f64).sqrt()),
            w_v: rng.gaussian_tensor(&[d_mem, d_attn], 1.0 / (d_mem as f64).sqrt()),
            w_o: Tensor::zeros(&[d_attn, d_model]),
            key_pos: rng.gaussian_tensor(&[tokens_per_frame, d_attn], 0.1),
            heads,
        })
    }

    pub fn d_mem(&self) -> usize {
        self.w_k.shape()[0]
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> CrossAttnVars<'t, S> {
        CrossAttnVars {
            w_q: tape.var(self.w_q.clone()),
            w_k: tape.var(self.w_k.clone()),
            w_v: tape.var(self.w_v.clone()),
            w_o: tape.var(self.w_o.clone()),
            key_pos: tape.var(self.key_pos.clone()),
            heads: self.heads,
        }
    }

    pub fn bind_constant<'t>(&self, tape: &'t Tape<S>) -> CrossAttnVars<'t, S> {
        CrossAttnVars {
            w_q: tape.constant(self.w_q.clone()),
            w_k: tape.constant(self.w_k.clone()),
            w_v: tape.constant(self.w_v.clone()),
            w_o: tape.constant(self.w_o.clone()),
            key_pos: tape.constant(self.key_pos.clone()),
            heads: self.heads,
        }
    }
}

#[derive(Clone, Copy)]
pub struct CrossAttnVars<'t, S: Scalar> {
    pub w_q: Var<'t, S>,
    pub w_k: Var<'t, S>,
    pub w_v: Var<'t, S>,
    pub w_o: Var<'t, S>,
    pub key_pos: Var<'t, S>,
    pub heads: usize,
}

struct Projected<'t, S: Scalar> {
    q: Var<'t, S>,
    k: Var<'t, S>,
    v: Var<'t, S>,
    d_head: usize,
}

fn project<'t, S: Scalar>(
    x: Var<'t, S>,
    memory: Var<'t, S>,
    p: &CrossAttnVars<'t, S>,
) -> Result<Projected<'t, S>> {
    let mshape = memory.shape();
    let d_mem = p.w_k.shape()[0];
    if mshape.len() != 2 || mshape[1] != d_mem {
        return Err(Error::contract(format!(
            "memory tokens {mshape:?} do not match key input width {d_mem}"
        )));
    }
    if x.shape()[1] != p.w_q.shape()[0] {
        return Err(Error::contract(format!(
            "feature width {} does not match query input width {}",
            x.shape()[1],
            p.w_q.shape()[0]
        )));
    }
    let per_frame = p.key_pos.shape()[0];
    if !mshape[0].is_multiple_of(per_frame) {
        return Err(Error::contract(format!(
            "{} memory tokens is not a whole number of {per_frame}-patch frames",
            mshape[0]
        )));
    }
    let frames = mshape[0] / per_frame;
    let pos = if frames == 1 {
        p.key_pos
    } else {
        x.tape().concat_rows(&vec![p.key_pos; frames])?
    };
    let q = x.layer_norm_rows(S::of(LN_EPS))?.matmul(p.w_q)?;
    let k = memory.matmul(p.w_k)?.add(pos)?;
    let v = memory.matmul(p.w_v)?;
    let d_head = p.w_q.shape()[1] / p.heads;
    Ok(Projected { q, k, v, d_head })
}

fn head<'t, S: Scalar>(t: Var<'t, S>, h: usize, d_head: usize, heads: usize) -> Result<Var<'t, S>> {
    if heads == 1 {
        Ok(t)
    } else {
        t.cols(h * d_head, (h + 1) * d_head)
    }
}

/// `feat + softmax(q kᵀ/√d_head) v · W_o`, with queries from the flattened
/// `T·H·W` feature tokens. With no memory, `feat` is returned unchanged.
pub fn cross_attend<'t, S: Scalar>(
    feat: Var<'t, S>,
    memory: Option<Var<'t, S>>,
    p: &CrossAttnVars<'t, S>,
) -> Result<Var<'t, S>> {
    let Some(memory) = memory else {
        return Ok(feat);
    };
    let shape = feat.shape();
    let d = *shape.last().ok_or_else(|| Error::contract("empty feature shape"))?;
    let n: usize = shape.iter().product::<usize>() / d.max(1);
    let x = feat.reshape(&[n, d])?;
    let pr = project(x, memory, p)?;
    let scale = S::one() / S::from_usize(pr.d_head).unwrap().sqrt();
    let mut outs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = head(pr.q, h, pr.d_head, p.heads)?;
        let kh = head(pr.k, h, pr.d_head, p.heads)?;
        let vh = head(pr.v, h, pr.d_head, p.heads)?;
        let attn = qh.matmul(kh.transpose()?)?.scale(scale).softmax_rows()?;
        outs.push(attn.matmul(vh)?);
    }
    let mixed = if outs.len() == 1 {
        outs[0]
    } else {
        x.tape().concat_cols(&outs)?
    };
    x.add(mixed.matmul(p.w_o)?)?.reshape(&shape)
}

/// Attention weights of every head (`queries × memory tokens`), for inspection.
pub fn attention_weights<S: Scalar>(
    feat: &Tensor<S>,
    memory: &Tensor<S>,
    params: &CrossAttnParams<S>,
) -> Result<Vec<Tensor<S>>> {
    let tape = Tape::inference();
    let p = params.bind_constant(&tape);
    let d = *feat.shape().last().unwrap_or(&0);
    let x = tape.constant(feat.reshape(&[feat.numel() / d.max(1), d])?);
    let pr = project(x, tape.constant(memory.clone()), &p)?;
    let scale = S::one() / S::from_usize(pr.d_head).unwrap().sqrt();
    (0..p.heads)
        .map(|h| {
            let qh = head(pr.q, h, pr.d_head, p.heads)?;
            let kh = head(pr.k, h, pr.d_head, p.heads)?;
            Ok(qh.matmul(kh.transpose()?)?.scale(scale).softmax_rows()?.value().as_ref().clone())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, objective};

    fn setup(heads: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>, CrossAttnParams<f64>) {
        let mut rng = RngStream::new(seed, 0);
        let feat = rng.gaussian_tensor(&[2, 2, 2, 4], 1.0);
        let mem = rng.gaussian_tensor(&[6, 5], 1.0);
        let mut p = CrossAttnParams::init(4, 5, 4, heads, 3, &mut rng).unwrap();
        p.w_o = rng.gaussian_tensor(&[4, 4], 0.5);
        (feat, mem, p)
    }

    fn run(feat: &Tensor<f64>, mem: Option<&Tensor<f64>>, p: &CrossAttnParams<f64>) -> Tensor<f64> {
        let tape = Tape::inference();
        let out = cross_attend(
            tape.constant(feat.clone()),
            mem.map(|m| tape.constant(m.clone())),
            &p.bind_constant(&tape),
        )
        .unwrap();
        out.value().as_ref().clone()
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let mut rng = RngStream::new(1, 0);
        let p = CrossAttnParams::<f64>::init(4, 5, 4, 1, 3, &mut rng).unwrap();
        let feat: Tensor<f64> = rng.gaussian_tensor(&[2, 2, 2, 4], 3.0);
        let mem: Tensor<f64> = rng.gaussian_tensor(&[9, 5], 1.0);
        assert_eq!(run(&feat, Some(&mem), &p), feat);
    }

    #[test]
    fn empty_memory_is_identity() {
        let (feat, _, p) = setup(1, 2);
        assert_eq!(run(&feat, None, &p), feat);
    }

    #[test]
    fn single_memory_token_gets_all_weight() {
        let mut rng = RngStream::new(3, 0);
        let p = CrossAttnParams::<f64>::init(4, 5, 4, 1, 1, &mut rng).unwrap();
        let feat: Tensor<f64> = rng.gaussian_tensor(&[1, 2, 2, 4], 1.0);
        let mem: Tensor<f64> = rng.gaussian_tensor(&[1, 5], 1.0);
        let w = attention_weights(&feat, &mem, &p).unwrap();
        assert!(w[0].data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn weight_rows_sum_to_one() {
        for seed in 0..10 {
            let (feat, mem, p) = setup(2, seed);
            for w in attention_weights(&feat, &mem, &p).unwrap() {
                for row in w.data().chunks_exact(6) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|&x| x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn mismatched_memory_width_rejected() {
        let (feat, _, p) = setup(1, 4);
        let tape = Tape::inference();
        let res = cross_attend(
            tape.constant(feat),
            Some(tape.constant(Tensor::zeros(&[3, 7]))),
            &p.bind_constant(&tape),
        );
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for heads in [1, 2] {
            let (feat, mem, p) = setup(heads, 10 + heads as u64);
            let mut rng = RngStream::new(99, heads as u64);
            let probe: Tensor<f64> = rng.gaussian_tensor(&[2, 2, 2, 4], 1.0);
            for which in 0..5 {
                let pick = |p: &CrossAttnParams<f64>| {
                    [&p.w_q, &p.w_k, &p.w_v, &p.w_o, &p.key_pos][which].clone()
                };
                let f = objective(|t, x| {
                    let mut v = p.bind_constant(t);
                    *[&mut v.w_q, &mut v.w_k, &mut v.w_v, &mut v.w_o, &mut v.key_pos][which] = x;
                    cross_attend(t.constant(feat.clone()), Some(t.constant(mem.clone())), &v)?
                        .mul(t.constant(probe.clone()))
                        .map(|o| o.sum())
                });
                let err = grad_check(f, &pick(&p), 1e-5).unwrap();
                assert!(err < 1e-4, "heads {heads} param {which}: {err}");
            }
        }
    }
}

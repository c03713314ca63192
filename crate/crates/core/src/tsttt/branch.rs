use crate::error::{Error, Result};
use crate::numeric::{RngStream, Scalar, Tape, Tensor, Var};

/// Whether fast weights are updated during the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TttMode {
    Adaptive,
    /// Fast weights stay at `w0`, as if `eta == 0`.
    Frozen,
}

/// Learnable parameters of one TTT branch.
///
/// Row-vector convention: a token `x` (1×d) is projected to `x·theta_k`
/// (1×r); the fast-weight map `f(w; k) = w·k` is evaluated as `k·wᵀ`, and
/// outputs are restored to token dimension by right-multiplying `theta_o`.
#[derive(Clone, Debug, PartialEq)]
pub struct TTTBranchParams<S: Scalar> {
    pub theta_q: Tensor<S>,
    pub theta_k: Tensor<S>,
    pub theta_v: Tensor<S>,
    pub theta_o: Tensor<S>,
    pub w0: Tensor<S>,
    pub eta: S,
    pub chunk: usize,
}

impl<S: Scalar> TTTBranchParams<S> {
    /// Random projections with variance `1/d_tok`, identity `w0` and a zero
    /// output projection. `rank` is clamped to `d_tok`.
    pub fn init(d_tok: usize, rank: usize, chunk: usize, eta: S, rng: &mut RngStream) -> Result<Self> {
        if d_tok == 0 || rank == 0 || chunk == 0 {
            return Err(Error::config("TTT branch needs positive d_tok, rank and chunk"));
        }
        if !(eta >= S::zero()) {
            return Err(Error::config("TTT inner learning rate must be non-negative"));
        }
        let r = rank.min(d_tok);
        let std = 1.0 / (d_tok as f64).sqrt();
        Ok(TTTBranchParams {
            theta_q: rng.gaussian_tensor(&[d_tok, r], std),
            theta_k: rng.gaussian_tensor(&[d_tok, r], std),
            theta_v: rng.gaussian_tensor(&[d_tok, r], std),
            theta_o: Tensor::zeros(&[r, d_tok]),
            w0: Tensor::eye(r),
            eta,
            chunk,
        })
    }

    pub fn d_tok(&self) -> usize {
        self.theta_k.shape()[0]
    }

    pub fn rank(&self) -> usize {
        self.theta_k.shape()[1]
    }

    /// Binds every parameter as a gradient-tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> BranchVars<'t, S> {
        BranchVars {
            theta_q: tape.var(self.theta_q.clone()),
            theta_k: tape.var(self.theta_k.clone()),
            theta_v: tape.var(self.theta_v.clone()),
            theta_o: tape.var(self.theta_o.clone()),
            w0: tape.var(self.w0.clone()),
            eta: tape.var(Tensor::scalar(self.eta)),
            chunk: self.chunk,
        }
    }

    pub fn bind_constant<'t>(&self, tape: &'t Tape<S>) -> BranchVars<'t, S> {
        BranchVars {
            theta_q: tape.constant(self.theta_q.clone()),
            theta_k: tape.constant(self.theta_k.clone()),
            theta_v: tape.constant(self.theta_v.clone()),
            theta_o: tape.constant(self.theta_o.clone()),
            w0: tape.constant(self.w0.clone()),
            eta: tape.constant(Tensor::scalar(self.eta)),
            chunk: self.chunk,
        }
    }

    fn check_tokens(&self, tokens: &Tensor<S>) -> Result<()> {
        if tokens.rank() != 2 || tokens.shape()[1] != self.d_tok() {
            return Err(Error::Shape {
                op: "ttt tokens",
                lhs: tokens.shape().to_vec(),
                rhs: self.theta_k.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_w(&self, w: &Tensor<S>) -> Result<()> {
        if w.shape() != self.w0.shape() {
            return Err(Error::Shape {
                op: "ttt fast weights",
                lhs: w.shape().to_vec(),
                rhs: self.w0.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// A branch's parameters as tape variables. `eta` has shape `[1]`.
#[derive(Clone, Copy)]
pub struct BranchVars<'t, S: Scalar> {
    pub theta_q: Var<'t, S>,
    pub theta_k: Var<'t, S>,
    pub theta_v: Var<'t, S>,
    pub theta_o: Var<'t, S>,
    pub w0: Var<'t, S>,
    pub eta: Var<'t, S>,
    pub chunk: usize,
}

impl<S: Scalar> BranchVars<'_, S> {
    pub fn d_tok(&self) -> usize {
        self.theta_k.shape()[0]
    }
}

/// Current fast weights of one branch.
#[derive(Clone, Debug, PartialEq)]
pub struct TTTState<S: Scalar> {
    pub w: Tensor<S>,
    pub tokens_seen: usize,
}

impl<S: Scalar> TTTState<S> {
    pub fn reset(params: &TTTBranchParams<S>) -> Self {
        TTTState {
            w: params.w0.clone(),
            tokens_seen: 0,
        }
    }
}

/// Per-token reconstruction loss `‖w·k − v′‖²` with `k = x·Θ_K`, `v′ = x·Θ_V`.
/// A non-finite loss is reported with the offending row index.
pub fn inner_losses<S: Scalar>(w: &Tensor<S>, tokens: &Tensor<S>, p: &TTTBranchParams<S>) -> Result<Vec<S>> {
    p.check_tokens(tokens)?;
    p.check_w(w)?;
    let k = tokens.matmul(&p.theta_k)?;
    let v = tokens.matmul(&p.theta_v)?;
    let resid = k.matmul_nt(w)?.sub(&v)?;
    let r = p.rank();
    resid
        .data()
        .chunks_exact(r)
        .enumerate()
        .map(|(i, row)| {
            let l: S = row.iter().map(|&e| e * e).sum();
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::numeric(format!("inner loss of token {i}")))
            }
        })
        .collect()
}

pub fn inner_loss<S: Scalar>(w: &Tensor<S>, token: &Tensor<S>, p: &TTTBranchParams<S>) -> Result<S> {
    let row = token.reshape(&[1, token.numel()])?;
    Ok(inner_losses(w, &row, p)?[0])
}

/// Analytic gradient of the mean chunk loss: `(2/c) Σ (w k − v′) kᵀ`.
pub fn inner_grad<S: Scalar>(w: &Tensor<S>, chunk: &Tensor<S>, p: &TTTBranchParams<S>) -> Result<Tensor<S>> {
    p.check_tokens(chunk)?;
    p.check_w(w)?;
    let c = S::from_usize(chunk.shape()[0]).unwrap();
    let k = chunk.matmul(&p.theta_k)?;
    let v = chunk.matmul(&p.theta_v)?;
    let resid = k.matmul_nt(w)?.sub(&v)?;
    Ok(resid.matmul_tn(&k)?.scale(S::of(2.0) / c))
}

/// One gradient step of the fast weights on a chunk of tokens.
pub fn inner_step<S: Scalar>(state: &TTTState<S>, chunk: &Tensor<S>, p: &TTTBranchParams<S>) -> Result<TTTState<S>> {
    if chunk.shape()[0] > p.chunk {
        return Err(Error::contract(format!(
            "chunk of {} tokens exceeds configured size {}",
            chunk.shape()[0],
            p.chunk
        )));
    }
    let grad = inner_grad(&state.w, chunk, p)?;
    if !grad.is_finite() {
        return Err(Error::numeric("inner gradient"));
    }
    let w = state.w.sub(&grad.scale(p.eta))?;
    Ok(TTTState {
        w,
        tokens_seen: state.tokens_seen + chunk.shape()[0],
    })
}

/// Options that shape how gradients and fast weights flow through a branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InnerOptions {
    /// Stop outer-loop gradients from flowing through the inner updates.
    pub detach_inner: bool,
}

pub struct BranchOutput<'t, S: Scalar> {
    pub outputs: Var<'t, S>,
    pub final_w: Var<'t, S>,
    pub tokens_seen: usize,
}

/// Runs the inner loop over `tokens` in chunk order and emits
/// `z_i = ((x_i·Θ_Q)·wᵀ)·Θ_O` using the fast weights after the update that
/// covers token `i`'s chunk. `init_w` overrides `w0` as the starting point.
pub fn branch_forward<'t, S: Scalar>(
    tokens: Var<'t, S>,
    p: &BranchVars<'t, S>,
    mode: TttMode,
    opts: InnerOptions,
    init_w: Option<Var<'t, S>>,
    label: &str,
) -> Result<BranchOutput<'t, S>> {
    let shape = tokens.shape();
    if shape.len() != 2 || shape[1] != p.d_tok() {
        return Err(Error::contract(format!(
            "{label}: tokens {shape:?} do not match branch token dimension {}",
            p.d_tok()
        )));
    }
    let n = shape[0];
    let w_start = init_w.unwrap_or(p.w0);
    let q = tokens.matmul(p.theta_q)?;

    if mode == TttMode::Frozen {
        let out = q.matmul(w_start.transpose()?)?.matmul(p.theta_o)?;
        return Ok(BranchOutput {
            outputs: out,
            final_w: w_start,
            tokens_seen: 0,
        });
    }

    let k = tokens.matmul(p.theta_k)?;
    let v = tokens.matmul(p.theta_v)?;
    let chunk = p.chunk.max(1);
    let mut w = w_start;
    let mut outs = Vec::with_capacity(n.div_ceil(chunk));
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let c = S::from_usize(end - start).unwrap();
        let (kc, vc, qc) = if start == 0 && end == n {
            (k, v, q)
        } else {
            (k.rows(start, end)?, v.rows(start, end)?, q.rows(start, end)?)
        };
        let resid = kc.matmul(w.transpose()?)?.sub(vc)?;
        let mut grad = resid.transpose()?.matmul(kc)?.scale(S::of(2.0) / c);
        if opts.detach_inner {
            grad = grad.detach();
        }
        grad.check_finite(|| format!("{label}: inner gradient at tokens {start}..{end}"))?;
        w = w.sub(grad.mul(p.eta)?)?;
        outs.push(qc.matmul(w.transpose()?)?.matmul(p.theta_o)?);
        start = end;
    }
    let outputs = if outs.len() == 1 {
        outs[0]
    } else {
        tokens.tape().concat_rows(&outs)?
    };
    Ok(BranchOutput {
        outputs,
        final_w: w,
        tokens_seen: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference, relative_error};

    fn params(d: usize, r: usize, chunk: usize, eta: f64, seed: u64) -> TTTBranchParams<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut p = TTTBranchParams::init(d, r, chunk, eta, &mut rng).unwrap();
        p.theta_o = rng.gaussian_tensor(&[r, d], 0.5);
        p
    }

    /// Scalar re-implementation of the quadratic.
    fn quadratic_oracle(w: &Tensor<f64>, x: &[f64], p: &TTTBranchParams<f64>) -> f64 {
        let (d, r) = (p.d_tok(), p.rank());
        let mut k = vec![0.0; r];
        let mut v = vec![0.0; r];
        for j in 0..r {
            for i in 0..d {
                k[j] += x[i] * p.theta_k.at(&[i, j]);
                v[j] += x[i] * p.theta_v.at(&[i, j]);
            }
        }
        let mut total = 0.0;
        for a in 0..r {
            let mut wk = 0.0;
            for b in 0..r {
                wk += w.at(&[a, b]) * k[b];
            }
            total += (wk - v[a]).powi(2);
        }
        total
    }

    #[test]
    fn exact_reconstruction_gives_zero_loss() {
        let mut p = params(4, 4, 4, 0.1, 1);
        p.theta_v = p.theta_k.clone();
        let x = Tensor::new(vec![4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        assert_eq!(inner_loss(&Tensor::eye(4), &x, &p).unwrap(), 0.0);
    }

    #[test]
    fn zero_fast_weights_leave_label_norm() {
        let p = params(4, 2, 4, 0.1, 2);
        let x = Tensor::new(vec![4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let label = x.reshape(&[1, 4]).unwrap().matmul(&p.theta_v).unwrap();
        let l = inner_loss(&Tensor::zeros(&[2, 2]), &x, &p).unwrap();
        assert!((l - label.norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_scalar_oracle() {
        let p = params(4, 2, 4, 0.1, 3);
        let mut rng = RngStream::new(3, 1);
        for _ in 0..20 {
            let x: Tensor<f64> = rng.gaussian_tensor(&[4], 1.0);
            let w: Tensor<f64> = rng.gaussian_tensor(&[2, 2], 1.0);
            let got = inner_loss(&w, &x, &p).unwrap();
            let want = quadratic_oracle(&w, x.data(), &p);
            assert!((got - want).abs() <= 1e-12 * want.max(1.0));
        }
    }

    #[test]
    fn non_finite_loss_names_token() {
        let p = params(3, 2, 4, 0.1, 4);
        let toks = Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, f64::NAN, 0.0, 0.0]).unwrap();
        let err = inner_losses(&p.w0, &toks, &p).unwrap_err().to_string();
        assert!(err.contains("token 1"), "{err}");
    }

    #[test]
    fn zero_eta_step_is_identity() {
        let p = params(5, 3, 4, 0.0, 5);
        let mut rng = RngStream::new(5, 1);
        let chunk: Tensor<f64> = rng.gaussian_tensor(&[4, 5], 1.0);
        let s0 = TTTState::reset(&p);
        let s1 = inner_step(&s0, &chunk, &p).unwrap();
        assert_eq!(s1.w, s0.w);
        assert_eq!(s1.tokens_seen, 4);
    }

    #[test]
    fn analytic_inner_gradient_matches_differences() {
        let p = params(6, 3, 4, 0.1, 6);
        let mut rng = RngStream::new(6, 1);
        let chunk: Tensor<f64> = rng.gaussian_tensor(&[4, 6], 1.0);
        let w: Tensor<f64> = rng.gaussian_tensor(&[3, 3], 1.0);
        let analytic = inner_grad(&w, &chunk, &p).unwrap();
        let k = chunk.matmul(&p.theta_k).unwrap();
        let v = chunk.matmul(&p.theta_v).unwrap();
        let numeric = finite_difference(
            &|t: &Tape<f64>, wv: Var<'_, f64>| {
                Ok(t.constant(k.clone())
                    .matmul(wv.transpose()?)?
                    .sub(t.constant(v.clone()))?
                    .square()
                    .sum()
                    .scale(0.25))
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&analytic, &numeric).unwrap() < 1e-6);
    }

    #[test]
    fn chunk_larger_than_configured_is_rejected() {
        let p = params(3, 2, 2, 0.1, 7);
        let chunk = Tensor::<f64>::zeros(&[3, 3]);
        assert!(inner_step(&TTTState::reset(&p), &chunk, &p).is_err());
    }

    #[test]
    fn zero_output_projection_gives_zero_outputs() {
        let mut rng = RngStream::new(8, 0);
        let p = TTTBranchParams::<f64>::init(5, 3, 2, 0.3, &mut rng).unwrap();
        let tape = Tape::inference();
        let toks = tape.constant(rng.gaussian_tensor(&[7, 5], 1.0));
        let out = branch_forward(toks, &p.bind(&tape), TttMode::Adaptive, InnerOptions::default(), None, "t")
            .unwrap();
        assert!(out.outputs.value().data().iter().all(|&z| z == 0.0));
        assert_ne!(*out.final_w.value(), p.w0);
    }

    #[test]
    fn frozen_equals_adaptive_at_zero_eta() {
        let p = params(5, 3, 2, 0.0, 9);
        let mut rng = RngStream::new(9, 1);
        let toks_t: Tensor<f64> = rng.gaussian_tensor(&[7, 5], 1.0);
        let tape = Tape::inference();
        let toks = tape.constant(toks_t);
        let vars = p.bind(&tape);
        let a = branch_forward(toks, &vars, TttMode::Adaptive, InnerOptions::default(), None, "t").unwrap();
        let f = branch_forward(toks, &vars, TttMode::Frozen, InnerOptions::default(), None, "t").unwrap();
        assert_eq!(*a.outputs.value(), *f.outputs.value());
    }

    #[test]
    fn repeated_token_loss_decreases_monotonically() {
        let p = params(6, 3, 1, 0.0, 10);
        let mut rng = RngStream::new(10, 1);
        let x: Tensor<f64> = rng.gaussian_tensor(&[1, 6], 1.0);
        let k = x.matmul(&p.theta_k).unwrap();
        let eta = 0.5 / (2.0 * k.norm_sq());
        let p = TTTBranchParams { eta, ..p };
        let mut state = TTTState::reset(&p);
        let mut prev = inner_loss(&state.w, &x, &p).unwrap();
        for _ in 0..50 {
            state = inner_step(&state, &x, &p).unwrap();
            let l = inner_loss(&state.w, &x, &p).unwrap();
            assert!(l <= prev);
            prev = l;
        }
        // A single token is exactly reconstructible by a rank-one correction.
        assert!(prev < 1e-12);
    }
}

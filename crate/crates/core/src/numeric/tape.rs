//! Reverse-mode gradient tape.
//!
//! Every operation on a [`Var`] evaluates eagerly and, when the tape is
//! recording, appends a node holding the saved context its adjoint needs.
//! [`Tape::backward`] walks the nodes in reverse creation order, which is a
//! valid topological order because inputs are always created before outputs.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Scale(usize, S),
    Sum(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    SoftmaxRows(usize),
    LayerNormRows {
        x: usize,
        xhat: Rc<Tensor<S>>,
        inv_std: Vec<S>,
    },
    Gelu(usize),
    Rows(usize, usize),
    Cols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Single-writer record of a traced computation.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    params: RefCell<Vec<(String, usize)>>,
    recording: bool,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// A recording tape.
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that evaluates but never records adjoint context.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let (op, needs_grad) = if self.recording && needs_grad {
            (op, true)
        } else {
            (Op::Leaf, false)
        };
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var { tape: self, id }
    }

    /// A constant: no gradient flows into it.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn var(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value, Op::Leaf, true)
    }

    /// A named leaf; trainable leaves appear in [`Grads::named`].
    pub fn param(&self, name: &str, value: Tensor<S>, trainable: bool) -> Var<'_, S> {
        let v = self.push(value, Op::Leaf, trainable);
        if trainable && self.recording {
            self.params.borrow_mut().push((name.to_string(), v.id));
        }
        v
    }

    fn value(&self, id: usize) -> Rc<Tensor<S>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<S>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_rows(&refs)?;
        let needs = parts.iter().any(|p| self.needs(p.id));
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.id).collect()), needs))
    }

    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<S>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_cols(&refs)?;
        let needs = parts.iter().any(|p| self.needs(p.id));
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), needs))
    }

    /// Gradients of the scalar `loss` with respect to every tracked leaf.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Grads<S>> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(loss_value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut send = |target: usize, grad: Tensor<S>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            };
            let val = |i: usize| -> &Tensor<S> { &nodes[i].value };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    let gb = g.reduce_to(val(*b).shape());
                    send(*a, g);
                    send(*b, gb);
                }
                Op::Sub(a, b) => {
                    let gb = g.reduce_to(val(*b).shape()).scale(-S::one());
                    send(*a, g);
                    send(*b, gb);
                }
                Op::Mul(a, b) => {
                    let ga = g.mul(val(*b))?;
                    let gb = g.zip_map(val(*a), "mul", |x, y| x * y)?.reduce_to(val(*b).shape());
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].needs_grad {
                        send(*a, g.matmul_nt(val(*b))?);
                    }
                    if nodes[*b].needs_grad {
                        send(*b, val(*a).matmul_tn(&g)?);
                    }
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::Sum(a) => {
                    let gs = g.data()[0];
                    send(*a, Tensor::full(val(*a).shape(), gs));
                }
                Op::Reshape(a) => send(*a, g.reshape(val(*a).shape())?),
                Op::Permute(a, axes) => {
                    let mut inverse = vec![0; axes.len()];
                    for (i, &ax) in axes.iter().enumerate() {
                        inverse[ax] = i;
                    }
                    send(*a, g.permute(&inverse)?);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.shape()[1];
                    let mut out = Vec::with_capacity(y.numel());
                    for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
                        let dotp = super::tensor::dot(yr, gr);
                        out.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dotp)));
                    }
                    send(*a, Tensor::from_parts(y.shape().to_vec(), out));
                }
                Op::LayerNormRows { x, xhat, inv_std } => {
                    let n = xhat.shape()[1];
                    let nf = S::from_usize(n).unwrap();
                    let mut out = Vec::with_capacity(xhat.numel());
                    for ((hr, gr), &is) in xhat
                        .data()
                        .chunks_exact(n)
                        .zip(g.data().chunks_exact(n))
                        .zip(inv_std)
                    {
                        let mean_g = gr.iter().copied().sum::<S>() / nf;
                        let mean_gh = super::tensor::dot(gr, hr) / nf;
                        out.extend(
                            hr.iter()
                                .zip(gr)
                                .map(|(&h, &gi)| is * (gi - mean_g - h * mean_gh)),
                        );
                    }
                    send(*x, Tensor::from_parts(xhat.shape().to_vec(), out));
                }
                Op::Gelu(a) => {
                    let dx = val(*a).map(gelu_grad);
                    send(*a, g.zip_map(&dx, "gelu", |x, y| x * y)?);
                }
                Op::Rows(a, start) => {
                    let src = val(*a).shape();
                    let n = src[1];
                    let mut full = vec![S::zero(); src[0] * n];
                    full[start * n..start * n + g.numel()].copy_from_slice(g.data());
                    send(*a, Tensor::from_parts(src.to_vec(), full));
                }
                Op::Cols(a, start) => {
                    let src = val(*a).shape();
                    let (m, n) = (src[0], src[1]);
                    let w = g.shape()[1];
                    let mut full = vec![S::zero(); m * n];
                    for (i, gr) in g.data().chunks_exact(w).enumerate() {
                        full[i * n + start..i * n + start + w].copy_from_slice(gr);
                    }
                    send(*a, Tensor::from_parts(src.to_vec(), full));
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let m = val(p).shape()[0];
                        if nodes[p].needs_grad {
                            send(p, g.rows(row, row + m)?);
                        }
                        row += m;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = val(p).shape()[1];
                        if nodes[p].needs_grad {
                            send(p, g.cols(col, col + w)?);
                        }
                        col += w;
                    }
                }
            }
        }

        Ok(Grads {
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of((2.0 / std::f64::consts::PI).sqrt());
    let k = S::of(0.044715);
    let half = S::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::of(3.0) * k * x * x)
}

/// Result of [`Tape::backward`].
pub struct Grads<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(String, usize)>,
}

impl<S: Scalar> Grads<S> {
    /// Gradient with respect to `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var<'_, S>) -> Tensor<S> {
        self.grads
            .get(v.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }

    /// Gradients of every trainable named parameter.
    pub fn named(&self) -> BTreeMap<String, Tensor<S>> {
        self.params
            .iter()
            .map(|(name, id)| {
                let g = self.grads[*id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[*id]));
                (name.clone(), g)
            })
            .collect()
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn needs(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn binary(
        self,
        rhs: Var<'t, S>,
        out: Tensor<S>,
        op: fn(usize, usize) -> Op<S>,
    ) -> Var<'t, S> {
        let needs = self.needs() || rhs.needs();
        self.tape.push(out, op(self.id, rhs.id), needs)
    }

    fn unary(self, out: Tensor<S>, op: Op<S>) -> Var<'t, S> {
        let needs = self.needs();
        self.tape.push(out, op, needs)
    }

    pub fn add(self, rhs: Var<'t, S>) -> Result<Var<'t, S>> {
        let out = self.value().add(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::Add))
    }

    pub fn sub(self, rhs: Var<'t, S>) -> Result<Var<'t, S>> {
        let out = self.value().sub(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::Sub))
    }

    /// Elementwise product; `rhs` may broadcast into `self`.
    pub fn mul(self, rhs: Var<'t, S>) -> Result<Var<'t, S>> {
        let out = self.value().mul(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::Mul))
    }

    pub fn matmul(self, rhs: Var<'t, S>) -> Result<Var<'t, S>> {
        let out = self.value().matmul(&rhs.value())?;
        Ok(self.binary(rhs, out, Op::MatMul))
    }

    pub fn scale(self, s: S) -> Var<'t, S> {
        let out = self.value().scale(s);
        self.unary(out, Op::Scale(self.id, s))
    }

    pub fn square(self) -> Var<'t, S> {
        let v = self.value();
        let out = v.zip_map(&v, "square", |a, b| a * b).expect("same shape");
        self.binary(self, out, Op::Mul)
    }

    pub fn sum(self) -> Var<'t, S> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, S> {
        let n = S::from_usize(self.value().numel()).unwrap();
        self.sum().scale(S::one() / n)
    }

    /// Mean squared difference.
    pub fn mse(self, target: Var<'t, S>) -> Result<Var<'t, S>> {
        if self.shape() != target.shape() {
            return Err(Error::Shape {
                op: "mse",
                lhs: self.shape(),
                rhs: target.shape(),
            });
        }
        Ok(self.sub(target)?.square().mean())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, S>> {
        let out = self.value().reshape(shape)?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn transpose(self) -> Result<Var<'t, S>> {
        self.permute(&[1, 0])
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, S>> {
        let out = self.value().permute(axes)?;
        Ok(self.unary(out, Op::Permute(self.id, axes.to_vec())))
    }

    pub fn softmax_rows(self) -> Result<Var<'t, S>> {
        let out = self.value().softmax_rows()?;
        Ok(self.unary(out, Op::SoftmaxRows(self.id)))
    }

    /// Per-row standardisation `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm_rows(self, eps: S) -> Result<Var<'t, S>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::contract(format!(
                "layer_norm_rows expects a matrix, got {shape:?}"
            )));
        }
        let n = shape[1];
        let nf = S::from_usize(n).unwrap();
        let mut xhat = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(shape[0]);
        for row in x.data().chunks_exact(n) {
            let mean = row.iter().copied().sum::<S>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / nf;
            let is = S::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let xhat = Rc::new(Tensor::from_parts(shape, xhat));
        let out = xhat.as_ref().clone();
        Ok(self.unary(
            out,
            Op::LayerNormRows {
                x: self.id,
                xhat,
                inv_std,
            },
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'t, S> {
        let out = self.value().map(gelu);
        self.unary(out, Op::Gelu(self.id))
    }

    pub fn rows(self, start: usize, end: usize) -> Result<Var<'t, S>> {
        let out = self.value().rows(start, end)?;
        Ok(self.unary(out, Op::Rows(self.id, start)))
    }

    pub fn cols(self, start: usize, end: usize) -> Result<Var<'t, S>> {
        let out = self.value().cols(start, end)?;
        Ok(self.unary(out, Op::Cols(self.id, start)))
    }

    /// Same value, cut off from the gradient graph.
    pub fn detach(self) -> Var<'t, S> {
        self.tape.constant(self.value().as_ref().clone())
    }

    /// Fails with a numeric error naming `context` if any entry is non-finite.
    pub fn check_finite(self, context: impl FnOnce() -> String) -> Result<Var<'t, S>> {
        if self.value().is_finite() {
            Ok(self)
        } else {
            Err(Error::numeric(context()))
        }
    }
}

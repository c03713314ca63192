use std::fmt;

use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        if numel_of(&shape) != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Tensor::from_parts(shape.to_vec(), vec![value; numel_of(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let data = (0..numel_of(shape)).map(&mut f).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|v| T::of(v.as_f64())).collect())
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let strides = strides_of(&self.shape);
        let offset: usize = index
            .iter()
            .zip(&self.shape)
            .zip(&strides)
            .map(|((&i, &n), &s)| {
                assert!(i < n, "index {i} out of range {n}");
                i * s
            })
            .sum();
        self.data[offset]
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            _ => Err(Error::contract(format!(
                "{op} expects a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn transpose(&self) -> Result<Self> {
        self.permute(&[1, 0])
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::contract(format!(
                "invalid permutation {axes:?} for shape {:?}",
                self.shape
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides_of(&self.shape);
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        let mut offset = 0usize;
        for _ in 0..self.numel() {
            data.push(self.data[offset]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                offset += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                offset -= src_strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_parts(out_shape, data))
    }

    /// Standard matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        // Four output rows at a time share each pass over a row of `rhs`;
        // every entry is still accumulated over `k` in ascending order.
        let mut blocks = out.chunks_exact_mut(4 * n);
        let mut i = 0;
        for block in &mut blocks {
            let (r0, rest) = block.split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            for p in 0..k {
                let a0 = self.data[i * k + p];
                let a1 = self.data[(i + 1) * k + p];
                let a2 = self.data[(i + 2) * k + p];
                let a3 = self.data[(i + 3) * k + p];
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for j in 0..n {
                    let b = b_row[j];
                    r0[j] += a0 * b;
                    r1[j] += a1 * b;
                    r2[j] += a2 * b;
                    r3[j] += a3 * b;
                }
            }
            i += 4;
        }
        for row in blocks.into_remainder().chunks_exact_mut(n.max(1)) {
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
            i += 1;
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `self · rhsᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul_nt")?;
        let (n, k2) = rhs.dims2("matmul_nt")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                out.push(dot(a_row, b_row));
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        let (k, m) = self.dims2("matmul_tn")?;
        let (k2, n) = rhs.dims2("matmul_tn")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_tn",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &rhs.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, rhs: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != rhs.shape {
            return Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// Checks that `rhs` broadcasts into `self`: trailing axes aligned,
    /// each either matching or 1.
    pub(crate) fn check_broadcast(&self, rhs: &Self, op: &'static str) -> Result<()> {
        let err = || Error::Shape {
            op,
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        };
        if rhs.rank() > self.rank() {
            return Err(err());
        }
        let offset = self.rank() - rhs.rank();
        for (i, &d) in rhs.shape.iter().enumerate() {
            if d != 1 && d != self.shape[offset + i] {
                return Err(err());
            }
        }
        Ok(())
    }

    /// Maps each flat index of `self` to the flat index of the broadcast `rhs`.
    fn broadcast_index_map(&self, rhs_shape: &[usize]) -> Vec<usize> {
        let rank = self.rank();
        let offset = rank - rhs_shape.len();
        let rhs_strides = strides_of(rhs_shape);
        let mut strides = vec![0usize; rank];
        for (i, &d) in rhs_shape.iter().enumerate() {
            if d != 1 {
                strides[offset + i] = rhs_strides[i];
            }
        }
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        let mut pos = 0usize;
        for _ in 0..self.numel() {
            out.push(pos);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                pos += strides[ax];
                if idx[ax] < self.shape[ax] {
                    break;
                }
                pos -= strides[ax] * self.shape[ax];
                idx[ax] = 0;
            }
        }
        out
    }

    pub(crate) fn broadcast_zip(
        &self,
        rhs: &Self,
        op: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Self> {
        self.check_broadcast(rhs, op)?;
        if self.shape == rhs.shape {
            return self.zip_map(rhs, op, f);
        }
        let n = rhs.numel();
        let suffix = self.shape.ends_with(trim_leading_ones(&rhs.shape));
        let data: Vec<S> = if n == 1 {
            let b = rhs.data[0];
            self.data.iter().map(|&a| f(a, b)).collect()
        } else if suffix {
            self.data
                .chunks_exact(n)
                .flat_map(|chunk| chunk.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)))
                .collect()
        } else {
            let map = self.broadcast_index_map(&rhs.shape);
            self.data
                .iter()
                .zip(map)
                .map(|(&a, j)| f(a, rhs.data[j]))
                .collect()
        };
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Sums `self` down to `shape`, the inverse of broadcasting `shape` into `self`.
    pub(crate) fn reduce_to(&self, shape: &[usize]) -> Self {
        if self.shape == shape {
            return self.clone();
        }
        let n = numel_of(shape);
        let mut out = vec![S::zero(); n];
        if n == 1 {
            out[0] = self.data.iter().copied().sum();
        } else if self.shape.ends_with(trim_leading_ones(shape)) {
            for chunk in self.data.chunks_exact(n) {
                for (o, &x) in out.iter_mut().zip(chunk) {
                    *o += x;
                }
            }
        } else {
            for (&x, j) in self.data.iter().zip(self.broadcast_index_map(shape)) {
                out[j] += x;
            }
        }
        Tensor::from_parts(shape.to_vec(), out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.broadcast_zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.broadcast_zip(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        self.broadcast_zip(rhs, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    pub(crate) fn add_assign(&mut self, rhs: &Self) {
        debug_assert_eq!(self.shape, rhs.shape);
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::from_usize(self.numel()).unwrap()
    }

    pub fn norm_sq(&self) -> S {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> Result<S> {
        let d = self.zip_map(rhs, "max_abs_diff", |a, b| (a - b).abs())?;
        Ok(d.data.iter().fold(S::zero(), |m, &x| if x > m || x.is_nan() { x } else { m }))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (_, n) = self.dims2("softmax_rows")?;
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        let (m, n) = self.dims2("rows")?;
        if start >= end || end > m {
            return Err(Error::contract(format!(
                "row range {start}..{end} invalid for {m} rows"
            )));
        }
        Ok(Tensor::from_parts(
            vec![end - start, n],
            self.data[start * n..end * n].to_vec(),
        ))
    }

    pub fn cols(&self, start: usize, end: usize) -> Result<Self> {
        let (m, n) = self.dims2("cols")?;
        if start >= end || end > n {
            return Err(Error::contract(format!(
                "column range {start}..{end} invalid for {n} columns"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for row in self.data.chunks_exact(n) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(Tensor::from_parts(vec![m, w], data))
    }

    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, n) = first.dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (m, n2) = p.dims2("concat_rows")?;
            if n2 != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            rows += m;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(vec![rows, n], data))
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let (m, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (m2, n) = p.dims2("concat_cols")?;
            if m2 != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor::from_parts(vec![m, total], data))
    }
}

#[inline]
fn trim_leading_ones(shape: &[usize]) -> &[usize] {
    let lead = shape.iter().take_while(|&&d| d == 1).count();
    &shape[lead..]
}

pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_loop(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        Tensor::from_fn(&[m, n], |idx| {
            let (i, j) = (idx / n, idx % n);
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(&[i, p]) * b.at(&[p, j]);
            }
            acc
        })
    }

    #[test]
    fn matmul_small_cases() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, triple_loop(&a, &b));
        assert_eq!(c.data(), &[2.0, 4.0]);

        let b = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.5 - 2.0);
        assert_eq!(Tensor::eye(3).matmul(&b).unwrap(), b);
        assert_eq!(
            Tensor::<f64>::zeros(&[2, 3]).matmul(&b).unwrap(),
            Tensor::zeros(&[2, 4])
        );
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::from_fn(&[3, 5], |i| (i as f64).sin());
        let b = Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.3).cos());
        let nt = a.matmul_nt(&b).unwrap();
        assert_eq!(nt, a.matmul(&b.transpose().unwrap()).unwrap());
        let c = Tensor::from_fn(&[3, 2], |i| i as f64 - 1.5);
        let tn = a.matmul_tn(&c).unwrap();
        assert!(tn.max_abs_diff(&a.transpose().unwrap().matmul(&c).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::new(vec![1, 2], vec![0.0, 3f64.ln()]).unwrap();
        let s = t.softmax_rows().unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);

        let u = Tensor::<f64>::full(&[1, 5], 7.0).softmax_rows().unwrap();
        assert!(u.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));

        let big = Tensor::<f64>::new(vec![1, 3], vec![0.0, 1e4, -3.0]).unwrap();
        let s = big.softmax_rows().unwrap();
        assert!((s.data()[1] - 1.0).abs() < 1e-9);
        assert!(s.data()[0] < 1e-9 && s.data()[2] < 1e-9);
    }

    #[test]
    fn broadcast_rules() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f64);
        let row = Tensor::new(vec![3], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(a.add(&row).unwrap().data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let col = Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();
        assert_eq!(a.mul(&col).unwrap().data(), &[0.0, 1.0, 2.0, -3.0, -4.0, -5.0]);
        let bad = Tensor::<f64>::zeros(&[2]);
        assert!(a.add(&bad).is_err());
        let summed = a.reduce_to(&[2, 1]);
        assert_eq!(summed.data(), &[3.0, 12.0]);
    }

    #[test]
    fn permute_inverse_is_identity() {
        let t = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f64);
        let p = t.permute(&[3, 0, 2, 1]).unwrap();
        assert_eq!(p.shape(), &[5, 2, 4, 3]);
        // inverse of [3,0,2,1] is [1,3,2,0]
        assert_eq!(p.permute(&[1, 3, 2, 0]).unwrap(), t);
        assert_eq!(p.at(&[4, 1, 2, 0]), t.at(&[1, 0, 2, 4]));
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
    }
}

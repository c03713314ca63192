use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tensor, Var};

/// Which axes of a `T×H×W×D` feature are fused into each branch's tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AxisLayout {
    /// Temporal-spatial branch plus channel branch ("TS+C").
    TsPlusC,
    /// Separate temporal, spatial and channel branches ("T+S+C").
    TPlusSPlusC,
    /// Temporal branch plus fused spatial-channel branch ("T+SC").
    TPlusSc,
    /// One branch over everything ("TSC").
    Tsc,
}

impl AxisLayout {
    pub const ALL: [AxisLayout; 4] = [
        AxisLayout::TsPlusC,
        AxisLayout::TPlusSPlusC,
        AxisLayout::TPlusSc,
        AxisLayout::Tsc,
    ];

    pub fn branches(self) -> &'static [BranchAxes] {
        match self {
            AxisLayout::TsPlusC => &[BranchAxes::Ts, BranchAxes::C],
            AxisLayout::TPlusSPlusC => &[BranchAxes::T, BranchAxes::S, BranchAxes::C],
            AxisLayout::TPlusSc => &[BranchAxes::T, BranchAxes::Sc],
            AxisLayout::Tsc => &[BranchAxes::Tsc],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AxisLayout::TsPlusC => "TS+C",
            AxisLayout::TPlusSPlusC => "T+S+C",
            AxisLayout::TPlusSc => "T+SC",
            AxisLayout::Tsc => "TSC",
        }
    }
}

impl fmt::Display for AxisLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AxisLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        match norm.as_str() {
            "TS+C" => Ok(AxisLayout::TsPlusC),
            "T+S+C" => Ok(AxisLayout::TPlusSPlusC),
            "T+SC" => Ok(AxisLayout::TPlusSc),
            "TSC" => Ok(AxisLayout::Tsc),
            _ => Err(Error::contract(format!("unknown axis layout {s:?}"))),
        }
    }
}

/// Token convention of one branch. Every variant is a permutation of the
/// feature axes followed by a flatten into a `tokens × dim` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchAxes {
    /// `D` tokens of dimension `T·H·W`.
    Ts,
    /// `T·H·W` tokens of dimension `D`.
    C,
    /// `T` tokens of dimension `H·W·D`.
    T,
    /// `H·W` tokens of dimension `T·D`.
    S,
    /// `H·W·D` tokens of dimension `T`.
    Sc,
    /// One token of dimension `T·H·W·D`.
    Tsc,
}

impl BranchAxes {
    pub fn name(self) -> &'static str {
        match self {
            BranchAxes::Ts => "ts",
            BranchAxes::C => "c",
            BranchAxes::T => "t",
            BranchAxes::S => "s",
            BranchAxes::Sc => "sc",
            BranchAxes::Tsc => "tsc",
        }
    }

    /// Axis order (into `[T, H, W, D]`) applied before flattening.
    fn permutation(self) -> [usize; 4] {
        match self {
            BranchAxes::Ts => [3, 0, 1, 2],
            BranchAxes::S => [1, 2, 0, 3],
            BranchAxes::Sc => [1, 2, 3, 0],
            BranchAxes::C | BranchAxes::T | BranchAxes::Tsc => [0, 1, 2, 3],
        }
    }

    /// `(token count, token dimension)` for a feature of extents `[T, H, W, D]`.
    pub fn token_shape(self, dims: [usize; 4]) -> (usize, usize) {
        let [t, h, w, d] = dims;
        match self {
            BranchAxes::Ts => (d, t * h * w),
            BranchAxes::C => (t * h * w, d),
            BranchAxes::T => (t, h * w * d),
            BranchAxes::S => (h * w, t * d),
            BranchAxes::Sc => (h * w * d, t),
            BranchAxes::Tsc => (1, t * h * w * d),
        }
    }

    fn permuted_dims(self, dims: [usize; 4]) -> [usize; 4] {
        self.permutation().map(|a| dims[a])
    }

    fn inverse_permutation(self) -> [usize; 4] {
        let p = self.permutation();
        let mut inv = [0; 4];
        for (i, &a) in p.iter().enumerate() {
            inv[a] = i;
        }
        inv
    }

    pub fn tokenize<S: Scalar>(self, v: &Tensor<S>) -> Result<Tensor<S>> {
        let dims = feature_dims(v.shape())?;
        let (n, d) = self.token_shape(dims);
        v.permute(&self.permutation())?.reshape(&[n, d])
    }

    pub fn untokenize<S: Scalar>(self, tokens: &Tensor<S>, dims: [usize; 4]) -> Result<Tensor<S>> {
        tokens
            .reshape(&self.permuted_dims(dims))?
            .permute(&self.inverse_permutation())
    }

    pub fn tokenize_var<'t, S: Scalar>(self, v: Var<'t, S>) -> Result<Var<'t, S>> {
        let dims = feature_dims(&v.shape())?;
        let (n, d) = self.token_shape(dims);
        let perm = self.permutation();
        let permuted = if perm == [0, 1, 2, 3] { v } else { v.permute(&perm)? };
        permuted.reshape(&[n, d])
    }

    pub fn untokenize_var<'t, S: Scalar>(
        self,
        tokens: Var<'t, S>,
        dims: [usize; 4],
    ) -> Result<Var<'t, S>> {
        let reshaped = tokens.reshape(&self.permuted_dims(dims))?;
        let inv = self.inverse_permutation();
        if inv == [0, 1, 2, 3] {
            Ok(reshaped)
        } else {
            reshaped.permute(&inv)
        }
    }
}

pub(crate) fn feature_dims(shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [t, h, w, d] => Ok([t, h, w, d]),
        _ => Err(Error::contract(format!(
            "video feature must be T×H×W×D, got {shape:?}"
        ))),
    }
}

/// Splits `v` into the token matrices of every branch of `layout`.
pub fn tokens_for_layout<S: Scalar>(v: &Tensor<S>, layout: AxisLayout) -> Result<Vec<Tensor<S>>> {
    if !v.is_finite() {
        return Err(Error::numeric("video feature passed to tokenization"));
    }
    layout.branches().iter().map(|b| b.tokenize(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    #[test]
    fn ts_c_shapes_on_concrete_feature() {
        let v = Tensor::<f64>::from_fn(&[2, 2, 2, 3], |i| i as f64);
        let toks = tokens_for_layout(&v, AxisLayout::TsPlusC).unwrap();
        assert_eq!(toks[0].shape(), &[3, 8]);
        assert_eq!(toks[1].shape(), &[8, 3]);
        // channel 1 of every (t, h, w) position, temporal-spatial order
        let expect: Vec<f64> = (0..8).map(|p| (p * 3 + 1) as f64).collect();
        assert_eq!(toks[0].rows(1, 2).unwrap().data(), expect.as_slice());
    }

    #[test]
    fn all_layout_shapes() {
        let dims = [2, 3, 4, 5];
        let v = Tensor::<f64>::zeros(&dims);
        let shapes = |l| {
            tokens_for_layout(&v, l)
                .unwrap()
                .iter()
                .map(|t| t.shape().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(shapes(AxisLayout::TPlusSPlusC), vec![vec![2, 60], vec![12, 10], vec![24, 5]]);
        assert_eq!(shapes(AxisLayout::TPlusSc), vec![vec![2, 60], vec![60, 2]]);
        assert_eq!(shapes(AxisLayout::Tsc), vec![vec![1, 120]]);
    }

    #[test]
    fn degenerate_feature_is_single_token() {
        let v = Tensor::<f64>::full(&[1, 1, 1, 1], 0.25);
        for layout in AxisLayout::ALL {
            for t in tokens_for_layout(&v, layout).unwrap() {
                assert_eq!(t.shape(), &[1, 1]);
                assert_eq!(t.data(), &[0.25]);
            }
        }
    }

    #[test]
    fn round_trip_every_layout() {
        let mut rng = RngStream::new(5, 5);
        let dims = [3, 2, 4, 5];
        let v: Tensor<f64> = rng.gaussian_tensor(&dims, 1.0);
        for layout in AxisLayout::ALL {
            for b in layout.branches() {
                let back = b.untokenize(&b.tokenize(&v).unwrap(), dims).unwrap();
                assert_eq!(back, v, "{b:?}");
            }
        }
    }

    #[test]
    fn parse_layouts() {
        for l in AxisLayout::ALL {
            assert_eq!(l.as_str().parse::<AxisLayout>().unwrap(), l);
        }
        assert!(matches!("T+X".parse::<AxisLayout>(), Err(Error::Contract(_))));
    }
}

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function evaluated on an
/// inference tape.
pub fn finite_difference<S, F>(f: &F, x: &Tensor<S>, eps: S) -> Result<Tensor<S>>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    let eval = |point: Tensor<S>| -> Result<S> {
        let tape = Tape::inference();
        let out = f(&tape, tape.constant(point))?;
        let value = out.value().item()?;
        if !value.is_finite() {
            return Err(Error::numeric("grad_check: function value"));
        }
        Ok(value)
    };
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        grad.push((eval(plus)? - eval(minus)?) / (eps + eps));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Pins a closure to the higher-ranked signature used by [`grad_check`];
/// needed when the closure is bound to a variable before use.
pub fn objective<S, F>(f: F) -> F
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    f
}

/// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error<S: Scalar>(analytic: &Tensor<S>, numeric: &Tensor<S>) -> Result<S> {
    let diff = analytic.zip_map(numeric, "grad_check", |a, n| {
        (a - n).abs() / S::one().max(n.abs())
    })?;
    Ok(diff.data().iter().copied().fold(S::zero(), S::max))
}

/// Compares the tape gradient of `f` at `x` with central differences.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, eps: S) -> Result<S>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, Var<'t, S>) -> Result<Var<'t, S>>,
{
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let out = f(&tape, xv)?;
    if !out.value().item()?.is_finite() {
        return Err(Error::numeric("grad_check: function value"));
    }
    let analytic = tape.backward(out)?.wrt(xv);
    let numeric = finite_difference(&f, x, eps)?;
    relative_error(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::RngStream;

    #[test]
    fn squared_norm_is_exact() {
        let mut rng = RngStream::new(1, 0);
        let x: Tensor<f64> = rng.gaussian_tensor(&[3, 4], 1.0);
        let err = grad_check(|_, v| Ok(v.square().sum()), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::<f64>::ones(&[5]);
        let err = grad_check(
            |t, _| Ok(t.constant(Tensor::scalar(3.0))),
            &x,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_value_is_reported() {
        let x = Tensor::<f64>::ones(&[2]);
        let res = grad_check(|_, v| Ok(v.scale(f64::INFINITY).sum()), &x, 1e-5);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}

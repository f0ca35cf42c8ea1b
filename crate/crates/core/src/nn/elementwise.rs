use std::f64::consts::PI;

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

fn same_shape<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FmsrError::shape(op, shape_str(a.shape()), shape_str(b.shape())));
    }
    Ok(())
}

pub fn add<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("add", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x + y);
    Ok(tape.record(out, &[a, b], |g, needs| {
        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
    }))
}

pub fn sub<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("sub", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x - y);
    Ok(tape.record(out, &[a, b], |g, needs| {
        vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|x| -x))]
    }))
}

/// Hadamard product.
pub fn mul<T: Scalar>(tape: &Tape<T>, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    same_shape("mul", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x * y);
    let (av, bv) = (a.shared(), b.shared());
    Ok(tape.record(out, &[a, b], move |g, needs| {
        vec![
            needs[0].then(|| g.zip_map(&bv, |g, y| g * y)),
            needs[1].then(|| g.zip_map(&av, |g, x| g * x)),
        ]
    }))
}

/// `x · alpha` for a single-element `alpha`.
pub fn scale<T: Scalar>(tape: &Tape<T>, x: &Var<T>, alpha: &Var<T>) -> Result<Var<T>> {
    if alpha.value().len() != 1 {
        return Err(FmsrError::shape("scale", "[1]", shape_str(alpha.shape())));
    }
    let a = alpha.value().data()[0];
    let out = x.value().scale(a);
    let xv = x.shared();
    let ashape = alpha.shape().to_vec();
    Ok(tape.record(out, &[x, alpha], move |g, needs| {
        vec![
            needs[0].then(|| g.scale(a)),
            needs[1].then(|| {
                let s = g.data().iter().zip(xv.data()).map(|(&g, &x)| g * x).sum();
                Tensor::full(&ashape, s)
            }),
        ]
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    /// Exact erf form.
    Gelu,
    Relu,
    Sigmoid,
    Softplus,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Gelu => T::of(0.5) * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf()),
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => {
                if x > T::of(20.0) {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Gelu => {
                let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
                let pdf = (-(x * x) * T::of(0.5)).exp() / T::of((2.0 * PI).sqrt());
                cdf + x * pdf
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

pub fn activate<T: Scalar>(tape: &Tape<T>, x: &Var<T>, act: Activation) -> Var<T> {
    let out = x.value().map(|v| act.apply(v));
    let xv = x.shared();
    tape.record(out, &[x], move |g, _| {
        vec![Some(g.zip_map(&xv, |g, x| g * act.derivative(x)))]
    })
}

/// `Σ x ⊙ weights` with constant weights; used to project outputs to a scalar.
pub fn weighted_sum<T: Scalar>(tape: &Tape<T>, x: &Var<T>, weights: &Tensor<T>) -> Result<Var<T>> {
    weights.expect_shape("weighted_sum", x.shape())?;
    let s = x.value().data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
    let w = weights.clone();
    Ok(tape.record(Tensor::scalar(s), &[x], move |g, _| {
        vec![Some(w.scale(g.data()[0]))]
    }))
}

/// Mean absolute error over all elements.
pub fn l1_loss<T: Scalar>(tape: &Tape<T>, pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    same_shape("l1_loss", pred, target)?;
    let n = T::of(pred.value().len() as f64);
    let diff = pred.value().zip_map(target.value(), |p, t| p - t);
    let loss = diff.data().iter().map(|d| d.abs()).sum::<T>() / n;
    Ok(tape.record(Tensor::scalar(loss), &[pred, target], move |g, needs| {
        let s = g.data()[0] / n;
        let sign = diff.map(|d| {
            if d > T::zero() {
                s
            } else if d < T::zero() {
                -s
            } else {
                T::zero()
            }
        });
        vec![needs[0].then(|| sign.clone()), needs[1].then(|| sign.map(|x| -x))]
    }))
}

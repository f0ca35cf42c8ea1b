//! Upscaling operators and dihedral self-ensembling.

use crate::data::{bicubic_resize, dihedral, dihedral_inverse};
use crate::error::{FmsrError, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// Maps `[B, 3, h, w]` in `[0, 1]` to `[B, 3, s·h, s·w]` in `[0, 1]`.
pub trait Upscaler<T: Scalar> {
    fn scale(&self) -> usize;
    fn upscale(&self, lr: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Upscaler<T> for Model<T> {
    fn scale(&self) -> usize {
        Model::scale(self)
    }

    fn upscale(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer(lr)
    }
}

/// Plain bicubic interpolation, clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct Bicubic(pub usize);

impl<T: Scalar> Upscaler<T> for Bicubic {
    fn scale(&self) -> usize {
        self.0
    }

    fn upscale(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = lr.dims4("bicubic upscale")?;
        let s = self.0;
        let flat = lr.clone().reshape(&[b * c, h, w])?;
        let up = bicubic_resize(&flat, s * h, s * w, false)?;
        up.map(|v| v.max(T::zero()).min(T::one())).reshape(&[b, c, s * h, s * w])
    }
}

/// Averages an upscaler over the eight flips and quarter turns of its input.
pub struct SelfEnsemble<'a, U>(pub &'a U);

impl<T: Scalar, U: Upscaler<T>> Upscaler<T> for SelfEnsemble<'_, U> {
    fn scale(&self) -> usize {
        self.0.scale()
    }

    fn upscale(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        self_ensemble(self.0, lr)
    }
}

/// `(1/8) Σ_k D_k⁻¹ f(D_k x)` over the dihedral group acting on `[B, 3, h, w]`.
pub fn self_ensemble<T: Scalar, U: Upscaler<T> + ?Sized>(up: &U, lr: &Tensor<T>) -> Result<Tensor<T>> {
    if lr.ndim() != 4 {
        return Err(FmsrError::shape("self_ensemble", "[B, 3, h, w]", shape_str(lr.shape())));
    }
    let mut acc: Option<Tensor<T>> = None;
    for k in 0..8 {
        let out = dihedral_inverse(&up.upscale(&dihedral(lr, k))?, k);
        match acc.as_mut() {
            Some(a) => a.add_assign(&out),
            None => acc = Some(out),
        }
    }
    Ok(acc.unwrap().scale(T::of(0.125)))
}

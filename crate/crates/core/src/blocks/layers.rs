use crate::error::Result;
use crate::flops::{self, FlopCounter};
use crate::nn::{conv2d, layer_norm_channel, scale};
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Stride-1, same-padded convolution with bias. Dense or depthwise.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub w: Param<T>,
    pub b: Param<T>,
    pub groups: usize,
}

impl<T: Scalar> Conv<T> {
    pub fn init(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize, groups: usize) -> Self {
        let fan_in = cin / groups * k * k;
        pb.scoped(name, |pb| Conv {
            w: pb.fan_in("w", &[cout, cin / groups, k, k], fan_in),
            b: pb.fan_in("b", &[cout], fan_in),
            groups,
        })
    }

    /// Pointwise `cin → cout` map, i.e. a per-pixel linear layer.
    pub fn pointwise(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize) -> Self {
        Self::init(pb, name, cin, cout, 1, 1)
    }

    pub fn depthwise(pb: &mut ParamBuilder, name: &str, c: usize, k: usize) -> Self {
        Self::init(pb, name, c, c, k, c)
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        conv2d(tape, x, &self.w, Some(self.b.var()), self.groups)
    }

    pub fn cin(&self) -> usize {
        self.w.shape()[1] * self.groups
    }

    pub fn cout(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn zero(&mut self) {
        self.w.fill(T::zero());
        self.b.fill(T::zero());
    }

    /// `W = I + noise`, zero bias. Requires `cin == cout`, dense 1×1.
    pub fn set_identity_plus(&mut self, noise: &Tensor<T>) {
        let c = self.cout();
        assert!(self.kernel() == 1 && self.groups == 1 && self.cin() == c);
        let mut w = noise.clone();
        for i in 0..c {
            w.data_mut()[i * c + i] += T::one();
        }
        self.w.set(w);
        self.b.fill(T::zero());
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, name: &str, h: usize, w: usize) {
        fc.add(name, flops::conv(self.cin(), self.cout(), self.kernel(), self.groups, h, w));
    }
}

impl<T: Scalar> Module<T> for Conv<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        crate::visit_fields!(self, f; w, b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        crate::visit_fields_mut!(self, f; w, b);
    }
}

/// Channel layer normalization with affine parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gain: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn init(pb: &mut ParamBuilder, name: &str, c: usize) -> Self {
        pb.scoped(name, |pb| LayerNorm {
            gain: pb.constant("gain", &[c], 1.0),
            bias: pb.constant("bias", &[c], 0.0),
        })
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        layer_norm_channel(tape, x, &self.gain, &self.bias)
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, name: &str, h: usize, w: usize) {
        // mean, variance, standardize, affine
        fc.add(name, 4 * (self.gain.numel() * h * w) as u64);
    }
}

impl<T: Scalar> Module<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        crate::visit_fields!(self, f; gain, bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        crate::visit_fields_mut!(self, f; gain, bias);
    }
}

/// A single trainable scalar multiplier.
#[derive(Clone, Debug)]
pub struct Gain<T> {
    pub alpha: Param<T>,
}

impl<T: Scalar> Gain<T> {
    pub fn init(pb: &mut ParamBuilder, name: &str, value: f64) -> Self {
        Gain {
            alpha: pb.constant(name, &[1], value),
        }
    }

    pub fn get(&self) -> T {
        self.alpha.tensor().data()[0]
    }

    pub fn set(&mut self, v: T) {
        self.alpha.fill(v);
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        scale(tape, x, &self.alpha)
    }
}

impl<T: Scalar> Module<T> for Gain<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.alpha);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.alpha);
    }
}

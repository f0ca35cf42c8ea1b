use super::layers::Conv;
use super::BlockConfig;
use crate::error::Result;
use crate::flops::FlopCounter;
use crate::nn::{activate, global_avg_pool, mul, mul_channel, narrow, Activation};
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Squeeze-excitation channel attention built from 1×1 convolutions.
#[derive(Clone, Debug)]
pub struct ChannelAttention<T> {
    pub reduce: Conv<T>,
    pub expand: Conv<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn init(pb: &mut ParamBuilder, c: usize, reduction: usize) -> Self {
        let mid = c / reduction;
        ChannelAttention {
            reduce: Conv::pointwise(pb, "reduce", c, mid),
            expand: Conv::pointwise(pb, "expand", mid, c),
        }
    }

    /// Per-channel factors `sigmoid(W2·ReLU(W1·mean))`, shape `[B, c, 1, 1]`.
    pub fn weights(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = global_avg_pool(tape, x)?;
        let s = activate(tape, &self.reduce.forward(tape, &s)?, Activation::Relu);
        Ok(activate(tape, &self.expand.forward(tape, &s)?, Activation::Sigmoid))
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let s = self.weights(tape, x)?;
        mul_channel(tape, x, &s)
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, h: usize, w: usize) {
        let c = self.reduce.cin();
        fc.add("pool", (c * h * w) as u64);
        self.reduce.count_flops(fc, "reduce", 1, 1);
        self.expand.count_flops(fc, "expand", 1, 1);
        fc.add("scale", (c * h * w) as u64);
    }
}

impl<T: Scalar> Module<T> for ChannelAttention<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_mut(f);
        self.expand.visit_mut(f);
    }
}

/// Hybrid gate: a channel-attention coordinate branch modulated by a
/// pixel-wise GELU gate.
#[derive(Clone, Debug)]
pub struct Hgm<T> {
    pub expand: Conv<T>,
    pub coor_conv1: Conv<T>,
    pub coor_dw3: Conv<T>,
    pub ca: ChannelAttention<T>,
    pub gate_lin: Conv<T>,
    pub out: Conv<T>,
}

impl<T: Scalar> Hgm<T> {
    pub fn init(pb: &mut ParamBuilder, cfg: &BlockConfig) -> Self {
        let c = cfg.channels;
        Hgm {
            expand: Conv::pointwise(pb, "expand", c, 2 * c),
            coor_conv1: Conv::pointwise(pb, "coor_conv1", c, c),
            coor_dw3: Conv::depthwise(pb, "coor_dw3", c, 3),
            ca: pb.scoped("ca", |pb| ChannelAttention::init(pb, c, cfg.reduction)),
            gate_lin: Conv::pointwise(pb, "gate_lin", c, c),
            out: Conv::pointwise(pb, "out", c, c),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let c = self.out.cout();
        let e = self.expand.forward(tape, x)?;
        let x1 = narrow(tape, &e, 1, 0, c)?;
        let x2 = narrow(tape, &e, 1, c, c)?;
        let coor = self.coor_dw3.forward(tape, &self.coor_conv1.forward(tape, &x1)?)?;
        let coor = self.ca.forward(tape, &coor)?;
        let m = activate(tape, &self.gate_lin.forward(tape, &x2)?, Activation::Gelu);
        self.out.forward(tape, &mul(tape, &m, &coor)?)
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, h: usize, w: usize) {
        let c = self.out.cout();
        self.expand.count_flops(fc, "expand", h, w);
        self.coor_conv1.count_flops(fc, "coor_conv1", h, w);
        self.coor_dw3.count_flops(fc, "coor_dw3", h, w);
        fc.scoped("ca", |fc| self.ca.count_flops(fc, h, w));
        self.gate_lin.count_flops(fc, "gate_lin", h, w);
        fc.add("gelu", (c * h * w) as u64);
        fc.add("product", (c * h * w) as u64);
        self.out.count_flops(fc, "out", h, w);
    }
}

impl<T: Scalar> Module<T> for Hgm<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.expand.visit(f);
        self.coor_conv1.visit(f);
        self.coor_dw3.visit(f);
        self.ca.visit(f);
        self.gate_lin.visit(f);
        self.out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.expand.visit_mut(f);
        self.coor_conv1.visit_mut(f);
        self.coor_dw3.visit_mut(f);
        self.ca.visit_mut(f);
        self.gate_lin.visit_mut(f);
        self.out.visit_mut(f);
    }
}

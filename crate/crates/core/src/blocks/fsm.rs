use super::layers::Conv;
use super::FsmVariant;
use crate::error::Result;
use crate::flops::{self, FlopCounter};
use crate::nn::{activate, irfft2, rfft2, spectrum_width, Activation};
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Frequency selection: real FFT, a pointwise map on the `2c` stacked
/// real/imaginary channels, inverse FFT.
#[derive(Clone, Debug)]
pub struct Fsm<T> {
    pub variant: FsmVariant,
    pub conv1: Option<Conv<T>>,
    pub conv2: Option<Conv<T>>,
}

const INIT_NOISE: f64 = 0.1;

impl<T: Scalar> Fsm<T> {
    /// Convolutions start at `I + 0.1·U(±1/√2c)` with zero bias.
    pub fn init(pb: &mut ParamBuilder, c: usize, variant: FsmVariant) -> Self {
        let c2 = 2 * c;
        let near_identity = |pb: &mut ParamBuilder, name: &str| {
            let mut conv = Conv::pointwise(pb, name, c2, c2);
            let bound = INIT_NOISE / (c2 as f64).sqrt();
            let noise = Tensor::rand_uniform(&[c2, c2, 1, 1], -bound, bound, pb.rng());
            conv.set_identity_plus(&noise);
            conv
        };
        let (conv1, conv2) = match variant {
            FsmVariant::A => (Some(near_identity(pb, "conv1")), None),
            FsmVariant::B => (None, None),
            FsmVariant::C => (Some(near_identity(pb, "conv1")), Some(near_identity(pb, "conv2"))),
        };
        Fsm { variant, conv1, conv2 }
    }

    /// Map applied to the stacked spectrum `[B, 2c, H, W/2+1]`.
    pub fn select(&self, tape: &Tape<T>, z: &Var<T>) -> Result<Var<T>> {
        match (self.variant, &self.conv1, &self.conv2) {
            (FsmVariant::A, Some(c1), _) => c1.forward(tape, z),
            (FsmVariant::B, _, _) => Ok(activate(tape, z, Activation::Relu)),
            (FsmVariant::C, Some(c1), Some(c2)) => {
                let h = activate(tape, &c1.forward(tape, z)?, Activation::Gelu);
                c2.forward(tape, &h)
            }
            _ => unreachable!("FSM weights do not match variant {}", self.variant),
        }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let w = x.value().dims4("fsm")?[3];
        let z = rfft2(tape, x)?;
        let z = self.select(tape, &z)?;
        irfft2(tape, &z, w)
    }

    /// The last layer of the map, zeroed by residual-safe initialization.
    pub fn final_conv_mut(&mut self) -> Option<&mut Conv<T>> {
        match self.variant {
            FsmVariant::A => self.conv1.as_mut(),
            FsmVariant::B => None,
            FsmVariant::C => self.conv2.as_mut(),
        }
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, c: usize, h: usize, w: usize) {
        let wf = spectrum_width(w);
        fc.add("rfft", c as u64 * flops::fft2(h, w));
        if let Some(c1) = &self.conv1 {
            c1.count_flops(fc, "conv1", h, wf);
        }
        let spec = (2 * c * h * wf) as u64;
        match self.variant {
            FsmVariant::A => {}
            FsmVariant::B => fc.add("relu", spec),
            FsmVariant::C => fc.add("gelu", spec),
        }
        if let Some(c2) = &self.conv2 {
            c2.count_flops(fc, "conv2", h, wf);
        }
        fc.add("irfft", c as u64 * flops::fft2(h, w));
    }
}

impl<T: Scalar> Module<T> for Fsm<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for c in self.conv1.iter().chain(self.conv2.iter()) {
            c.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for c in self.conv1.iter_mut().chain(self.conv2.iter_mut()) {
            c.visit_mut(f);
        }
    }
}

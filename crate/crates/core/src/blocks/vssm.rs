use super::layers::{Conv, LayerNorm};
use super::BlockConfig;
use crate::error::Result;
use crate::flops::{self, FlopCounter};
use crate::nn::{activate, mul, Activation};
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::ssm::{ss2d, ScanParams, StateConfig};
use crate::tape::{Tape, Var};

/// Gated wrapper around the 2D selective scan.
///
/// `proj_out( LN(ss2d(SiLU(dw(proj_in x)))) ⊙ SiLU(gate x) )`
#[derive(Clone, Debug)]
pub struct Vssm<T> {
    pub proj_in: Conv<T>,
    pub dwconv: Conv<T>,
    pub scan: ScanParams<T>,
    pub ln_scan: LayerNorm<T>,
    pub gate: Conv<T>,
    pub proj_out: Conv<T>,
    pub state: StateConfig,
}

impl<T: Scalar> Vssm<T> {
    pub fn init(pb: &mut ParamBuilder, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        let state = cfg.state()?;
        let di = state.d_inner;
        Ok(Vssm {
            proj_in: Conv::pointwise(pb, "proj_in", c, di),
            dwconv: Conv::depthwise(pb, "dwconv", di, cfg.dw_kernel),
            scan: pb.scoped("scan", |pb| ScanParams::init(pb, &state)),
            ln_scan: LayerNorm::init(pb, "ln_scan", di),
            gate: Conv::pointwise(pb, "gate", c, di),
            proj_out: Conv::pointwise(pb, "proj_out", di, c),
            state,
        })
    }

    /// Scan branch before gating.
    pub fn scan_branch(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let h = self.proj_in.forward(tape, x)?;
        let h = self.dwconv.forward(tape, &h)?;
        let h = activate(tape, &h, Activation::Silu);
        let h = ss2d(tape, &h, &self.scan, &self.state)?;
        self.ln_scan.forward(tape, &h)
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let h1 = self.scan_branch(tape, x)?;
        let h2 = activate(tape, &self.gate.forward(tape, x)?, Activation::Silu);
        self.proj_out.forward(tape, &mul(tape, &h1, &h2)?)
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, h: usize, w: usize) {
        let hw = h * w;
        let di = self.state.d_inner;
        let k = self.state.num_directions;
        let (dr, ds) = (self.state.dt_rank, self.state.d_state);
        self.proj_in.count_flops(fc, "proj_in", h, w);
        self.dwconv.count_flops(fc, "dwconv", h, w);
        fc.add("silu_in", (di * hw) as u64);
        fc.scoped("ss2d", |fc| {
            fc.add("x_proj", (k * self.state.proj_width() * di * hw) as u64);
            fc.add("dt_proj", (k * (di * dr + di) * hw) as u64);
            fc.add("softplus", (k * di * hw) as u64);
            fc.add("scan", k as u64 * flops::scan(di, hw, ds));
            fc.add("merge", (k * di * hw) as u64);
        });
        self.ln_scan.count_flops(fc, "ln_scan", h, w);
        self.gate.count_flops(fc, "gate", h, w);
        fc.add("silu_gate", (di * hw) as u64);
        fc.add("product", (di * hw) as u64);
        self.proj_out.count_flops(fc, "proj_out", h, w);
    }
}

impl<T: Scalar> Module<T> for Vssm<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.proj_in.visit(f);
        self.dwconv.visit(f);
        self.scan.visit(f);
        self.ln_scan.visit(f);
        self.gate.visit(f);
        self.proj_out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.proj_in.visit_mut(f);
        self.dwconv.visit_mut(f);
        self.scan.visit_mut(f);
        self.ln_scan.visit_mut(f);
        self.gate.visit_mut(f);
        self.proj_out.visit_mut(f);
    }
}

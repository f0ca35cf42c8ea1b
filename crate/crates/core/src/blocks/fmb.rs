use super::fsm::Fsm;
use super::hgm::Hgm;
use super::layers::{Conv, Gain, LayerNorm};
use super::vssm::Vssm;
use super::BlockConfig;
use crate::error::{FmsrError, Result};
use crate::flops::FlopCounter;
use crate::nn::add;
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Frequency-assisted Mamba block.
///
/// ```text
/// y   = α_g·x + VSSM(LN₁ x) + FSM_a(x)
/// out = α_l·y + HGM(LN₂ y)  + FSM_b(y)
/// ```
#[derive(Clone, Debug)]
pub struct Fmb<T> {
    pub ln1: LayerNorm<T>,
    pub vssm: Vssm<T>,
    pub fsm_a: Fsm<T>,
    pub alpha_global: Gain<T>,
    pub ln2: LayerNorm<T>,
    pub hgm: Hgm<T>,
    pub fsm_b: Fsm<T>,
    pub alpha_local: Gain<T>,
}

impl<T: Scalar> Fmb<T> {
    pub fn init(pb: &mut ParamBuilder, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Fmb {
            ln1: LayerNorm::init(pb, "ln1", c),
            vssm: pb.scoped("vssm", |pb| Vssm::init(pb, cfg))?,
            fsm_a: pb.scoped("fsm_a", |pb| Fsm::init(pb, c, cfg.fsm_variant)),
            alpha_global: Gain::init(pb, "alpha_global", 1.0),
            ln2: LayerNorm::init(pb, "ln2", c),
            hgm: pb.scoped("hgm", |pb| Hgm::init(pb, cfg)),
            fsm_b: pb.scoped("fsm_b", |pb| Fsm::init(pb, c, cfg.fsm_variant)),
            alpha_local: Gain::init(pb, "alpha_local", 1.0),
        })
    }

    /// Zeroes the last layer of every branch so the block reduces to
    /// `α_l·α_g·x`. FSM variant (b) has no weights and stays active.
    pub fn residual_safe_init(&mut self) {
        self.vssm.proj_out.zero();
        self.hgm.out.zero();
        for fsm in [&mut self.fsm_a, &mut self.fsm_b] {
            if let Some(conv) = fsm.final_conv_mut() {
                conv.zero();
            }
        }
    }

    pub fn global_stage(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let skip = self.alpha_global.forward(tape, x)?;
        let v = self.vssm.forward(tape, &self.ln1.forward(tape, x)?)?;
        let f = self.fsm_a.forward(tape, x)?;
        add(tape, &add(tape, &skip, &v)?, &f)
    }

    pub fn local_stage(&self, tape: &Tape<T>, y: &Var<T>) -> Result<Var<T>> {
        let skip = self.alpha_local.forward(tape, y)?;
        let g = self.hgm.forward(tape, &self.ln2.forward(tape, y)?)?;
        let f = self.fsm_b.forward(tape, y)?;
        add(tape, &add(tape, &skip, &g)?, &f)
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.global_stage(tape, x)?;
        self.local_stage(tape, &y)
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, h: usize, w: usize) {
        let c = self.ln1.gain.numel();
        let px = (c * h * w) as u64;
        self.ln1.count_flops(fc, "ln1", h, w);
        fc.scoped("vssm", |fc| self.vssm.count_flops(fc, h, w));
        fc.scoped("fsm_a", |fc| self.fsm_a.count_flops(fc, c, h, w));
        fc.add("integrate_global", 3 * px);
        self.ln2.count_flops(fc, "ln2", h, w);
        fc.scoped("hgm", |fc| self.hgm.count_flops(fc, h, w));
        fc.scoped("fsm_b", |fc| self.fsm_b.count_flops(fc, c, h, w));
        fc.add("integrate_local", 3 * px);
    }
}

impl<T: Scalar> Module<T> for Fmb<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.ln1.visit(f);
        self.vssm.visit(f);
        self.fsm_a.visit(f);
        self.alpha_global.visit(f);
        self.ln2.visit(f);
        self.hgm.visit(f);
        self.fsm_b.visit(f);
        self.alpha_local.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.ln1.visit_mut(f);
        self.vssm.visit_mut(f);
        self.fsm_a.visit_mut(f);
        self.alpha_global.visit_mut(f);
        self.ln2.visit_mut(f);
        self.hgm.visit_mut(f);
        self.fsm_b.visit_mut(f);
        self.alpha_local.visit_mut(f);
    }
}

/// A chain of blocks closed by a 3×3 convolution and a residual.
#[derive(Clone, Debug)]
pub struct Fmg<T> {
    pub blocks: Vec<Fmb<T>>,
    pub conv: Conv<T>,
}

impl<T: Scalar> Fmg<T> {
    pub fn init(pb: &mut ParamBuilder, cfg: &BlockConfig, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FmsrError::Config("a group needs at least one block".into()));
        }
        let blocks = (0..n)
            .map(|i| pb.scoped(format!("blocks.{i}"), |pb| Fmb::init(pb, cfg)))
            .collect::<Result<Vec<_>>>()?;
        let conv = Conv::init(pb, "conv", cfg.channels, cfg.channels, 3, 1);
        Ok(Fmg { blocks, conv })
    }

    pub fn residual_safe_init(&mut self) {
        for b in &mut self.blocks {
            b.residual_safe_init();
        }
        self.conv.zero();
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(tape, &h)?;
        }
        add(tape, &self.conv.forward(tape, &h)?, x)
    }

    pub fn count_flops(&self, fc: &mut FlopCounter, h: usize, w: usize) {
        for (i, b) in self.blocks.iter().enumerate() {
            fc.scoped(format!("blocks.{i}"), |fc| b.count_flops(fc, h, w));
        }
        self.conv.count_flops(fc, "conv", h, w);
        fc.add("residual", (self.conv.cout() * h * w) as u64);
    }
}

impl<T: Scalar> Module<T> for Fmg<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for b in &self.blocks {
            b.visit(f);
        }
        self.conv.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        self.conv.visit_mut(f);
    }
}

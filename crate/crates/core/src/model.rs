//! The full super-resolution network.
//!
//! ```text
//! F0    = head(I_LR)
//! F_m   = FMG_m(… FMG_1(F0))
//! F_rec = body_tail(F_m) + F0
//! I_SR  = tail(PS(up_conv(F_rec), s))
//! ```

use std::fmt::Write as _;

use crate::blocks::{BlockConfig, Conv, Fmg, FsmVariant};
use crate::config::{self, KeyValue};
use crate::error::{FmsrError, Result};
use crate::flops::FlopCounter;
use crate::nn::{add, pixel_shuffle};
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub scale: usize,
    /// Number of groups (FMGs).
    pub groups: usize,
    /// Blocks (FMBs) per group.
    pub blocks: usize,
    pub channels: usize,
    pub expand: f64,
    pub d_state: usize,
    /// `None` selects `ceil(d_inner / 16)`.
    pub dt_rank: Option<usize>,
    pub reduction: usize,
    pub fsm_variant: FsmVariant,
    pub dw_kernel: usize,
    /// Zero the last layer of every residual branch at build time.
    pub residual_safe_init: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 4,
            groups: 6,
            blocks: 6,
            channels: 96,
            expand: 2.0,
            d_state: 16,
            dt_rank: None,
            reduction: 16,
            fsm_variant: FsmVariant::C,
            dw_kernel: 1,
            residual_safe_init: false,
        }
    }
}

impl ModelConfig {
    /// Small network used by tests and the overfit run.
    pub fn toy() -> Self {
        ModelConfig {
            groups: 2,
            blocks: 2,
            channels: 32,
            d_state: 8,
            reduction: 8,
            ..Self::default()
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            channels: self.channels,
            expand: self.expand,
            d_state: self.d_state,
            dt_rank: self.dt_rank,
            reduction: self.reduction,
            fsm_variant: self.fsm_variant,
            dw_kernel: self.dw_kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(FmsrError::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.groups == 0 || self.blocks == 0 {
            return Err(FmsrError::Config("groups and blocks must be at least 1".into()));
        }
        self.block().validate()
    }
}

impl KeyValue for ModelConfig {
    fn set_key(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "scale" => self.scale = config::value(key, v)?,
            "groups" => self.groups = config::value(key, v)?,
            "blocks" => self.blocks = config::value(key, v)?,
            "channels" => self.channels = config::value(key, v)?,
            "expand" => self.expand = config::value(key, v)?,
            "d_state" => self.d_state = config::value(key, v)?,
            "dt_rank" => {
                self.dt_rank = if v == "auto" { None } else { Some(config::value(key, v)?) }
            }
            "reduction" => self.reduction = config::value(key, v)?,
            "fsm_variant" => self.fsm_variant = v.parse()?,
            "dw_kernel" => self.dw_kernel = config::value(key, v)?,
            "residual_safe_init" => self.residual_safe_init = config::flag(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("scale", self.scale.to_string()),
            ("groups", self.groups.to_string()),
            ("blocks", self.blocks.to_string()),
            ("channels", self.channels.to_string()),
            ("expand", self.expand.to_string()),
            ("d_state", self.d_state.to_string()),
            ("dt_rank", self.dt_rank.map_or("auto".into(), |r| r.to_string())),
            ("reduction", self.reduction.to_string()),
            ("fsm_variant", self.fsm_variant.to_string()),
            ("dw_kernel", self.dw_kernel.to_string()),
            ("residual_safe_init", self.residual_safe_init.to_string()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub head: Conv<T>,
    pub groups: Vec<Fmg<T>>,
    pub body_tail: Conv<T>,
    pub up_conv: Conv<T>,
    pub tail: Conv<T>,
}

/// Builds a model with deterministic initial weights.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let pb = &mut ParamBuilder::new(seed);
    let (c, s) = (cfg.channels, cfg.scale);
    let block = cfg.block();
    let head = Conv::init(pb, "head", 3, c, 3, 1);
    let groups = (0..cfg.groups)
        .map(|i| pb.scoped(format!("groups.{i}"), |pb| Fmg::init(pb, &block, cfg.blocks)))
        .collect::<Result<Vec<_>>>()?;
    let body_tail = Conv::init(pb, "body_tail", c, c, 3, 1);
    let up_conv = Conv::init(pb, "up_conv", c, 3 * s * s, 3, 1);
    let tail = Conv::init(pb, "tail", 3, 3, 3, 1);
    let mut model = Model {
        config: cfg.clone(),
        head,
        groups,
        body_tail,
        up_conv,
        tail,
    };
    if cfg.residual_safe_init {
        model.residual_safe_init();
    }
    Ok(model)
}

impl<T: Scalar> Model<T> {
    /// Zeroes every branch end and the body tail, so the whole body
    /// contributes nothing and `F_rec = F0`.
    pub fn residual_safe_init(&mut self) {
        for g in &mut self.groups {
            g.residual_safe_init();
        }
        self.body_tail.zero();
    }

    pub fn scale(&self) -> usize {
        self.config.scale
    }

    /// Unclamped output, `[B, 3, s·h, s·w]`.
    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let [_, ch, _, _] = x.value().dims4("model forward")?;
        if ch != 3 {
            return Err(FmsrError::shape("model forward", "[B, 3, h, w]", shape_str(x.shape())));
        }
        let f0 = self.head.forward(tape, x)?;
        let mut f = f0.clone();
        for g in &self.groups {
            f = g.forward(tape, &f)?;
        }
        let f_rec = add(tape, &self.body_tail.forward(tape, &f)?, &f0)?;
        self.reconstruct(tape, &f_rec)
    }

    /// `tail(PS(up_conv(f)))`.
    pub fn reconstruct(&self, tape: &Tape<T>, f: &Var<T>) -> Result<Var<T>> {
        let up = self.up_conv.forward(tape, f)?;
        let ps = pixel_shuffle(tape, &up, self.config.scale)?;
        self.tail.forward(tape, &ps)
    }

    /// Inference: no tape, output clamped to `[0, 1]`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let out = self.forward(&tape, &Var::constant(x.clone()))?.into_tensor();
        Ok(out.map(|v| v.max(T::zero()).min(T::one())))
    }

    pub fn count_flops(&self, h: usize, w: usize) -> FlopCounter {
        let mut fc = FlopCounter::new();
        let (c, s) = (self.config.channels, self.config.scale);
        self.head.count_flops(&mut fc, "head", h, w);
        for (i, g) in self.groups.iter().enumerate() {
            fc.scoped(format!("groups.{i}"), |fc| g.count_flops(fc, h, w));
        }
        self.body_tail.count_flops(&mut fc, "body_tail", h, w);
        fc.add("global_skip", (c * h * w) as u64);
        self.up_conv.count_flops(&mut fc, "up_conv", h, w);
        self.tail.count_flops(&mut fc, "tail", s * h, s * w);
        fc
    }

    /// `name shape count` per tensor, in registry order.
    pub fn registry_table(&self) -> String {
        let mut out = String::new();
        for p in self.params() {
            let dims: Vec<String> = p.shape().iter().map(|d| d.to_string()).collect();
            writeln!(out, "{} {} {}", p.name(), dims.join("x"), p.numel()).unwrap();
        }
        out
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.head.visit(f);
        for g in &self.groups {
            g.visit(f);
        }
        self.body_tail.visit(f);
        self.up_conv.visit(f);
        self.tail.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.head.visit_mut(f);
        for g in &mut self.groups {
            g.visit_mut(f);
        }
        self.body_tail.visit_mut(f);
        self.up_conv.visit_mut(f);
        self.tail.visit_mut(f);
    }
}

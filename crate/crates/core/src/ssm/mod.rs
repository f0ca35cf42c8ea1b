//! Selective state-space core: the recurrence, the four-way cross scan and
//! the 2D selective-scan operator built from them.

mod cross;
mod scan;

pub use cross::{
    cross_merge, cross_merge_forward, cross_scan, cross_scan_forward, scan_order, NUM_DIRECTIONS,
};
pub use scan::{selective_scan, selective_scan_1d};

use rand::Rng;

use crate::error::{FmsrError, Result};
use crate::nn::{activate, dir_linear, narrow, Activation};
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 0.1;
const DT_FLOOR: f64 = 1e-4;

/// Dimensions of the selective scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateConfig {
    /// Channels after expansion.
    pub d_inner: usize,
    pub d_state: usize,
    /// Rank of the step-size projection.
    pub dt_rank: usize,
    pub num_directions: usize,
}

impl StateConfig {
    /// Default construction: `dt_rank = ceil(d_inner / 16)`.
    pub fn new(d_inner: usize, d_state: usize) -> Self {
        StateConfig {
            d_inner,
            d_state,
            dt_rank: d_inner.div_ceil(16).max(1),
            num_directions: NUM_DIRECTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_inner == 0 || self.d_state == 0 || self.dt_rank == 0 {
            return Err(FmsrError::Config(format!(
                "state dims must be positive: {self:?}"
            )));
        }
        if self.num_directions != NUM_DIRECTIONS {
            return Err(FmsrError::Config(format!(
                "num_directions must be {NUM_DIRECTIONS}, got {}",
                self.num_directions
            )));
        }
        Ok(())
    }

    /// Width of the per-token projection `(Δ-input, B, C)`.
    pub fn proj_width(&self) -> usize {
        self.dt_rank + 2 * self.d_state
    }
}

/// Per-direction parameters of the 2D selective scan.
#[derive(Clone, Debug)]
pub struct ScanParams<T> {
    /// `[K, d_inner, d_state]`, `A = −exp(a_log)`.
    pub a_log: Param<T>,
    /// `[K, d_inner]`.
    pub d_skip: Param<T>,
    /// `[K, dt_rank + 2·d_state, d_inner]`.
    pub x_proj_w: Param<T>,
    /// `[K, d_inner, dt_rank]`.
    pub dt_proj_w: Param<T>,
    /// `[K, d_inner]`.
    pub dt_proj_b: Param<T>,
}

/// Inverse of softplus.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl<T: Scalar> ScanParams<T> {
    /// S4D-real `A`, unit `D`, and step-size biases whose softplus is
    /// log-uniform in `[DT_MIN, DT_MAX]`.
    pub fn init(pb: &mut ParamBuilder, cfg: &StateConfig) -> Self {
        let k = cfg.num_directions;
        let (di, ds, dr) = (cfg.d_inner, cfg.d_state, cfg.dt_rank);
        let a_log: Vec<f64> = (0..k * di)
            .flat_map(|_| (1..=ds).map(|n| (n as f64).ln()))
            .collect();
        let a_log = pb.add("a_log", Tensor::from_f64(&[k, di, ds], &a_log).unwrap());
        let d_skip = pb.constant("d_skip", &[k, di], 1.0);
        let x_proj_w = pb.fan_in("x_proj_w", &[k, cfg.proj_width(), di], di);
        let dt_proj_w = pb.fan_in("dt_proj_w", &[k, di, dr], dr);
        let (lo, hi) = (DT_MIN.ln(), DT_MAX.ln());
        let bias: Vec<f64> = (0..k * di)
            .map(|_| {
                let dt = pb.rng().gen_range(lo..hi).exp().max(DT_FLOOR);
                softplus_inv(dt)
            })
            .collect();
        let dt_proj_b = pb.add("dt_proj_b", Tensor::from_f64(&[k, di], &bias).unwrap());
        ScanParams {
            a_log,
            d_skip,
            x_proj_w,
            dt_proj_w,
            dt_proj_b,
        }
    }

    pub fn check(&self, cfg: &StateConfig) -> Result<()> {
        cfg.validate()?;
        let k = cfg.num_directions;
        let (di, ds, dr) = (cfg.d_inner, cfg.d_state, cfg.dt_rank);
        self.a_log.tensor().expect_shape("ScanParams.a_log", &[k, di, ds])?;
        self.d_skip.tensor().expect_shape("ScanParams.d_skip", &[k, di])?;
        self.x_proj_w
            .tensor()
            .expect_shape("ScanParams.x_proj_w", &[k, cfg.proj_width(), di])?;
        self.dt_proj_w.tensor().expect_shape("ScanParams.dt_proj_w", &[k, di, dr])?;
        self.dt_proj_b.tensor().expect_shape("ScanParams.dt_proj_b", &[k, di])?;
        Ok(())
    }
}

impl<T: Scalar> Module<T> for ScanParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        crate::visit_fields!(self, f; a_log, d_skip, x_proj_w, dt_proj_w, dt_proj_b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        crate::visit_fields_mut!(self, f; a_log, d_skip, x_proj_w, dt_proj_w, dt_proj_b);
    }
}

/// 2D selective scan over `[B, d_inner, H, W]`.
///
/// Each direction projects its tokens to `(Δ-input, B, C)`, forms
/// `Δ = softplus(dt_proj(Δ-input))`, runs the recurrence with its own
/// `A` and `D`, and the four outputs are merged back by summation.
pub fn ss2d<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    params: &ScanParams<T>,
    cfg: &StateConfig,
) -> Result<Var<T>> {
    params.check(cfg)?;
    let [_, c, h, w] = x.value().dims4("ss2d")?;
    if c != cfg.d_inner {
        return Err(FmsrError::shape("ss2d", format!("{} channels", cfg.d_inner), c));
    }
    let (dr, ds) = (cfg.dt_rank, cfg.d_state);
    let xs = cross_scan(tape, x)?;
    let x_dbl = dir_linear(tape, &params.x_proj_w, None, &xs)?;
    let dt_in = narrow(tape, &x_dbl, 2, 0, dr)?;
    let b_seq = narrow(tape, &x_dbl, 2, dr, ds)?;
    let c_seq = narrow(tape, &x_dbl, 2, dr + ds, ds)?;
    let dt = dir_linear(tape, &params.dt_proj_w, Some(&params.dt_proj_b), &dt_in)?;
    let delta = activate(tape, &dt, Activation::Softplus);
    let ys = selective_scan(
        tape,
        &xs,
        &delta,
        &params.a_log,
        &b_seq,
        &c_seq,
        &params.d_skip,
    )?;
    cross_merge(tape, &ys, h, w)
}

/// Convenience wrapper for callers without a tape.
pub fn ss2d_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &ScanParams<T>,
    cfg: &StateConfig,
) -> Result<Tensor<T>> {
    let tape = Tape::inference();
    Ok(ss2d(&tape, &Var::constant(x.clone()), params, cfg)?.into_tensor())
}

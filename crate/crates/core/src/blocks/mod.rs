//! The FMSR building blocks: VSSM, FSM, HGM and their assembly into
//! FMB (one block) and FMG (a group of blocks with a residual).

mod fmb;
mod fsm;
mod hgm;
mod layers;
mod vssm;

use std::fmt;
use std::str::FromStr;

pub use fmb::{Fmb, Fmg};
pub use fsm::Fsm;
pub use hgm::{ChannelAttention, Hgm};
pub use layers::{Conv, Gain, LayerNorm};
pub use vssm::Vssm;

use crate::error::{FmsrError, Result};
use crate::ssm::StateConfig;

/// Pointwise map applied to the stacked real/imaginary spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FsmVariant {
    /// One 1×1 convolution, no selection.
    A,
    /// ReLU selection.
    B,
    /// 1×1 conv → GELU → 1×1 conv.
    #[default]
    C,
}

impl FromStr for FsmVariant {
    type Err = FmsrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(FsmVariant::A),
            "b" => Ok(FsmVariant::B),
            "c" => Ok(FsmVariant::C),
            other => Err(FmsrError::Config(format!("unknown FSM variant {other:?}"))),
        }
    }
}

impl fmt::Display for FsmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FsmVariant::A => "a",
            FsmVariant::B => "b",
            FsmVariant::C => "c",
        })
    }
}

/// Hyperparameters shared by every block of a model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    /// Expansion ratio of the VSSM projection.
    pub expand: f64,
    pub d_state: usize,
    /// `None` selects `ceil(d_inner / 16)`.
    pub dt_rank: Option<usize>,
    /// Channel-attention reduction ratio.
    pub reduction: usize,
    pub fsm_variant: FsmVariant,
    /// Kernel of the VSSM depthwise convolution (1 or 3).
    pub dw_kernel: usize,
}

impl BlockConfig {
    pub fn new(channels: usize) -> Self {
        BlockConfig {
            channels,
            expand: 2.0,
            d_state: 16,
            dt_rank: None,
            reduction: 16,
            fsm_variant: FsmVariant::C,
            dw_kernel: 1,
        }
    }

    pub fn inner(&self) -> Result<usize> {
        let inner = self.expand * self.channels as f64;
        if !(inner >= 1.0 && inner.fract() == 0.0) {
            return Err(FmsrError::Config(format!(
                "expansion {} × {} channels is not a positive integer",
                self.expand, self.channels
            )));
        }
        Ok(inner as usize)
    }

    pub fn state(&self) -> Result<StateConfig> {
        let mut cfg = StateConfig::new(self.inner()?, self.d_state);
        if let Some(r) = self.dt_rank {
            cfg.dt_rank = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(FmsrError::Config("channels must be positive".into()));
        }
        if self.reduction == 0 || self.channels % self.reduction != 0 {
            return Err(FmsrError::Config(format!(
                "reduction {} must divide channels {}",
                self.reduction, self.channels
            )));
        }
        if self.dw_kernel % 2 == 0 {
            return Err(FmsrError::Config(format!("dw_kernel {} must be odd", self.dw_kernel)));
        }
        self.state().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_checks() {
        let cfg = BlockConfig::new(96);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.inner().unwrap(), 192);
        assert_eq!(cfg.state().unwrap().dt_rank, 12);
        assert!(BlockConfig { reduction: 7, ..cfg }.validate().is_err());
        assert!(BlockConfig { expand: 1.5, channels: 3, reduction: 3, ..cfg }.validate().is_err());
        assert!(BlockConfig { dw_kernel: 2, ..cfg }.validate().is_err());
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("C".parse::<FsmVariant>().unwrap(), FsmVariant::C);
        assert_eq!(FsmVariant::A.to_string().parse::<FsmVariant>().unwrap(), FsmVariant::A);
        assert!(matches!("d".parse::<FsmVariant>(), Err(FmsrError::Config(_))));
    }
}

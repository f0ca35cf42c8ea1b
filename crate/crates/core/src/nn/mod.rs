//! Differentiable tensor operations recorded on a [`Tape`](crate::tape::Tape).

mod conv;
mod elementwise;
mod fft;
mod norm;
mod shape;

pub use conv::{conv2d, conv2d_forward};
pub use elementwise::{
    activate, add, l1_loss, mul, scale, sub, weighted_sum, Activation,
};
pub use fft::{irfft2, irfft2_forward, rfft2, rfft2_forward, spectrum_width};
pub use norm::{layer_norm_channel, LN_EPS};
pub use shape::{
    dir_linear, global_avg_pool, mul_channel, narrow, pixel_shuffle, pixel_shuffle_forward,
    pixel_unshuffle_forward,
};

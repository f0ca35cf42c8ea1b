use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// Cubic convolution parameter.
pub const CUBIC_A: f64 = -0.5;

/// Two-piece cubic kernel with support `[-2, 2]`.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Resampling weights along one axis: for each output index, the first
/// input index and the normalized taps that follow it.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisWeights {
    pub taps: Vec<(usize, Vec<f64>)>,
}

/// Mirrors an arbitrary index into `0..n` (edge samples repeated).
fn reflect(j: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = j.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

impl AxisWeights {
    pub fn new(n_in: usize, n_out: usize, antialias: bool) -> Self {
        let scale = n_out as f64 / n_in as f64;
        // kernel stretch on downscale
        let stretch = if antialias && scale < 1.0 { 1.0 / scale } else { 1.0 };
        let support = 2.0 * stretch;
        let taps = (0..n_out)
            .map(|i| {
                let center = (i as f64 + 0.5) / scale - 0.5;
                let first = (center - support).floor() as isize + 1;
                let last = (center + support).ceil() as isize;
                let raw: Vec<(usize, f64)> = (first..last)
                    .map(|j| (reflect(j, n_in), cubic((j as f64 - center) / stretch)))
                    .collect();
                let total: f64 = raw.iter().map(|r| r.1).sum();
                let lo = raw.iter().map(|r| r.0).min().unwrap();
                let hi = raw.iter().map(|r| r.0).max().unwrap();
                let mut w = vec![0.0; hi - lo + 1];
                for (j, v) in raw {
                    w[j - lo] += v / total;
                }
                (lo, w)
            })
            .collect();
        AxisWeights { taps }
    }
}

/// Separable cubic resampling of `[C, H, W]` with half-pixel centers.
///
/// With `antialias`, downscaling stretches the kernel by the inverse scale.
/// Taps falling outside the image are mirrored back onto it.
pub fn bicubic_resize<T: Scalar>(
    img: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    antialias: bool,
) -> Result<Tensor<T>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] if h > 0 && w > 0 => (c, h, w),
        other => return Err(FmsrError::shape("bicubic_resize", "[C, H, W] with H, W ≥ 1", shape_str(other))),
    };
    if out_h == 0 || out_w == 0 {
        return Err(FmsrError::Argument(format!(
            "bicubic_resize: output size must be positive, got {out_h}x{out_w}"
        )));
    }
    let wx = AxisWeights::new(w, out_w, antialias);
    let wy = AxisWeights::new(h, out_h, antialias);
    let src = img.data();
    // horizontal pass into f64, then vertical
    let mut tmp = vec![0.0f64; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = &mut tmp[(ch * h + y) * out_w..(ch * h + y + 1) * out_w];
            for (o, (lo, taps)) in dst.iter_mut().zip(&wx.taps) {
                *o = taps.iter().enumerate().map(|(k, t)| t * row[lo + k].to_f64().unwrap()).sum();
            }
        }
    }
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let od = out.data_mut();
    for ch in 0..c {
        for (oy, (lo, taps)) in wy.taps.iter().enumerate() {
            let dst = &mut od[(ch * out_h + oy) * out_w..(ch * out_h + oy + 1) * out_w];
            for (k, t) in taps.iter().enumerate() {
                let row = &tmp[(ch * h + lo + k) * out_w..(ch * h + lo + k + 1) * out_w];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += T::of(t * v);
                }
            }
        }
    }
    Ok(out)
}

//! Four-directional unrolling of a 2D grid into token sequences and back.
//!
//! Direction 0 is row-major, 1 column-major, 2 and 3 their reversals.

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

pub const NUM_DIRECTIONS: usize = 4;

/// Row-major spatial index visited at each sequence position of `direction`.
pub fn scan_order(h: usize, w: usize, direction: usize) -> Vec<usize> {
    let l = h * w;
    let col_major = |i: usize| (i % h) * w + i / h;
    (0..l)
        .map(|i| match direction {
            0 => i,
            1 => col_major(i),
            2 => l - 1 - i,
            3 => col_major(l - 1 - i),
            _ => panic!("direction {direction} out of range"),
        })
        .collect()
}

fn orders(h: usize, w: usize) -> Vec<Vec<usize>> {
    (0..NUM_DIRECTIONS).map(|d| scan_order(h, w, d)).collect()
}

fn scan_values<T: Scalar>(x: &Tensor<T>, orders: &[Vec<usize>]) -> Tensor<T> {
    let [b, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    let l = h * w;
    let mut out = Tensor::zeros(&[b, NUM_DIRECTIONS, c, l]);
    let od = out.data_mut();
    for bi in 0..b {
        for (k, order) in orders.iter().enumerate() {
            for ci in 0..c {
                let src = &x.data()[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                let dst = &mut od[((bi * NUM_DIRECTIONS + k) * c + ci) * l..][..l];
                for (d, &p) in dst.iter_mut().zip(order) {
                    *d = src[p];
                }
            }
        }
    }
    out
}

fn merge_values<T: Scalar>(ys: &Tensor<T>, orders: &[Vec<usize>], h: usize, w: usize) -> Tensor<T> {
    let [b, _, c, l] = [ys.dim(0), ys.dim(1), ys.dim(2), ys.dim(3)];
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let od = out.data_mut();
    for bi in 0..b {
        for (k, order) in orders.iter().enumerate() {
            for ci in 0..c {
                let src = &ys.data()[((bi * NUM_DIRECTIONS + k) * c + ci) * l..][..l];
                let dst = &mut od[(bi * c + ci) * l..(bi * c + ci + 1) * l];
                for (&v, &p) in src.iter().zip(order) {
                    dst[p] += v;
                }
            }
        }
    }
    out
}

/// `[B, C, H, W] -> [B, 4, C, H·W]`.
pub fn cross_scan_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4("cross_scan")?;
    Ok(scan_values(x, &orders(h, w)))
}

/// Inverse-permutes each direction back to row-major layout and sums them.
pub fn cross_merge_forward<T: Scalar>(ys: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [_, k, _, l] = ys.dims4("cross_merge")?;
    if k != NUM_DIRECTIONS || l != h * w {
        return Err(FmsrError::shape(
            "cross_merge",
            format!("[B, {NUM_DIRECTIONS}, C, {}]", h * w),
            shape_str(ys.shape()),
        ));
    }
    Ok(merge_values(ys, &orders(h, w), h, w))
}

pub fn cross_scan<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
    let [_, _, h, w] = x.value().dims4("cross_scan")?;
    let ord = orders(h, w);
    let out = scan_values(x.value(), &ord);
    Ok(tape.record(out, &[x], move |g, _| vec![Some(merge_values(g, &ord, h, w))]))
}

pub fn cross_merge<T: Scalar>(tape: &Tape<T>, ys: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
    let out = cross_merge_forward(ys.value(), h, w)?;
    let ord = orders(h, w);
    Ok(tape.record(out, &[ys], move |g, _| vec![Some(scan_values(g, &ord))]))
}

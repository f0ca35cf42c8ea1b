use crate::error::{FmsrError, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

/// Slice `len` entries starting at `start` along `axis`.
pub fn narrow<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Var<T>> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(FmsrError::shape(
            "narrow",
            format!("range {start}..{} on axis {axis}", start + len),
            shape_str(&shape),
        ));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis];
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let off = (o * full + start) * inner;
        data.extend_from_slice(&x.value().data()[off..off + len * inner]);
    }
    let out = Tensor::from_vec(&out_shape, data)?;
    Ok(tape.record(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros(&shape);
        for o in 0..outer {
            let off = (o * full + start) * inner;
            dx.data_mut()[off..off + len * inner]
                .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(dx)]
    }))
}

/// Spatial mean: `[B, C, H, W] -> [B, C, 1, 1]`.
pub fn global_avg_pool<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
    let [b, c, h, w] = x.value().dims4("global_avg_pool")?;
    let hw = h * w;
    let inv = T::one() / T::of(hw as f64);
    let data = x
        .value()
        .data()
        .chunks(hw)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    let out = Tensor::from_vec(&[b, c, 1, 1], data)?;
    Ok(tape.record(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        for (plane, &gv) in dx.data_mut().chunks_mut(hw).zip(g.data()) {
            plane.fill(gv * inv);
        }
        vec![Some(dx)]
    }))
}

/// Broadcast product of `x: [B, C, H, W]` with per-channel `s: [B, C, 1, 1]`.
pub fn mul_channel<T: Scalar>(tape: &Tape<T>, x: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
    let [b, c, h, w] = x.value().dims4("mul_channel")?;
    s.value().expect_shape("mul_channel", &[b, c, 1, 1])?;
    let hw = h * w;
    let mut out = x.value().clone();
    for (plane, &sv) in out.data_mut().chunks_mut(hw).zip(s.value().data()) {
        for v in plane {
            *v *= sv;
        }
    }
    let (xv, sv) = (x.shared(), s.shared());
    Ok(tape.record(out, &[x, s], move |g, needs| {
        let dx = needs[0].then(|| {
            let mut dx = g.clone();
            for (plane, &s) in dx.data_mut().chunks_mut(hw).zip(sv.data()) {
                for v in plane {
                    *v *= s;
                }
            }
            dx
        });
        let ds = needs[1].then(|| {
            let data = g
                .data()
                .chunks(hw)
                .zip(xv.data().chunks(hw))
                .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                .collect();
            Tensor::from_vec(&[b, c, 1, 1], data).unwrap()
        });
        vec![dx, ds]
    }))
}

/// `out[b, k, s·i+dy, s·j+dx] = x[b, k·s² + dy·s + dx, i, j]`.
pub fn pixel_shuffle_forward<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [b, cs, h, w] = x.dims4("pixel_shuffle")?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(FmsrError::shape(
            "pixel_shuffle",
            format!("channels divisible by {}", s * s),
            cs,
        ));
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for k in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let src_c = k * s * s + dy * s + dx;
                    let src = &xd[((bi * cs + src_c) * h) * w..((bi * cs + src_c + 1) * h) * w];
                    for i in 0..h {
                        let row = ((bi * c + k) * oh + s * i + dy) * ow;
                        for j in 0..w {
                            od[row + s * j + dx] = src[i * w + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle_forward`].
pub fn pixel_unshuffle_forward<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [b, c, oh, ow] = x.dims4("pixel_unshuffle")?;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(FmsrError::shape(
            "pixel_unshuffle",
            format!("spatial dims divisible by {s}"),
            shape_str(x.shape()),
        ));
    }
    let (h, w) = (oh / s, ow / s);
    let cs = c * s * s;
    let mut out = Tensor::zeros(&[b, cs, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for k in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let dst_c = k * s * s + dy * s + dx;
                    for i in 0..h {
                        let row = ((bi * c + k) * oh + s * i + dy) * ow;
                        for j in 0..w {
                            od[((bi * cs + dst_c) * h + i) * w + j] = xd[row + s * j + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_shuffle<T: Scalar>(tape: &Tape<T>, x: &Var<T>, s: usize) -> Result<Var<T>> {
    let out = pixel_shuffle_forward(x.value(), s)?;
    Ok(tape.record(out, &[x], move |g, _| {
        vec![Some(pixel_unshuffle_forward(g, s).expect("shape checked in forward"))]
    }))
}

/// Per-direction token projection.
///
/// `w: [K, M, D]`, optional `bias: [K, M]`, `x: [B, K, D, L]` → `[B, K, M, L]`
/// with `out[b, k] = w[k] · x[b, k] + bias[k]`.
pub fn dir_linear<T: Scalar>(
    tape: &Tape<T>,
    w: &Var<T>,
    bias: Option<&Var<T>>,
    x: &Var<T>,
) -> Result<Var<T>> {
    let [bn, k, d, l] = x.value().dims4("dir_linear")?;
    let (wk, m, wd) = match w.shape() {
        &[wk, m, wd] => (wk, m, wd),
        other => return Err(FmsrError::shape("dir_linear", "[K, M, D] weight", shape_str(other))),
    };
    if wk != k || wd != d {
        return Err(FmsrError::shape(
            "dir_linear",
            format!("weight [{k}, _, {d}]"),
            shape_str(w.shape()),
        ));
    }
    if let Some(b) = bias {
        b.value().expect_shape("dir_linear bias", &[k, m])?;
    }
    let mut out = Tensor::zeros(&[bn, k, m, l]);
    for bi in 0..bn {
        for ki in 0..k {
            let xs = &x.value().data()[(bi * k + ki) * d * l..(bi * k + ki + 1) * d * l];
            let ws = &w.value().data()[ki * m * d..(ki + 1) * m * d];
            let os = &mut out.data_mut()[(bi * k + ki) * m * l..(bi * k + ki + 1) * m * l];
            gemm(m, d, l, ws, false, xs, false, T::zero(), os);
            if let Some(b) = bias {
                for (mi, &bv) in b.value().data()[ki * m..(ki + 1) * m].iter().enumerate() {
                    for v in &mut os[mi * l..(mi + 1) * l] {
                        *v += bv;
                    }
                }
            }
        }
    }
    let (wv, xv) = (w.shared(), x.shared());
    let backward = move |g: &Tensor<T>, needs: &[bool]| {
        let mut dw = needs[0].then(|| Tensor::zeros(&[k, m, d]));
        let mut dx = needs[1].then(|| Tensor::zeros(&[bn, k, d, l]));
        let mut db = needs.get(2).copied().unwrap_or(false).then(|| Tensor::zeros(&[k, m]));
        for bi in 0..bn {
            for ki in 0..k {
                let gs = &g.data()[(bi * k + ki) * m * l..(bi * k + ki + 1) * m * l];
                if let Some(dw) = dw.as_mut() {
                    let xs = &xv.data()[(bi * k + ki) * d * l..(bi * k + ki + 1) * d * l];
                    let dws = &mut dw.data_mut()[ki * m * d..(ki + 1) * m * d];
                    gemm(m, l, d, gs, false, xs, true, T::one(), dws);
                }
                if let Some(dx) = dx.as_mut() {
                    let ws = &wv.data()[ki * m * d..(ki + 1) * m * d];
                    let dxs = &mut dx.data_mut()[(bi * k + ki) * d * l..(bi * k + ki + 1) * d * l];
                    gemm(d, m, l, ws, true, gs, false, T::zero(), dxs);
                }
                if let Some(db) = db.as_mut() {
                    for mi in 0..m {
                        db.data_mut()[ki * m + mi] += gs[mi * l..(mi + 1) * l].iter().copied().sum();
                    }
                }
            }
        }
        let mut grads = vec![dw, dx];
        if needs.len() > 2 {
            grads.push(db);
        }
        grads
    };
    Ok(match bias {
        Some(b) => tape.record(out, &[w, x, b], backward),
        None => tape.record(out, &[w, x], backward),
    })
}

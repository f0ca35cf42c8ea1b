use crate::error::{FmsrError, Result};
use crate::scalar::{gemm, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    k: usize,
    depthwise: bool,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.k / 2
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn cols(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn geometry<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    groups: usize,
) -> Result<ConvGeom> {
    let [batch, cin, h, wd] = x.dims4("conv2d")?;
    let [cout, cin_g, k, k2] = w.dims4("conv2d")?;
    if k != k2 || k % 2 == 0 {
        return Err(FmsrError::shape("conv2d", "odd square kernel", shape_str(w.shape())));
    }
    let depthwise = match groups {
        1 if cin_g == cin => false,
        g if g == cin && g == cout && cin_g == 1 => true,
        _ => {
            return Err(FmsrError::shape(
                "conv2d",
                format!("weight for {cin} input channels with groups={groups}"),
                shape_str(w.shape()),
            ))
        }
    };
    if let Some(b) = b {
        b.expect_shape("conv2d bias", &[cout])?;
    }
    Ok(ConvGeom {
        batch,
        cin,
        cout,
        h,
        w: wd,
        k,
        depthwise,
    })
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (h, w, k, p) = (g.h as isize, g.w as isize, g.k as isize, g.pad() as isize);
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * g.k * g.k) + (ky * k + kx) as usize;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ky - p;
                    let drow = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if sy < 0 || sy >= h {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (xx, d) in drow.iter_mut().enumerate() {
                        let sx = xx as isize + kx - p;
                        *d = if sx < 0 || sx >= w { T::zero() } else { srow[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (h, w, k, p) = (g.h as isize, g.w as isize, g.k as isize, g.pad() as isize);
    let hw = g.hw();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * g.k * g.k) + (ky * k + kx) as usize;
                let src = &col[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ky - p;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let srow = &src[(y * w) as usize..((y + 1) * w) as usize];
                    let drow = &mut plane[(sy * w) as usize..((sy + 1) * w) as usize];
                    for (xx, &v) in srow.iter().enumerate() {
                        let sx = xx as isize + kx - p;
                        if sx >= 0 && sx < w {
                            drow[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (h, wd, k, p) = (g.h as isize, g.w as isize, g.k as isize, g.pad() as isize);
    let hw = g.hw();
    for c in 0..g.cin {
        let src = &x[c * hw..(c + 1) * hw];
        let dst = &mut out[c * hw..(c + 1) * hw];
        let ker = &w[c * g.k * g.k..(c + 1) * g.k * g.k];
        for ky in 0..k {
            for kx in 0..k {
                let wv = ker[(ky * k + kx) as usize];
                for y in 0..h {
                    let sy = y + ky - p;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for xx in 0..wd {
                        let sx = xx + kx - p;
                        if sx >= 0 && sx < wd {
                            dst[(y * wd + xx) as usize] += wv * src[(sy * wd + sx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    let (h, wd, k, p) = (g.h as isize, g.w as isize, g.k as isize, g.pad() as isize);
    let hw = g.hw();
    let kk = g.k * g.k;
    let mut dx = dx;
    let mut dw = dw;
    for c in 0..g.cin {
        let src = &x[c * hw..(c + 1) * hw];
        let gr = &grad[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let tap = (ky * k + kx) as usize;
                let wv = w[c * kk + tap];
                let mut acc = T::zero();
                for y in 0..h {
                    let sy = y + ky - p;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for xx in 0..wd {
                        let sx = xx + kx - p;
                        if sx >= 0 && sx < wd {
                            let gi = gr[(y * wd + xx) as usize];
                            let si = (sy * wd + sx) as usize;
                            acc += gi * src[si];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[c * hw + si] += gi * wv;
                            }
                        }
                    }
                }
                if let Some(dw) = dw.as_deref_mut() {
                    dw[c * kk + tap] += acc;
                }
            }
        }
    }
}

/// Stride-1 "same" convolution on plain tensors.
///
/// `x: [B, Cin, H, W]`, `w: [Cout, Cin/groups, k, k]` with odd `k`, zero
/// padding `k/2`. Supports dense (`groups = 1`) and depthwise
/// (`groups = Cin = Cout`) kernels.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    groups: usize,
) -> Result<Tensor<T>> {
    let g = geometry(x, w, b, groups)?;
    let hw = g.hw();
    let mut out = Tensor::zeros(&[g.batch, g.cout, g.h, g.w]);
    let mut col = if !g.depthwise && g.k > 1 {
        vec![T::zero(); g.cols() * hw]
    } else {
        Vec::new()
    };
    for bi in 0..g.batch {
        let xb = &x.data()[bi * g.cin * hw..(bi + 1) * g.cin * hw];
        let ob = &mut out.data_mut()[bi * g.cout * hw..(bi + 1) * g.cout * hw];
        if g.depthwise {
            depthwise_forward(&g, xb, w.data(), ob);
        } else if g.k == 1 {
            gemm(g.cout, g.cin, hw, w.data(), false, xb, false, T::zero(), ob);
        } else {
            im2col(&g, xb, &mut col);
            gemm(g.cout, g.cols(), hw, w.data(), false, &col, false, T::zero(), ob);
        }
        if let Some(b) = b {
            for (co, &bv) in b.data().iter().enumerate() {
                for v in &mut ob[co * hw..(co + 1) * hw] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d<T: Scalar>(
    tape: &Tape<T>,
    x: &Var<T>,
    w: &Var<T>,
    b: Option<&Var<T>>,
    groups: usize,
) -> Result<Var<T>> {
    let out = conv2d_forward(x.value(), w.value(), b.map(|b| b.value()), groups)?;
    let g = geometry(x.value(), w.value(), None, groups)?;
    let (xv, wv) = (x.shared(), w.shared());
    let backward = move |grad: &Tensor<T>, needs: &[bool]| {
        let hw = g.hw();
        let mut dx = needs[0].then(|| Tensor::zeros(xv.shape()));
        let mut dw = needs[1].then(|| Tensor::zeros(wv.shape()));
        let db = needs.get(2).copied().unwrap_or(false).then(|| {
            let mut db = Tensor::zeros(&[g.cout]);
            for bi in 0..g.batch {
                for co in 0..g.cout {
                    let off = (bi * g.cout + co) * hw;
                    db.data_mut()[co] += grad.data()[off..off + hw].iter().copied().sum();
                }
            }
            db
        });
        let mut col = if !g.depthwise && g.k > 1 {
            vec![T::zero(); g.cols() * hw]
        } else {
            Vec::new()
        };
        for bi in 0..g.batch {
            let xb = &xv.data()[bi * g.cin * hw..(bi + 1) * g.cin * hw];
            let gb = &grad.data()[bi * g.cout * hw..(bi + 1) * g.cout * hw];
            let dxb = dx
                .as_mut()
                .map(|d| &mut d.data_mut()[bi * g.cin * hw..(bi + 1) * g.cin * hw]);
            if g.depthwise {
                depthwise_backward(&g, xb, wv.data(), gb, dxb, dw.as_mut().map(|d| d.data_mut()));
                continue;
            }
            let src: &[T] = if g.k == 1 {
                xb
            } else {
                im2col(&g, xb, &mut col);
                &col
            };
            if let Some(dw) = dw.as_mut() {
                gemm(g.cout, hw, g.cols(), gb, false, src, true, T::one(), dw.data_mut());
            }
            if let Some(dxb) = dxb {
                if g.k == 1 {
                    gemm(g.cin, g.cout, hw, wv.data(), true, gb, false, T::one(), dxb);
                } else {
                    let mut dcol = vec![T::zero(); g.cols() * hw];
                    gemm(g.cols(), g.cout, hw, wv.data(), true, gb, false, T::zero(), &mut dcol);
                    col2im_add(&g, &dcol, dxb);
                }
            }
        }
        let mut grads = vec![dx, dw];
        if needs.len() > 2 {
            grads.push(db);
        }
        grads
    };
    Ok(match b {
        Some(b) => tape.record(out, &[x, w, b], backward),
        None => tape.record(out, &[x, w], backward),
    })
}

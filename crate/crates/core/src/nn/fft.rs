//! 2D real FFT with the spectrum carried as stacked real channels.
//!
//! `rfft2` maps `[B, C, H, W]` to `[B, 2C, H, W/2+1]`: channels `0..C` hold
//! the real parts and `C..2C` the imaginary parts of the half spectrum.
//! `irfft2` is the matching inverse with C2R semantics (the imaginary
//! parts of the DC and Nyquist columns along W are ignored).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

/// Number of retained frequency columns for a real transform of width `w`.
pub fn spectrum_width(w: usize) -> usize {
    w / 2 + 1
}

struct Plans<T: Scalar> {
    h: usize,
    w: usize,
    fwd_w: Arc<dyn Fft<T>>,
    inv_w: Arc<dyn Fft<T>>,
    fwd_h: Arc<dyn Fft<T>>,
    inv_h: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Plans<T> {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Plans {
            h,
            w,
            fwd_w: planner.plan_fft_forward(w),
            inv_w: planner.plan_fft_inverse(w),
            fwd_h: planner.plan_fft_forward(h),
            inv_h: planner.plan_fft_inverse(h),
        }
    }

    fn wf(&self) -> usize {
        spectrum_width(self.w)
    }

    /// Unnormalized FFT along H of every column of an `H × wf` complex grid.
    fn columns(&self, grid: &mut [Complex<T>], inverse: bool) {
        let wf = self.wf();
        let plan = if inverse { &self.inv_h } else { &self.fwd_h };
        let mut col = vec![Complex::new(T::zero(), T::zero()); self.h];
        for k in 0..wf {
            for (y, c) in col.iter_mut().enumerate() {
                *c = grid[y * wf + k];
            }
            plan.process(&mut col);
            for (y, c) in col.iter().enumerate() {
                grid[y * wf + k] = *c;
            }
        }
    }

    /// Half spectrum of one real `H × W` plane.
    fn rfft2(&self, plane: &[T], spec: &mut [Complex<T>]) {
        let (w, wf) = (self.w, self.wf());
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for y in 0..self.h {
            for (c, &v) in row.iter_mut().zip(&plane[y * w..(y + 1) * w]) {
                *c = Complex::new(v, T::zero());
            }
            self.fwd_w.process(&mut row);
            spec[y * wf..(y + 1) * wf].copy_from_slice(&row[..wf]);
        }
        self.columns(spec, false);
    }

    /// C2R inverse of a half spectrum (normalized by 1/(H·W)).
    fn irfft2(&self, spec: &mut [Complex<T>], plane: &mut [T]) {
        let (w, wf) = (self.w, self.wf());
        self.columns(spec, true);
        let norm = T::one() / T::of((self.h * w) as f64);
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for y in 0..self.h {
            let z = &spec[y * wf..(y + 1) * wf];
            row[..wf].copy_from_slice(z);
            for k in wf..w {
                row[k] = z[w - k].conj();
            }
            self.inv_w.process(&mut row);
            for (p, c) in plane[y * w..(y + 1) * w].iter_mut().zip(&row) {
                *p = c.re * norm;
            }
        }
    }

    /// Adjoint of [`Plans::rfft2`]: `Re Σ_k G[k] e^{+iθ}` over the half spectrum.
    fn rfft2_adjoint(&self, spec: &mut [Complex<T>], plane: &mut [T]) {
        let (w, wf) = (self.w, self.wf());
        self.columns(spec, true);
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for y in 0..self.h {
            row[..wf].copy_from_slice(&spec[y * wf..(y + 1) * wf]);
            row[wf..].fill(Complex::new(T::zero(), T::zero()));
            self.inv_w.process(&mut row);
            for (p, c) in plane[y * w..(y + 1) * w].iter_mut().zip(&row) {
                *p = c.re;
            }
        }
    }
}

fn split_planes<T: Scalar>(spec: &[Complex<T>], re: &mut [T], im: &mut [T]) {
    for ((c, r), i) in spec.iter().zip(re.iter_mut()).zip(im.iter_mut()) {
        *r = c.re;
        *i = c.im;
    }
}

fn join_planes<T: Scalar>(re: &[T], im: &[T], spec: &mut [Complex<T>]) {
    for ((c, &r), &i) in spec.iter_mut().zip(re).zip(im) {
        *c = Complex::new(r, i);
    }
}

fn rfft2_with<T: Scalar>(plans: &Plans<T>, x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
    let wf = plans.wf();
    let (n, nf) = (h * w, h * wf);
    let mut out = Tensor::zeros(&[b, 2 * c, h, wf]);
    let mut spec = vec![Complex::new(T::zero(), T::zero()); nf];
    for bi in 0..b {
        for ci in 0..c {
            let plane = &x.data()[(bi * c + ci) * n..(bi * c + ci + 1) * n];
            plans.rfft2(plane, &mut spec);
            let od = out.data_mut();
            let (head, tail) = od[(bi * 2 * c) * nf..(bi + 1) * 2 * c * nf].split_at_mut(c * nf);
            split_planes(&spec, &mut head[ci * nf..(ci + 1) * nf], &mut tail[ci * nf..(ci + 1) * nf]);
        }
    }
    out
}

fn irfft2_with<T: Scalar>(plans: &Plans<T>, z: &Tensor<T>) -> Tensor<T> {
    let [b, c2, h, wf] = [z.dim(0), z.dim(1), z.dim(2), z.dim(3)];
    let (c, w) = (c2 / 2, plans.w);
    let (n, nf) = (h * w, h * wf);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let mut spec = vec![Complex::new(T::zero(), T::zero()); nf];
    for bi in 0..b {
        for ci in 0..c {
            let re = &z.data()[(bi * c2 + ci) * nf..(bi * c2 + ci + 1) * nf];
            let im = &z.data()[(bi * c2 + c + ci) * nf..(bi * c2 + c + ci + 1) * nf];
            join_planes(re, im, &mut spec);
            plans.irfft2(&mut spec, &mut out.data_mut()[(bi * c + ci) * n..(bi * c + ci + 1) * n]);
        }
    }
    out
}

/// Real 2D FFT of every `[H, W]` plane; see the module docs for layout.
pub fn rfft2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = x.dims4("rfft2")?;
    if h == 0 || w == 0 {
        return Err(FmsrError::shape("rfft2", "non-empty spatial dims", shape_str(x.shape())));
    }
    Ok(rfft2_with(&Plans::new(h, w), x))
}

/// Inverse of [`rfft2_forward`] producing width `w`.
pub fn irfft2_forward<T: Scalar>(z: &Tensor<T>, w: usize) -> Result<Tensor<T>> {
    let [_, c2, h, wf] = z.dims4("irfft2")?;
    if c2 % 2 != 0 || wf != spectrum_width(w) || h == 0 {
        return Err(FmsrError::shape(
            "irfft2",
            format!("[B, 2C, H, {}]", spectrum_width(w)),
            shape_str(z.shape()),
        ));
    }
    Ok(irfft2_with(&Plans::new(h, w), z))
}

pub fn rfft2<T: Scalar>(tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
    let [b, c, h, w] = x.value().dims4("rfft2")?;
    let plans = Plans::new(h, w);
    let out = rfft2_with(&plans, x.value());
    Ok(tape.record(out, &[x], move |g, _| {
        let wf = plans.wf();
        let (n, nf) = (h * w, h * wf);
        let mut dx = Tensor::zeros(&[b, c, h, w]);
        let mut spec = vec![Complex::new(T::zero(), T::zero()); nf];
        for bi in 0..b {
            for ci in 0..c {
                let re = &g.data()[(bi * 2 * c + ci) * nf..(bi * 2 * c + ci + 1) * nf];
                let im = &g.data()[(bi * 2 * c + c + ci) * nf..(bi * 2 * c + c + ci + 1) * nf];
                join_planes(re, im, &mut spec);
                plans.rfft2_adjoint(&mut spec, &mut dx.data_mut()[(bi * c + ci) * n..(bi * c + ci + 1) * n]);
            }
        }
        vec![Some(dx)]
    }))
}

pub fn irfft2<T: Scalar>(tape: &Tape<T>, z: &Var<T>, w: usize) -> Result<Var<T>> {
    let [b, c2, h, wf] = z.value().dims4("irfft2")?;
    if c2 % 2 != 0 || wf != spectrum_width(w) {
        return Err(FmsrError::shape(
            "irfft2",
            format!("[B, 2C, H, {}]", spectrum_width(w)),
            shape_str(z.shape()),
        ));
    }
    let plans = Plans::new(h, w);
    let out = irfft2_with(&plans, z.value());
    Ok(tape.record(out, &[z], move |g, _| {
        // gradient = m_k / (H·W) · rfft2(g), m_k = 1 on the DC/Nyquist columns, 2 elsewhere
        let mut dz = rfft2_with(&plans, g);
        let norm = T::one() / T::of((h * w) as f64);
        let two = T::of(2.0);
        for (idx, v) in dz.data_mut().iter_mut().enumerate() {
            let k = idx % wf;
            let single = k == 0 || (w % 2 == 0 && k == w / 2);
            *v *= if single { norm } else { two * norm };
        }
        debug_assert_eq!(dz.shape(), &[b, c2, h, wf]);
        vec![Some(dz)]
    }))
}

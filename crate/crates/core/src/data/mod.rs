//! Paired LR/HR synthesis, patch sampling and image files.

mod image_io;
mod resize;

pub use image_io::{list_pngs, quantize, read_manifest, ImageU8};
pub use resize::{bicubic_resize, cubic, AxisWeights, CUBIC_A};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// Smallest LR side accepted for training pairs.
pub const MIN_LR_SIDE: usize = 8;

/// Aligned low/high resolution pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample<T> {
    /// `[3, h, w]`.
    pub lr: Tensor<T>,
    /// `[3, s·h, s·w]`.
    pub hr: Tensor<T>,
    pub source: String,
    /// Top-left of the HR crop inside the source image.
    pub crop: (usize, usize),
}

impl<T: Scalar> PairedSample<T> {
    pub fn scale(&self) -> usize {
        self.hr.dim(1) / self.lr.dim(1)
    }
}

/// Crops `hr` (`[3, H, W]`) centrally to multiples of `s` and degrades it
/// with antialiased bicubic downscaling. Returns `None` if too small.
pub fn make_pair<T: Scalar>(hr: &Tensor<T>, s: usize, source: &str) -> Result<Option<PairedSample<T>>> {
    if s < 2 {
        return Err(FmsrError::Argument(format!("scale must be at least 2, got {s}")));
    }
    let (h, w) = match hr.shape() {
        &[3, h, w] => (h, w),
        other => return Err(FmsrError::shape("make_pair", "[3, H, W]", shape_str(other))),
    };
    if h < s * MIN_LR_SIDE || w < s * MIN_LR_SIDE {
        return Ok(None);
    }
    let (ch, cw) = (h / s * s, w / s * s);
    let (oy, ox) = ((h - ch) / 2, (w - cw) / 2);
    let hr = crop(hr, oy, ox, ch, cw);
    let lr = bicubic_resize(&hr, ch / s, cw / s, true)?;
    Ok(Some(PairedSample {
        lr,
        hr,
        source: source.to_string(),
        crop: (oy, ox),
    }))
}

/// [`make_pair`] over many images; undersized images are skipped with a warning.
pub fn make_pairs<T: Scalar>(hr_images: &[(String, Tensor<T>)], s: usize) -> Result<Vec<PairedSample<T>>> {
    let mut out = Vec::new();
    for (name, img) in hr_images {
        match make_pair(img, s, name)? {
            Some(p) => out.push(p),
            None => log::warn!(
                "skipping {name}: {}x{} is smaller than {}x{}",
                img.dim(2),
                img.dim(1),
                s * MIN_LR_SIDE,
                s * MIN_LR_SIDE
            ),
        }
    }
    Ok(out)
}

/// `[C, H, W]` window.
pub fn crop<T: Scalar>(img: &Tensor<T>, y: usize, x: usize, h: usize, w: usize) -> Tensor<T> {
    let (c, ih, iw) = (img.dim(0), img.dim(1), img.dim(2));
    assert!(y + h <= ih && x + w <= iw, "crop out of bounds");
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for row in y..y + h {
            let start = (ch * ih + row) * iw + x;
            data.extend_from_slice(&img.data()[start..start + w]);
        }
    }
    Tensor::from_vec(&[c, h, w], data).unwrap()
}

/// Draws aligned random crops from a set of pairs, deterministically in
/// the seed. Each batch item picks a pair uniformly, then an offset.
pub struct PatchSampler {
    rng: ChaCha8Rng,
    pub patch: usize,
    pub batch: usize,
    pub augment: bool,
}

impl PatchSampler {
    pub fn new(patch: usize, batch: usize, seed: u64) -> Self {
        PatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            patch,
            batch,
            augment: false,
        }
    }

    /// Random LR offset `(i, j)` for a pair, both in `0..=side − patch`.
    pub fn offset<T: Scalar>(&mut self, pair: &PairedSample<T>) -> Result<(usize, usize)> {
        let (h, w) = (pair.lr.dim(1), pair.lr.dim(2));
        if self.patch == 0 || self.patch > h || self.patch > w {
            return Err(FmsrError::Argument(format!(
                "patch {} does not fit LR image {h}x{w}",
                self.patch
            )));
        }
        Ok((self.rng.gen_range(0..=h - self.patch), self.rng.gen_range(0..=w - self.patch)))
    }

    /// `([batch, 3, p, p], [batch, 3, s·p, s·p])`.
    pub fn sample<T: Scalar>(&mut self, pairs: &[PairedSample<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
        if pairs.is_empty() {
            return Err(FmsrError::Argument("no training pairs".into()));
        }
        let p = self.patch;
        let mut lrs = Vec::with_capacity(self.batch);
        let mut hrs = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let pair = match pairs.len() {
                1 => &pairs[0],
                n => &pairs[self.rng.gen_range(0..n)],
            };
            let s = pair.scale();
            let (i, j) = self.offset(pair)?;
            let mut lr = crop(&pair.lr, i, j, p, p);
            let mut hr = crop(&pair.hr, s * i, s * j, s * p, s * p);
            if self.augment {
                let k = self.rng.gen_range(0..8);
                lr = dihedral(&lr, k);
                hr = dihedral(&hr, k);
            }
            lrs.push(lr);
            hrs.push(hr);
        }
        Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
    }
}

/// One batch of aligned crops from a single pair.
pub fn sample_patches<T: Scalar>(
    pair: &PairedSample<T>,
    patch: usize,
    batch: usize,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    PatchSampler::new(patch, batch, seed).sample(std::slice::from_ref(pair))
}

/// Element `k ∈ 0..8` of the dihedral group acting on the last two axes:
/// `k mod 4` counter-clockwise quarter turns, preceded by a horizontal
/// flip when `k ≥ 4`.
pub fn dihedral<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let nd = x.ndim();
    assert!(nd >= 2, "dihedral needs at least two axes");
    let (h, w) = (x.dim(nd - 2), x.dim(nd - 1));
    let planes = x.len() / (h * w);
    let flip = k >= 4;
    let rot = k % 4;
    let (oh, ow) = if rot % 2 == 0 { (h, w) } else { (w, h) };
    let mut out = Vec::with_capacity(x.len());
    for p in 0..planes {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                // source coordinates of output (i, j) under rotation
                let (y, xx) = match rot {
                    0 => (i, j),
                    1 => (j, w - 1 - i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (h - 1 - j, i),
                };
                let xx = if flip { w - 1 - xx } else { xx };
                out.push(src[y * w + xx]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::from_vec(&shape, out).unwrap()
}

/// Inverse of [`dihedral`] with the same `k`.
pub fn dihedral_inverse<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let inv = if k >= 4 { k } else { (4 - k) % 4 };
    dihedral(x, inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[1, h, w], (0..h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn divisibility_crop() {
        let hr = Tensor::<f32>::zeros(&[3, 641, 640]);
        let p = make_pair(&hr, 4, "x").unwrap().unwrap();
        assert_eq!(p.hr.shape(), &[3, 640, 640]);
        assert_eq!(p.lr.shape(), &[3, 160, 160]);
        assert_eq!(p.crop, (0, 0));
        assert!(make_pair(&Tensor::<f32>::zeros(&[3, 31, 64]), 4, "s").unwrap().is_none());
        assert!(make_pair(&hr, 1, "x").is_err());
    }

    #[test]
    fn constant_pair() {
        let hr = Tensor::<f64>::full(&[3, 40, 48], 0.25);
        let p = make_pair(&hr, 4, "c").unwrap().unwrap();
        assert!(p.lr.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn full_size_patch_is_the_pair() {
        let hr = Tensor::<f64>::rand_uniform(&[3, 32, 40], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let mut p = make_pair(&hr, 4, "r").unwrap().unwrap();
        p.lr = crop(&p.lr, 0, 0, 8, 8);
        p.hr = crop(&p.hr, 0, 0, 32, 32);
        let (lr, hrp) = sample_patches(&p, 8, 1, 3).unwrap();
        assert_eq!(lr.data(), p.lr.data());
        assert_eq!(hrp.data(), p.hr.data());
        assert!(sample_patches(&p, 9, 1, 3).is_err());
    }

    #[test]
    fn patches_are_aligned_and_seeded() {
        let hr = Tensor::<f64>::rand_uniform(&[3, 64, 64], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let p = make_pair(&hr, 4, "r").unwrap().unwrap();
        let a = sample_patches(&p, 5, 3, 9).unwrap();
        let b = sample_patches(&p, 5, 3, 9).unwrap();
        assert_eq!(a, b);
        let mut sampler = PatchSampler::new(5, 1, 9);
        let (i, j) = sampler.offset(&p).unwrap();
        assert_eq!(a.1.slice_outer(0), crop(&p.hr, 4 * i, 4 * j, 20, 20));
    }

    #[test]
    fn dihedral_group_actions() {
        let x = grid(2, 3);
        // quarter turn counter-clockwise of [[0,1,2],[3,4,5]]
        assert_eq!(dihedral(&x, 1).data(), &[2.0, 5.0, 1.0, 4.0, 0.0, 3.0]);
        assert_eq!(dihedral(&x, 2).data(), &[5.0, 4.0, 3.0, 2.0, 1.0, 0.0]);
        assert_eq!(dihedral(&x, 4).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        for k in 0..8 {
            assert_eq!(dihedral_inverse(&dihedral(&x, k), k), x, "k={k}");
        }
        let all: Vec<Tensor<f64>> = (0..8).map(|k| dihedral(&x, k)).collect();
        for a in 0..8 {
            for b in a + 1..8 {
                assert_ne!(all[a], all[b]);
            }
        }
    }
}

//! Luminance PSNR and SSIM.

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn f64s<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}

/// Studio-swing BT.601 luma of a `[3, H, W]` image in `[0, 1]`, as `[H, W]`.
pub fn rgb_to_y<T: Scalar>(img: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = match img.shape() {
        &[3, h, w] => (h, w),
        other => return Err(FmsrError::shape("rgb_to_y", "[3, H, W]", shape_str(other))),
    };
    let n = h * w;
    let d = img.data();
    let y = (0..n)
        .map(|i| {
            let (r, g, b) = (d[i].to_f64().unwrap(), d[n + i].to_f64().unwrap(), d[2 * n + i].to_f64().unwrap());
            T::of((16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0)
        })
        .collect();
    Tensor::from_vec(&[h, w], y)
}

/// `10·log10(peak² / MSE)`, or [`PSNR_CAP`] when the inputs are equal.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(FmsrError::shape("psnr", shape_str(a.shape()), shape_str(b.shape())));
    }
    if a.is_empty() {
        return Err(FmsrError::Argument("psnr of empty images".into()));
    }
    let mse = f64s(a)
        .iter()
        .zip(f64s(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Normalized separable Gaussian taps.
fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Gaussian-filtered `[h, w]` plane, valid positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for j in 0..ow {
            rows[y * ow + j] = (0..k).map(|t| g[t] * x[y * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM of two `[H, W]` images over valid window positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(FmsrError::shape("ssim", shape_str(a.shape()), shape_str(b.shape())));
    }
    let (h, w) = match a.shape() {
        &[h, w] if h >= SSIM_WINDOW && w >= SSIM_WINDOW => (h, w),
        other => {
            return Err(FmsrError::shape(
                "ssim",
                format!("[H, W] with sides ≥ {SSIM_WINDOW}"),
                shape_str(other),
            ))
        }
    };
    let g = gaussian(SSIM_WINDOW, SSIM_SIGMA);
    let (x, y) = (f64s(a), f64s(b));
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, h, w, &g));
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = sxx[i] - ma * ma;
            let vb = syy[i] - mb * mb;
            let cov = sxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Drops `shave` pixels from each border of the last two axes.
pub fn shave<T: Scalar>(img: &Tensor<T>, shave: usize) -> Result<Tensor<T>> {
    if shave == 0 {
        return Ok(img.clone());
    }
    let nd = img.ndim();
    let (h, w) = (img.dim(nd - 2), img.dim(nd - 1));
    if 2 * shave >= h || 2 * shave >= w {
        return Err(FmsrError::Argument(format!("cannot shave {shave} pixels from {h}x{w}")));
    }
    let (oh, ow) = (h - 2 * shave, w - 2 * shave);
    let planes = img.len() / (h * w);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for y in shave..h - shave {
            let start = p * h * w + y * w + shave;
            out.extend_from_slice(&img.data()[start..start + ow]);
        }
    }
    let mut shape = img.shape().to_vec();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::from_vec(&shape, out)
}

/// `(psnr, ssim)` on the luma of two `[3, H, W]` images.
pub fn y_metrics<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, border: usize) -> Result<(f64, f64)> {
    let ya = shave(&rgb_to_y(a)?, border)?;
    let yb = shave(&rgb_to_y(b)?, border)?;
    Ok((psnr(&ya, &yb, 1.0)?, ssim(&ya, &yb, 1.0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rgb(r: f64, g: f64, b: f64) -> Tensor<f64> {
        Tensor::from_vec(&[3, 1, 1], vec![r, g, b]).unwrap()
    }

    #[test]
    fn luma_examples() {
        assert!((rgb_to_y(&rgb(0.0, 0.0, 0.0)).unwrap().data()[0] - 16.0 / 255.0).abs() < 1e-15);
        assert!((rgb_to_y(&rgb(1.0, 1.0, 1.0)).unwrap().data()[0] - 235.0 / 255.0).abs() < 1e-12);
        let ys: Vec<f64> = (0..5)
            .map(|k| rgb_to_y(&rgb(k as f64 / 4.0, k as f64 / 4.0, k as f64 / 4.0)).unwrap().data()[0])
            .collect();
        for pair in ys.windows(2) {
            assert!((pair[1] - pair[0] - 0.25 * 219.0 / 255.0).abs() < 1e-12);
        }
        assert!(rgb_to_y(&Tensor::<f64>::zeros(&[1, 2, 2])).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::<f64>::zeros(&[4, 5]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        assert!(psnr(&a, &Tensor::ones(&[4, 5]), 1.0).unwrap().abs() < 1e-12);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros(&[5, 4]), 1.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::rand_uniform(&[20, 24], 0.0, 1.0, &mut rng);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let c1: f64 = 1e-4;
        let closed = c1 / (1.0 + c1);
        let got = ssim(&Tensor::<f64>::zeros(&[16, 16]), &Tensor::ones(&[16, 16]), 1.0).unwrap();
        assert!((got - closed).abs() < 1e-8, "{got} vs {closed}");
        let noise = Tensor::rand_uniform(&[20, 24], -1e-4, 1e-4, &mut rng);
        let b = a.zip_map(&noise, |x, n| x + n);
        assert!(ssim(&a, &b, 1.0).unwrap() > 0.999);
        assert!(ssim(&Tensor::<f64>::zeros(&[10, 30]), &Tensor::zeros(&[10, 30]), 1.0).is_err());
    }

    #[test]
    fn gaussian_taps() {
        let g = gaussian(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[10]);
        assert!((g[5] / g[4] - (1.0 / 4.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn shave_borders() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        assert_eq!(shave(&x, 1).unwrap().data(), &[5.0, 6.0, 9.0, 10.0]);
        assert!(shave(&x, 2).is_err());
    }

    fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        Tensor::rand_uniform(&[h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn metrics_are_symmetric(seed in 0u64..1000) {
            let (a, b) = (image(seed, 13, 15), image(seed + 1, 13, 15));
            prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            let (s1, s2) = (ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
            prop_assert!((s1 - s2).abs() < 1e-14);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }

        #[test]
        fn psnr_ignores_joint_permutation(seed in 0u64..1000) {
            let (a, b) = (image(seed, 6, 7), image(seed + 7, 6, 7));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..42).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
            let perm = |t: &Tensor<f64>| Tensor::from_vec(&[6, 7], order.iter().map(|&i| t.data()[i]).collect()).unwrap();
            let (p, q) = (psnr(&a, &b, 1.0).unwrap(), psnr(&perm(&a), &perm(&b), 1.0).unwrap());
            prop_assert!((p - q).abs() < 1e-10);
        }

        #[test]
        fn chroma_changes_leave_y_metrics(seed in 0u64..1000, dr in -0.05f64..0.05, db in -0.05f64..0.05) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::<f64>::rand_uniform(&[3, 12, 12], 0.2, 0.8, &mut rng);
            let b = Tensor::<f64>::rand_uniform(&[3, 12, 12], 0.2, 0.8, &mut rng);
            // shift R and B, then compensate in G to keep the luma fixed
            let dg = -(65.481 * dr + 24.966 * db) / 128.553;
            let mut a2 = a.clone();
            let n = 144;
            for i in 0..n {
                a2.data_mut()[i] += dr;
                a2.data_mut()[n + i] += dg;
                a2.data_mut()[2 * n + i] += db;
            }
            let (p1, s1) = y_metrics(&a, &b, 0).unwrap();
            let (p2, s2) = y_metrics(&a2, &b, 0).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-9);
            prop_assert!((s1 - s2).abs() < 1e-9);
        }
    }
}

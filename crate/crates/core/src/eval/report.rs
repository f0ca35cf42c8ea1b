//! Per-image metric tables for a directory or a set of pairs.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{list_pngs, make_pair, ImageU8, PairedSample};
use crate::error::{FmsrError, Result};
use crate::eval::metrics::y_metrics;
use crate::eval::upscale::{Bicubic, Upscaler};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const REPORT_HEADER: &str = "image,psnr,ssim,psnr_bicubic,ssim_bicubic";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub psnr_bicubic: f64,
    pub ssim_bicubic: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    /// Column means, labelled `mean`.
    pub fn mean(&self) -> Option<MetricRow> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let avg = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        Some(MetricRow {
            image: "mean".into(),
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            psnr_bicubic: avg(|r| r.psnr_bicubic),
            ssim_bicubic: avg(|r| r.ssim_bicubic),
        })
    }

    /// One row per image followed by the mean row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in self.rows.iter().chain(self.mean().as_ref()) {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.image, r.psnr, r.ssim, r.psnr_bicubic, r.ssim_bicubic
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| FmsrError::io(path, e))
    }
}

/// Upscales each pair's LR image and scores it, and plain bicubic, on
/// luma against the HR image after shaving `shave` border pixels.
pub fn evaluate_pairs<T: Scalar, U: Upscaler<T> + ?Sized>(
    up: &U,
    pairs: &[PairedSample<T>],
    shave: usize,
) -> Result<MetricReport> {
    let mut rows = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.scale() != up.scale() {
            return Err(FmsrError::Argument(format!(
                "{}: pair scale {} differs from upscaler scale {}",
                p.source,
                p.scale(),
                up.scale()
            )));
        }
        let batch = Tensor::stack(std::slice::from_ref(&p.lr))?;
        let sr = up.upscale(&batch)?.slice_outer(0);
        let bic = Bicubic(p.scale()).upscale(&batch)?.slice_outer(0);
        let (psnr, ssim) = y_metrics(&sr, &p.hr, shave)?;
        let (psnr_bicubic, ssim_bicubic) = y_metrics(&bic, &p.hr, shave)?;
        rows.push(MetricRow {
            image: p.source.clone(),
            psnr,
            ssim,
            psnr_bicubic,
            ssim_bicubic,
        });
    }
    Ok(MetricReport { rows })
}

/// Degrades every PNG in `hr_dir` at the upscaler's scale, then scores it
/// with [`evaluate_pairs`]. Images too small to degrade are skipped.
pub fn evaluate_dir<T: Scalar, U: Upscaler<T> + ?Sized>(
    up: &U,
    hr_dir: impl AsRef<Path>,
    shave: usize,
) -> Result<MetricReport> {
    let mut pairs = Vec::new();
    for path in list_pngs(hr_dir)? {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let hr = ImageU8::load(&path)?.to_tensor::<T>();
        match make_pair(&hr, up.scale(), &name)? {
            Some(p) => pairs.push(p),
            None => log::warn!("skipping {name}: too small for scale {}", up.scale()),
        }
    }
    evaluate_pairs(up, &pairs, shave)
}

use std::path::{Path, PathBuf};

use crate::error::{FmsrError, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, Tensor};

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub source: Option<PathBuf>,
}

/// `x·255`, rounded half away from zero, clamped to `[0, 255]`.
pub fn quantize(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(FmsrError::shape("ImageU8", format!("{} bytes", width * height * 3), pixels.len()));
        }
        Ok(ImageU8 {
            width,
            height,
            pixels,
            source: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| FmsrError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        Ok(ImageU8 {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            pixels: rgb.into_raw(),
            source: Some(path.to_path_buf()),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let err = |msg: String| FmsrError::Image {
            path: path.to_path_buf(),
            msg,
        };
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| err("pixel buffer does not match dimensions".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| err(e.to_string()))
    }

    /// `[3, H, W]` in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let hw = self.width * self.height;
        let mut data = vec![T::zero(); 3 * hw];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * hw + p] = T::of(px[c] as f64 / 255.0);
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], data).unwrap()
    }

    /// From `[3, H, W]` (or `[1, 3, H, W]`) values in `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match t.shape() {
            &[3, h, w] | &[1, 3, h, w] => (h, w),
            other => return Err(FmsrError::shape("ImageU8::from_tensor", "[3, H, W]", shape_str(other))),
        };
        let hw = h * w;
        let mut pixels = vec![0u8; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                pixels[3 * p + c] = quantize(t.data()[c * hw + p].to_f64().unwrap());
            }
        }
        ImageU8::new(w, h, pixels)
    }
}

/// Reads a manifest (one image path per line, `#` comments allowed).
/// Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| FmsrError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

/// PNG files of a directory, sorted by name.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| FmsrError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

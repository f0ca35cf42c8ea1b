//! Effective receptive field maps.

use std::fmt::Write as _;
use std::path::Path;

use crate::blocks::Conv;
use crate::data::ImageU8;
use crate::error::{FmsrError, Result};
use crate::model::Model;
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{shape_str, Tensor};

/// `Σ_c |∂(Σ_k out[k, cy, cx]) / ∂x[c]|` as an `[H, W]` grid, where
/// `(cy, cx)` is the central output pixel and `x` is `[1, 3, H, W]`.
/// `num_params` is the parameter count of the network `f` runs.
pub fn erf_grad<T: Scalar>(
    num_params: usize,
    input: &Tensor<T>,
    f: impl Fn(&Tape<T>, &Var<T>) -> Result<Var<T>>,
) -> Result<Tensor<f64>> {
    let [b, c, h, w] = input.dims4("erf")?;
    if b != 1 {
        return Err(FmsrError::shape("erf", "[1, C, H, W]", shape_str(input.shape())));
    }
    let tape = Tape::new(num_params);
    let x = tape.leaf(input.clone());
    let out = f(&tape, &x)?;
    let [_, oc, oh, ow] = out.value().dims4("erf output")?;
    let mut seed = Tensor::zeros(out.shape());
    for k in 0..oc {
        seed.data_mut()[(k * oh + oh / 2) * ow + ow / 2] = T::one();
    }
    let grads = tape.backward_with(&out, seed)?;
    let g = grads
        .get(&x)
        .ok_or_else(|| FmsrError::Argument("output does not depend on the input".into()))?;
    let mut map = vec![0.0; h * w];
    for ch in 0..c {
        for (m, v) in map.iter_mut().zip(&g.data()[ch * h * w..(ch + 1) * h * w]) {
            *m += v.to_f64().unwrap().abs();
        }
    }
    Tensor::from_vec(&[h, w], map)
}

/// ERF of the central output pixel of a super-resolution model.
pub fn model_erf<T: Scalar>(model: &Model<T>, input: &Tensor<T>) -> Result<Tensor<f64>> {
    erf_grad(model.num_params(), input, |tape, x| model.forward(tape, x))
}

/// Scales a raw map into `[0, 1]`, optionally as `log1p(v) / log1p(max)`.
pub fn normalize_erf(raw: &Tensor<f64>, log: bool) -> Tensor<f64> {
    let max = raw.data().iter().fold(0.0f64, |a, &b| a.max(b));
    if max == 0.0 {
        return raw.clone();
    }
    if log {
        let d = max.ln_1p();
        raw.map(|v| v.ln_1p() / d)
    } else {
        raw.map(|v| v / max)
    }
}

/// Writes the normalized map as a grayscale PNG (dark = strong gradient)
/// and the raw grid as comma-separated rows next to it (`.csv`).
pub fn save_erf(raw: &Tensor<f64>, png: impl AsRef<Path>, log: bool) -> Result<()> {
    let png = png.as_ref();
    let (h, w) = (raw.dim(0), raw.dim(1));
    let norm = normalize_erf(raw, log);
    let gray = norm.map(|v| 1.0 - v);
    let rgb = Tensor::stack(&[gray.clone(), gray.clone(), gray])?;
    ImageU8::from_tensor(&rgb)?.save(png)?;
    let mut csv = String::new();
    for y in 0..h {
        let row: Vec<String> = raw.data()[y * w..(y + 1) * w].iter().map(|v| format!("{v:e}")).collect();
        writeln!(csv, "{}", row.join(",")).unwrap();
    }
    let path = png.with_extension("csv");
    std::fs::write(&path, csv).map_err(|e| FmsrError::io(&path, e))
}

/// Three stacked 3×3 convolutions without nonlinearities: a network whose
/// receptive field is exactly 7×7.
#[derive(Clone, Debug)]
pub struct ConvStack<T> {
    pub convs: Vec<Conv<T>>,
}

impl<T: Scalar> ConvStack<T> {
    pub fn new(width: usize, seed: u64) -> Self {
        let pb = &mut ParamBuilder::new(seed);
        let convs = vec![
            Conv::init(pb, "conv0", 3, width, 3, 1),
            Conv::init(pb, "conv1", width, width, 3, 1),
            Conv::init(pb, "conv2", width, 3, 3, 1),
        ];
        ConvStack { convs }
    }

    pub fn forward(&self, tape: &Tape<T>, x: &Var<T>) -> Result<Var<T>> {
        let mut h = x.clone();
        for c in &self.convs {
            h = c.forward(tape, &h)?;
        }
        Ok(h)
    }

    pub fn erf(&self, input: &Tensor<T>) -> Result<Tensor<f64>> {
        erf_grad(self.num_params(), input, |tape, x| self.forward(tape, x))
    }
}

impl<T: Scalar> Module<T> for ConvStack<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for c in &self.convs {
            c.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for c in &mut self.convs {
            c.visit_mut(f);
        }
    }
}

//! Resolution scaling of one FMB against one multi-head self-attention layer.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockConfig, Fmb};
use crate::error::{FmsrError, Result};
use crate::flops::FlopCounter;
use crate::param::{Module, Param, ParamBuilder};
use crate::scalar::{gemm, Scalar};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BENCH_HEADER: &str = "size,block,params,flops,time_ms";
pub const DEFAULT_SIZES: [usize; 4] = [32, 48, 64, 88];
pub const FMB_WIDTH: usize = 144;
pub const MSA_WIDTH: usize = 180;
pub const MSA_HEADS: usize = 6;

/// One self-attention layer over flattened tokens: a fused QKV projection
/// and an output projection, both with bias.
#[derive(Clone, Debug)]
pub struct Msa<T> {
    pub qkv_w: Param<T>,
    pub qkv_b: Param<T>,
    pub proj_w: Param<T>,
    pub proj_b: Param<T>,
    pub heads: usize,
}

impl<T: Scalar> Msa<T> {
    pub fn new(dim: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(FmsrError::Config(format!("{heads} heads do not divide width {dim}")));
        }
        let pb = &mut ParamBuilder::new(seed);
        Ok(Msa {
            qkv_w: pb.fan_in("qkv.w", &[3 * dim, dim], dim),
            qkv_b: pb.fan_in("qkv.b", &[3 * dim], dim),
            proj_w: pb.fan_in("proj.w", &[dim, dim], dim),
            proj_b: pb.fan_in("proj.b", &[dim], dim),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.proj_b.numel()
    }

    /// `[N, d]` tokens to `[N, d]` tokens.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.dim();
        let n = match x.shape() {
            &[n, dd] if dd == d => n,
            other => return Err(FmsrError::shape("msa", format!("[N, {d}]"), crate::tensor::shape_str(other))),
        };
        let (heads, dh) = (self.heads, d / self.heads);
        let mut qkv = bias_rows(self.qkv_b.tensor().data(), n);
        gemm(n, d, 3 * d, x.data(), false, self.qkv_w.tensor().data(), true, T::one(), &mut qkv);
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut q = vec![T::zero(); n * dh];
        let mut k = vec![T::zero(); n * dh];
        let mut v = vec![T::zero(); n * dh];
        let mut scores = vec![T::zero(); n * n];
        let mut head_out = vec![T::zero(); n * dh];
        let mut merged = vec![T::zero(); n * d];
        for h in 0..heads {
            for t in 0..n {
                let row = &qkv[t * 3 * d..(t + 1) * 3 * d];
                q[t * dh..(t + 1) * dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
                k[t * dh..(t + 1) * dh].copy_from_slice(&row[d + h * dh..d + (h + 1) * dh]);
                v[t * dh..(t + 1) * dh].copy_from_slice(&row[2 * d + h * dh..2 * d + (h + 1) * dh]);
            }
            gemm(n, dh, n, &q, false, &k, true, T::zero(), &mut scores);
            for row in scores.chunks_exact_mut(n) {
                let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b * scale));
                let mut sum = T::zero();
                for s in row.iter_mut() {
                    *s = (*s * scale - max).exp();
                    sum = sum + *s;
                }
                let inv = sum.recip();
                row.iter_mut().for_each(|s| *s = *s * inv);
            }
            gemm(n, n, dh, &scores, false, &v, false, T::zero(), &mut head_out);
            for t in 0..n {
                merged[t * d + h * dh..t * d + (h + 1) * dh].copy_from_slice(&head_out[t * dh..(t + 1) * dh]);
            }
        }
        let mut out = bias_rows(self.proj_b.tensor().data(), n);
        gemm(n, d, d, &merged, false, self.proj_w.tensor().data(), true, T::one(), &mut out);
        Tensor::from_vec(&[n, d], out)
    }

    /// Multiply-accumulates for `n` tokens; softmax costs four pointwise
    /// operations per score.
    pub fn flops(&self, n: usize) -> u64 {
        let (n, d, heads) = (n as u64, self.dim() as u64, self.heads as u64);
        let projections = n * d * 3 * d + 3 * n * d + n * d * d + n * d;
        let attention = 2 * n * n * d;
        let softmax = 4 * heads * n * n;
        projections + attention + softmax
    }
}

impl<T: Scalar> Module<T> for Msa<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for p in [&self.qkv_w, &self.qkv_b, &self.proj_w, &self.proj_b] {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for p in [&mut self.qkv_w, &mut self.qkv_b, &mut self.proj_w, &mut self.proj_b] {
            f(p);
        }
    }
}

fn bias_rows<T: Scalar>(b: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * b.len());
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    out
}

/// `[1, C, H, W]` feature map to `[H·W, C]` tokens.
pub fn tokens<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c, h, w] = x.dims4("tokens")?;
    let n = h * w;
    let mut out = vec![T::zero(); n * c];
    for ch in 0..c {
        for (t, v) in x.data()[ch * n..(ch + 1) * n].iter().enumerate() {
            out[t * c + ch] = *v;
        }
    }
    Tensor::from_vec(&[n, c], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub size: usize,
    pub block: String,
    pub params: usize,
    pub flops: u64,
    /// Median wall time of the timed runs.
    pub time_ms: f64,
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_runs(runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?; // warm-up, discarded
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(times))
}

/// Times one FMB (width 144) and one MSA layer (width 180, 6 heads) on
/// `size × size` inputs, `runs` timed repetitions each after a warm-up.
pub fn bench_scaling(sizes: &[usize], runs: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    if runs == 0 {
        return Err(FmsrError::Argument("need at least one timed run".into()));
    }
    let fmb = Fmb::<f32>::init(&mut ParamBuilder::new(seed), &BlockConfig::new(FMB_WIDTH))?;
    let msa = Msa::<f32>::new(MSA_WIDTH, MSA_HEADS, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &s in sizes {
        let x = Tensor::<f32>::rand_uniform(&[1, FMB_WIDTH, s, s], -1.0, 1.0, &mut rng);
        let time_ms = time_runs(runs, || {
            fmb.forward(&Tape::inference(), &Var::constant(x.clone())).map(|_| ())
        })?;
        let mut fc = FlopCounter::new();
        fmb.count_flops(&mut fc, s, s);
        out.push(BenchRecord {
            size: s,
            block: "fmb".into(),
            params: fmb.count_params(),
            flops: fc.total(),
            time_ms,
        });
        let x = Tensor::<f32>::rand_uniform(&[1, MSA_WIDTH, s, s], -1.0, 1.0, &mut rng);
        let time_ms = time_runs(runs, || msa.forward(&tokens(&x)?).map(|_| ()))?;
        out.push(BenchRecord {
            size: s,
            block: "msa".into(),
            params: msa.count_params(),
            flops: msa.flops(s * s),
            time_ms,
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln time` against `ln tokens` for one block.
pub fn fit_exponent(records: &[BenchRecord], block: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.block == block)
        .map(|r| (((r.size * r.size) as f64).ln(), r.time_ms.ln()))
        .collect();
    log_log_slope(&pts)
}

pub fn log_log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bench_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("{BENCH_HEADER}\n");
    for r in records {
        writeln!(out, "{},{},{},{},{:.3}", r.size, r.block, r.params, r.flops, r.time_ms).unwrap();
    }
    out
}

pub fn write_bench_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bench_csv(records)).map_err(|e| FmsrError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_attention(msa: &Msa<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let (n, d) = (x.dim(0), x.dim(1));
        let dh = d / msa.heads;
        let lin = |w: &[f64], b: &[f64], rows: &[f64], out_dim: usize, in_dim: usize| -> Vec<f64> {
            let m = rows.len() / in_dim;
            let mut o = vec![0.0; m * out_dim];
            for t in 0..m {
                for j in 0..out_dim {
                    o[t * out_dim + j] = b[j] + (0..in_dim).map(|i| w[j * in_dim + i] * rows[t * in_dim + i]).sum::<f64>();
                }
            }
            o
        };
        let qkv = lin(msa.qkv_w.tensor().data(), msa.qkv_b.tensor().data(), x.data(), 3 * d, d);
        let mut merged = vec![0.0; n * d];
        for h in 0..msa.heads {
            for i in 0..n {
                let q = |t: usize, c: usize| qkv[t * 3 * d + h * dh + c];
                let k = |t: usize, c: usize| qkv[t * 3 * d + d + h * dh + c];
                let v = |t: usize, c: usize| qkv[t * 3 * d + 2 * d + h * dh + c];
                let s: Vec<f64> = (0..n)
                    .map(|j| (0..dh).map(|c| q(i, c) * k(j, c)).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = s.iter().map(|v| v.exp()).sum();
                for c in 0..dh {
                    merged[i * d + h * dh + c] = (0..n).map(|j| s[j].exp() / z * v(j, c)).sum();
                }
            }
        }
        lin(msa.proj_w.tensor().data(), msa.proj_b.tensor().data(), &merged, d, d)
    }

    #[test]
    fn msa_matches_naive_attention() {
        let msa = Msa::<f64>::new(12, 3, 4).unwrap();
        let x = Tensor::rand_uniform(&[7, 12], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let got = msa.forward(&x).unwrap();
        let want = naive_attention(&msa, &x);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn msa_budget() {
        let msa = Msa::<f32>::new(MSA_WIDTH, MSA_HEADS, 0).unwrap();
        assert_eq!(msa.count_params(), 4 * 180 * 180 + 4 * 180);
        assert_eq!(msa.count_params(), 130_320);
        let attn = |n: u64| 2 * n * n * 180;
        let ratio = attn(88 * 88) as f64 / attn(32 * 32) as f64;
        assert!((ratio - (88.0f64 * 88.0 / 1024.0).powi(2)).abs() < 1e-9);
        assert!(msa.flops(88 * 88) > msa.flops(32 * 32));
        assert!(Msa::<f32>::new(180, 7, 0).is_err());
    }

    #[test]
    fn tokens_transpose() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 1, 3], vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]).unwrap();
        assert_eq!(tokens(&x).unwrap().data(), &[0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
    }

    #[test]
    fn slope_and_median() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0].iter().map(|&n| (n.ln(), (3.0 * n * n).ln())).collect();
        assert!((log_log_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(median(vec![5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn small_bench_runs() {
        let recs = bench_scaling(&[8, 12], 1, 0).unwrap();
        assert_eq!(recs.len(), 4);
        let csv = bench_csv(&recs);
        assert!(csv.starts_with("size,block,params,flops,time_ms\n8,fmb,"));
        assert!(recs[2].flops > recs[0].flops && recs[3].flops > recs[1].flops);
    }
}

//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use fmsr::model::ModelConfig;
use fmsr::ssm::{ScanParams, StateConfig};
use fmsr::Tensor;

const DIRECTIONS: usize = 4;

fn conv_params(cin: usize, cout: usize, k: usize, groups: usize) -> usize {
    cout * (cin / groups) * k * k + cout
}

fn dt_rank(cfg: &ModelConfig) -> usize {
    let di = inner(cfg);
    cfg.dt_rank.unwrap_or(di.div_ceil(16))
}

fn inner(cfg: &ModelConfig) -> usize {
    (cfg.expand * cfg.channels as f64).round() as usize
}

fn fsm_convs(cfg: &ModelConfig) -> usize {
    match cfg.fsm_variant.to_string().as_str() {
        "a" => 1,
        "b" => 0,
        _ => 2,
    }
}

/// Parameter count per module, walked from the layer shapes alone.
/// Keys: `head`, `groups.G.blocks.B.<part>`, `groups.G.conv`, `body_tail`,
/// `up_conv`, `tail`.
pub fn param_oracle(cfg: &ModelConfig) -> BTreeMap<String, usize> {
    let (c, s, r) = (cfg.channels, cfg.scale, cfg.reduction);
    let (di, ds, dr, k) = (inner(cfg), cfg.d_state, dt_rank(cfg), cfg.dw_kernel);
    let scan = DIRECTIONS * (di * ds + di + (dr + 2 * ds) * di + di * dr + di);
    let vssm = conv_params(c, di, 1, 1) + conv_params(di, di, k, di) + scan + 2 * di + conv_params(c, di, 1, 1)
        + conv_params(di, c, 1, 1);
    let ca = conv_params(c, c / r, 1, 1) + conv_params(c / r, c, 1, 1);
    let hgm = conv_params(c, 2 * c, 1, 1)
        + conv_params(c, c, 1, 1)
        + conv_params(c, c, 3, c)
        + ca
        + conv_params(c, c, 1, 1)
        + conv_params(c, c, 1, 1);
    let fsm = fsm_convs(cfg) * conv_params(2 * c, 2 * c, 1, 1);

    let mut out = BTreeMap::new();
    out.insert("head".to_string(), conv_params(3, c, 3, 1));
    for g in 0..cfg.groups {
        for b in 0..cfg.blocks {
            let p = format!("groups.{g}.blocks.{b}");
            for (part, n) in [
                ("ln1", 2 * c),
                ("vssm", vssm),
                ("fsm_a", fsm),
                ("alpha_global", 1),
                ("ln2", 2 * c),
                ("hgm", hgm),
                ("fsm_b", fsm),
                ("alpha_local", 1),
            ] {
                if n > 0 {
                    out.insert(format!("{p}.{part}"), n);
                }
            }
        }
        out.insert(format!("groups.{g}.conv"), conv_params(c, c, 3, 1));
    }
    out.insert("body_tail".into(), conv_params(c, c, 3, 1));
    out.insert("up_conv".into(), conv_params(c, 3 * s * s, 3, 1));
    out.insert("tail".into(), conv_params(3, 3, 3, 1));
    out
}

/// Groups registry lines (`name shape count`) by the keys of [`param_oracle`].
pub fn registry_by_module(table: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for line in table.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let parts: Vec<&str> = f[0].split('.').collect();
        let depth = match parts.as_slice() {
            ["groups", _, "blocks", ..] => 5.min(parts.len()),
            ["groups", ..] => 3,
            _ => 1,
        };
        *out.entry(parts[..depth].join(".")).or_insert(0) += f[2].parse::<usize>().unwrap();
    }
    out
}

fn fft(h: usize, w: usize) -> u64 {
    let n = (h * w) as f64;
    if n <= 1.0 {
        0
    } else {
        (5.0 * n * n.log2()).round() as u64
    }
}

/// MACs of a stride-1 convolution plus one add per output for the bias.
fn conv_flops(cin: usize, cout: usize, k: usize, groups: usize, px: usize) -> u64 {
    (conv_params(cin, cout, k, groups) * px) as u64
}

/// FLOPs per top-level module at an `h × w` input: one per MAC, one per
/// pointwise op, `5·N·log₂N` per channel and 2D FFT, `2·d_state + 1` per
/// scanned token and channel.
pub fn flop_oracle(cfg: &ModelConfig, h: usize, w: usize) -> BTreeMap<&'static str, u64> {
    let (c, s, r) = (cfg.channels, cfg.scale, cfg.reduction);
    let (di, ds, dr, k) = (inner(cfg), cfg.d_state, dt_rank(cfg), cfg.dw_kernel);
    let px = h * w;
    let (cpx, dpx) = ((c * px) as u64, (di * px) as u64);
    let kd = DIRECTIONS as u64;

    let ln = |ch: u64| 4 * ch;
    let vssm = conv_flops(c, di, 1, 1, px)
        + conv_flops(di, di, k, di, px)
        + dpx
        + kd * ((dr + 2 * ds) * di * px) as u64
        + kd * ((di * dr + di) * px) as u64
        + kd * dpx
        + kd * dpx * (2 * ds + 1) as u64
        + kd * dpx
        + ln(dpx)
        + conv_flops(c, di, 1, 1, px)
        + 2 * dpx
        + conv_flops(di, c, 1, 1, px);
    let spec_px = h * (w / 2 + 1);
    let act = match fsm_convs(cfg) {
        1 => 0,
        _ => (2 * c * spec_px) as u64,
    };
    let fsm = 2 * c as u64 * fft(h, w) + fsm_convs(cfg) as u64 * conv_flops(2 * c, 2 * c, 1, 1, spec_px) + act;
    let ca = 2 * cpx + conv_flops(c, c / r, 1, 1, 1) + conv_flops(c / r, c, 1, 1, 1);
    let hgm = conv_flops(c, 2 * c, 1, 1, px)
        + conv_flops(c, c, 1, 1, px)
        + conv_flops(c, c, 3, c, px)
        + ca
        + conv_flops(c, c, 1, 1, px)
        + 2 * cpx
        + conv_flops(c, c, 1, 1, px);
    let block = ln(cpx) + vssm + fsm + 3 * cpx + ln(cpx) + hgm + fsm + 3 * cpx;
    let group = cfg.blocks as u64 * block + conv_flops(c, c, 3, 1, px) + cpx;

    BTreeMap::from([
        ("head", conv_flops(3, c, 3, 1, px)),
        ("groups", cfg.groups as u64 * group),
        ("body_tail", conv_flops(c, c, 3, 1, px)),
        ("global_skip", cpx),
        ("up_conv", conv_flops(c, 3 * s * s, 3, 1, px)),
        ("tail", conv_flops(3, 3, 3, 1, s * s * px)),
    ])
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Pixel coordinates in visiting order for each of the four directions.
fn traversal(h: usize, w: usize, k: usize) -> Vec<(usize, usize)> {
    let rows: Vec<_> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let cols: Vec<_> = (0..w).flat_map(|x| (0..h).map(move |y| (y, x))).collect();
    match k {
        0 => rows,
        1 => cols,
        2 => rows.into_iter().rev().collect(),
        _ => cols.into_iter().rev().collect(),
    }
}

/// Token-by-token evaluation of the 2D selective scan.
pub fn ss2d_loops(x: &Tensor<f64>, p: &ScanParams<f64>, cfg: &StateConfig) -> Tensor<f64> {
    let (bn, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let (dr, ds) = (cfg.dt_rank, cfg.d_state);
    let pw = cfg.proj_width();
    let (a_log, dsk, xw, dtw, dtb) = (
        p.a_log.tensor().data(),
        p.d_skip.tensor().data(),
        p.x_proj_w.tensor().data(),
        p.dt_proj_w.tensor().data(),
        p.dt_proj_b.tensor().data(),
    );
    let mut out = vec![0.0; bn * c * h * w];
    for b in 0..bn {
        for k in 0..4 {
            let mut state = vec![vec![0.0; ds]; c];
            for (y, xx) in traversal(h, w, k) {
                let u: Vec<f64> = (0..c).map(|ch| x.data()[((b * c + ch) * h + y) * w + xx]).collect();
                let proj: Vec<f64> = (0..pw)
                    .map(|j| (0..c).map(|ch| xw[(k * pw + j) * c + ch] * u[ch]).sum())
                    .collect();
                for ch in 0..c {
                    let pre: f64 = dtb[k * c + ch]
                        + (0..dr).map(|r| dtw[(k * c + ch) * dr + r] * proj[r]).sum::<f64>();
                    let dt = softplus(pre);
                    let mut yv = dsk[k * c + ch] * u[ch];
                    for s in 0..ds {
                        let a = -a_log[(k * c + ch) * ds + s].exp();
                        state[ch][s] = (dt * a).exp() * state[ch][s] + dt * u[ch] * proj[dr + s];
                        yv += proj[dr + ds + s] * state[ch][s];
                    }
                    out[((b * c + ch) * h + y) * w + xx] += yv;
                }
            }
        }
    }
    Tensor::from_vec(&[bn, c, h, w], out).unwrap()
}

/// Half spectrum by direct summation, stacked as `[re ‖ im]` channels.
pub fn naive_rfft(x: &Tensor<f64>) -> Tensor<f64> {
    let (b, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let wf = w / 2 + 1;
    let mut out = Tensor::zeros(&[b, 2 * c, h, wf]);
    for bi in 0..b {
        for ci in 0..c {
            for u in 0..h {
                for v in 0..wf {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for xx in 0..w {
                            let val = x.data()[((bi * c + ci) * h + y) * w + xx];
                            let th = -2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                            re += val * th.cos();
                            im += val * th.sin();
                        }
                    }
                    out.data_mut()[((bi * 2 * c + ci) * h + u) * wf + v] = re;
                    out.data_mut()[((bi * 2 * c + c + ci) * h + u) * wf + v] = im;
                }
            }
        }
    }
    out
}

/// Inverse of [`naive_rfft`], filling the missing bins by conjugate symmetry.
pub fn naive_irfft(z: &Tensor<f64>, w: usize) -> Tensor<f64> {
    let (b, c2, h, wf) = (z.dim(0), z.dim(1), z.dim(2), z.dim(3));
    let c = c2 / 2;
    let mut out = Tensor::zeros(&[b, c, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for u in 0..h {
                        for v in 0..w {
                            let (uu, vv, sign) = if v < wf { (u, v, 1.0) } else { ((h - u) % h, w - v, -1.0) };
                            let re = z.data()[((bi * c2 + ci) * h + uu) * wf + vv];
                            let im = sign * z.data()[((bi * c2 + c + ci) * h + uu) * wf + vv];
                            let th = 2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                            acc += re * th.cos() - im * th.sin();
                        }
                    }
                    out.data_mut()[((bi * c + ci) * h + y) * w + xx] = acc / (h * w) as f64;
                }
            }
        }
    }
    out
}

/// `y[o] = b[o] + Σ_i w[o, i] x[i]` at every pixel.
pub fn pointwise(x: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let (b, cin, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = weight.dim(0);
    let mut out = Tensor::zeros(&[b, cout, h, w]);
    for bi in 0..b {
        for o in 0..cout {
            for p in 0..h * w {
                let mut acc = bias.data()[o];
                for i in 0..cin {
                    acc += weight.data()[o * cin + i] * x.data()[(bi * cin + i) * h * w + p];
                }
                out.data_mut()[(bi * cout + o) * h * w + p] = acc;
            }
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

//! Built-in gradient and invariant suites, shared by the CLI `selftest`
//! command and the acceptance tests.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockConfig, Fmb, Fsm, FsmVariant, Hgm, LayerNorm, Vssm};
use crate::error::Result;
use crate::eval::{psnr, ssim};
use crate::model::{build_model, ModelConfig};
use crate::nn::{irfft2_forward, l1_loss, pixel_shuffle_forward, pixel_unshuffle_forward, rfft2_forward};
use crate::param::{Module, ParamBuilder};
use crate::ssm::{cross_merge_forward, cross_scan_forward, ss2d, ScanParams, StateConfig};
use crate::tape::Var;
use crate::tensor::Tensor;
use crate::train::checkpoint;
use crate::train::{grad_check, lr_schedule, GradCheckOptions, GradReport, OptimState, TrainConfig};

pub const BLOCK_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

/// Result of one named check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{mark} {:<28} {}", self.name, self.detail)
    }
}

fn from_report(name: &str, report: Result<GradReport>) -> Check {
    match report {
        Ok(r) => Check {
            name: name.into(),
            passed: r.passed(),
            detail: format!(
                "max rel err {:.3e} over {} tensors (tolerance {:.0e})",
                r.max_rel_err(),
                r.tensors.len(),
                r.tolerance
            ),
        },
        Err(e) => Check {
            name: name.into(),
            passed: false,
            detail: e.to_string(),
        },
    }
}

/// Adds `U(±amp)` to every parameter, so zero or unit initial values do
/// not hide terms of the gradient.
pub fn perturb<M: Module<f64>>(module: &mut M, amp: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    module.visit_mut(&mut |p| {
        for v in p.tensor_mut().data_mut() {
            *v += rng.gen_range(-amp..amp);
        }
    });
}

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_block() -> BlockConfig {
    BlockConfig {
        d_state: 2,
        reduction: 2,
        ..BlockConfig::new(4)
    }
}

pub fn check_layer_norm() -> Check {
    let mut ln = LayerNorm::<f64>::init(&mut ParamBuilder::new(1), "ln", 4);
    perturb(&mut ln, 0.5, 2);
    let x = input(&[2, 4, 3, 3], 3);
    let r = grad_check(&mut ln, &[("x", x)], |t, m, xs| m.forward(t, &xs[0]), GradCheckOptions::default());
    from_report("layer_norm", r)
}

pub fn check_ss2d() -> Check {
    let mut cfg = StateConfig::new(4, 3);
    cfg.dt_rank = 2;
    let mut p = ScanParams::<f64>::init(&mut ParamBuilder::new(4), &cfg);
    perturb(&mut p, 0.3, 5);
    let x = input(&[1, 4, 3, 4], 6);
    let r = grad_check(&mut p, &[("u", x)], |t, m, xs| ss2d(t, &xs[0], m, &cfg), GradCheckOptions::default());
    from_report("ss2d", r)
}

pub fn check_vssm() -> Check {
    let mut m = Vssm::<f64>::init(&mut ParamBuilder::new(7), &small_block()).unwrap();
    perturb(&mut m, 0.2, 8);
    let x = input(&[1, 4, 3, 3], 9);
    let r = grad_check(&mut m, &[("x", x)], |t, m, xs| m.forward(t, &xs[0]), GradCheckOptions::default());
    from_report("vssm", r)
}

pub fn check_fsm(variant: FsmVariant) -> Check {
    let mut m = Fsm::<f64>::init(&mut ParamBuilder::new(10), 2, variant);
    perturb(&mut m, 0.2, 11);
    let x = input(&[1, 2, 4, 4], 12);
    let r = grad_check(&mut m, &[("x", x)], |t, m, xs| m.forward(t, &xs[0]), GradCheckOptions::default());
    from_report(&format!("fsm ({variant})"), r)
}

pub fn check_hgm() -> Check {
    let mut m = Hgm::<f64>::init(&mut ParamBuilder::new(13), &small_block());
    perturb(&mut m, 0.2, 14);
    let x = input(&[1, 4, 3, 3], 15);
    let r = grad_check(&mut m, &[("x", x)], |t, m, xs| m.forward(t, &xs[0]), GradCheckOptions::default());
    from_report("hgm", r)
}

pub fn check_fmb() -> Check {
    let mut m = Fmb::<f64>::init(&mut ParamBuilder::new(16), &small_block()).unwrap();
    perturb(&mut m, 0.2, 17);
    let x = input(&[1, 4, 4, 4], 18);
    let r = grad_check(&mut m, &[("x", x)], |t, m, xs| m.forward(t, &xs[0]), GradCheckOptions::default());
    from_report("fmb", r)
}

/// L1 loss of the toy model on an 8×8 input, over 100 sampled weights.
pub fn check_model() -> Check {
    let mut m = build_model::<f64>(&ModelConfig::toy(), 19).unwrap();
    let x = Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(20));
    let y = Var::constant(Tensor::rand_uniform(&[1, 3, 32, 32], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(21)));
    let opts = GradCheckOptions {
        tolerance: MODEL_TOLERANCE,
        sample: Some(100),
        seed: 22,
        pooled: true,
        ..GradCheckOptions::default()
    };
    let r = grad_check(
        &mut m,
        &[("x", x)],
        |t, m, xs| l1_loss(t, &m.forward(t, &xs[0])?, &y),
        opts,
    );
    from_report("model (toy)", r)
}

pub fn gradient_suite() -> Vec<Check> {
    vec![
        check_layer_norm(),
        check_ss2d(),
        check_vssm(),
        check_fsm(FsmVariant::A),
        check_fsm(FsmVariant::B),
        check_fsm(FsmVariant::C),
        check_hgm(),
        check_fmb(),
        check_model(),
    ]
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

pub fn invariant_suite() -> Vec<Check> {
    let mut out = Vec::new();
    let x = input(&[2, 3, 5, 6], 30);

    let back = rfft2_forward(&x).and_then(|z| irfft2_forward(&z, 6));
    out.push(match back {
        Ok(b) => {
            let err = b.max_abs_diff(&x);
            check("fft roundtrip", err < 1e-12, format!("max abs err {err:.2e}"))
        }
        Err(e) => check("fft roundtrip", false, e.to_string()),
    });

    let merged = cross_scan_forward(&x).and_then(|s| cross_merge_forward(&s, 5, 6));
    out.push(match merged {
        Ok(m) => {
            let exact = m.data().iter().zip(x.data()).all(|(a, b)| *a == 4.0 * b);
            check("cross merge of scan", exact, "equals 4·identity".into())
        }
        Err(e) => check("cross merge of scan", false, e.to_string()),
    });

    let ps = input(&[2, 18, 3, 5], 31);
    let inv = pixel_shuffle_forward(&ps, 3).and_then(|y| pixel_unshuffle_forward(&y, 3));
    out.push(match inv {
        Ok(b) => check("pixel shuffle inverse", b == ps, "exact".into()),
        Err(e) => check("pixel shuffle inverse", false, e.to_string()),
    });

    let a = Tensor::<f64>::zeros(&[16, 16]);
    let b = Tensor::<f64>::ones(&[16, 16]);
    let c1: f64 = 1e-4;
    let s = ssim(&a, &b, 1.0).unwrap_or(f64::NAN);
    let same = ssim(&x.slice_outer(0).slice_outer(0), &x.slice_outer(0).slice_outer(0), 1.0);
    let p = psnr(&a, &a.map(|v| v + 0.1), 1.0).unwrap_or(f64::NAN);
    out.push(check(
        "metric closed forms",
        (s - c1 / (1.0 + c1)).abs() < 1e-8 && (p - 20.0).abs() < 1e-9 && same.is_err(),
        format!("ssim(0,1) {s:.6e}, psnr(+0.1) {p:.6}"),
    ));

    let cfg = TrainConfig::default();
    let lrs = [lr_schedule(0, &cfg), lr_schedule(199, &cfg), lr_schedule(200, &cfg), lr_schedule(400, &cfg)];
    out.push(check(
        "lr schedule",
        lrs == [1e-4, 1e-4, 5e-5, 2.5e-5],
        format!("{lrs:?}"),
    ));

    let model = build_model::<f32>(&ModelConfig { groups: 1, blocks: 1, channels: 8, reduction: 4, d_state: 2, ..ModelConfig::toy() }, 3);
    out.push(match model {
        Ok(model) => {
            let st = OptimState::new(&model);
            let first = checkpoint::encode(&model, &cfg, Some(&st));
            let second = checkpoint::decode::<f32>(&first)
                .map(|l| checkpoint::encode(&l.model, &l.train, l.optim.as_ref()));
            check(
                "checkpoint roundtrip",
                second.as_ref().is_ok_and(|s| *s == first),
                format!("{} bytes", first.len()),
            )
        }
        Err(e) => check("checkpoint roundtrip", false, e.to_string()),
    });
    out
}

/// Both suites, gradients first.
pub fn run() -> Vec<Check> {
    let mut all = gradient_suite();
    all.extend(invariant_suite());
    all
}

//! Central finite-difference verification of tape gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FmsrError, Result};
use crate::nn::weighted_sum;
use crate::param::{Module, Param};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check only this many randomly chosen elements across all tensors.
    pub sample: Option<usize>,
    /// Seeds the output projection and the element sample.
    pub seed: u64,
    /// Judge the probed elements as one vector instead of per tensor.
    /// Suited to sparse samples, where a tensor may contribute a single
    /// element whose true gradient is below the finite-difference noise.
    pub pooled: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            tolerance: 1e-5,
            sample: None,
            seed: 0,
            pooled: false,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        GradCheckOptions {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_err: f64,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|)`.
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
    /// All probed elements together, when checked in pooled mode.
    pub pooled: Option<TensorCheck>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        match &self.pooled {
            Some(p) => p.rel_err,
            None => self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max),
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tolerance
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        match &self.pooled {
            Some(p) if p.rel_err > self.tolerance => vec![p],
            Some(_) => Vec::new(),
            None => self.tensors.iter().filter(|t| t.rel_err > self.tolerance).collect(),
        }
    }
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale < 1e-12 {
        0.0
    } else {
        err / scale
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pooled = self.pooled.is_some();
        for t in self.tensors.iter().chain(&self.pooled) {
            let mark = if pooled && !t.name.starts_with('[') {
                ""
            } else if t.rel_err <= self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "{:<48} {:>6} elems  rel {:.3e}  abs {:.3e}  {mark}",
                t.name, t.checked, t.rel_err, t.max_abs_err
            )?;
        }
        write!(f, "max rel err {:.3e} (tolerance {:.1e})", self.max_rel_err(), self.tolerance)
    }
}

/// A module without parameters, for checking plain functions.
pub struct NoParams;

impl Module<f64> for NoParams {
    fn visit<'a>(&'a self, _: &mut dyn FnMut(&'a Param<f64>)) {}
    fn visit_mut(&mut self, _: &mut dyn FnMut(&mut Param<f64>)) {}
}

fn with_param<M: Module<f64>>(module: &mut M, index: usize, f: impl FnOnce(&mut Param<f64>)) {
    let mut f = Some(f);
    let mut i = 0;
    module.visit_mut(&mut |p| {
        if i == index {
            (f.take().unwrap())(p);
        }
        i += 1;
    });
}

/// Compares the tape gradient of `Σ R ⊙ f(module, inputs)` against central
/// differences for every parameter of `module` and every input, where `R`
/// is a fixed random projection of the output.
pub fn grad_check<M, F>(
    module: &mut M,
    inputs: &[(&str, Tensor<f64>)],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradReport>
where
    M: Module<f64>,
    F: Fn(&Tape<f64>, &M, &[Var<f64>]) -> Result<Var<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tape_params = module.params().iter().map(|p| p.index() + 1).max().unwrap_or(0);

    // analytic pass
    let tape = Tape::new(tape_params);
    let input_vars: Vec<Var<f64>> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = f(&tape, module, &input_vars)?;
    let projection = Tensor::rand_uniform(out.shape(), -1.0, 1.0, &mut rng);
    let loss = weighted_sum(&tape, &out, &projection)?;
    let grads = tape.backward(&loss)?;

    struct Target {
        name: String,
        analytic: Tensor<f64>,
        value: Tensor<f64>,
        param: Option<usize>,
    }
    let mut targets: Vec<Target> = Vec::new();
    for (i, p) in module.params().into_iter().enumerate() {
        let analytic = grads.by_id(p.index()).cloned().unwrap_or_else(|| Tensor::zeros(p.shape()));
        targets.push(Target {
            name: p.name().to_string(),
            analytic,
            value: p.tensor().clone(),
            param: Some(i),
        });
    }
    for ((name, t), v) in inputs.iter().zip(&input_vars) {
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        targets.push(Target {
            name: format!("input:{name}"),
            analytic,
            value: t.clone(),
            param: None,
        });
    }
    drop(grads);
    drop(tape);
    for t in &targets {
        if !t.analytic.all_finite() {
            return Err(FmsrError::NonFinite {
                name: t.name.clone(),
                step: None,
            });
        }
    }

    // (target, element) pairs to probe
    let total: usize = targets.iter().map(|t| t.value.len()).sum();
    let mut chosen: Vec<Vec<usize>> = vec![Vec::new(); targets.len()];
    let flat: Vec<usize> = match opts.sample {
        Some(k) if k < total => {
            let mut v = sample(&mut rng, total, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };
    let mut ti = 0;
    let mut offset = 0;
    for g in flat {
        while g >= offset + targets[ti].value.len() {
            offset += targets[ti].value.len();
            ti += 1;
        }
        chosen[ti].push(g - offset);
    }

    let eval = |module: &M, inputs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var<f64>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
        let out = f(&tape, module, &vars)?;
        Ok(out.value().data().iter().zip(projection.data()).map(|(a, b)| a * b).sum())
    };

    let mut input_values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut report = Vec::new();
    let (mut all_err, mut all_scale, mut all_count) = (0.0f64, 0.0f64, 0);
    for (t, elems) in targets.iter().zip(&chosen) {
        if elems.is_empty() {
            continue;
        }
        let (mut max_err, mut max_a, mut max_n) = (0.0f64, 0.0f64, 0.0f64);
        let input_slot = t
            .param
            .is_none()
            .then(|| targets.iter().filter(|x| x.param.is_none()).position(|x| x.name == t.name).unwrap());
        for &e in elems {
            let base = t.value.data()[e];
            let set = |v: f64, module: &mut M, input_values: &mut Vec<Tensor<f64>>| match (t.param, input_slot) {
                (Some(pi), _) => with_param(module, pi, |p| p.tensor_mut().data_mut()[e] = v),
                (None, Some(ii)) => input_values[ii].data_mut()[e] = v,
                (None, None) => unreachable!(),
            };
            set(base + opts.step, module, &mut input_values);
            let plus = eval(module, &input_values)?;
            set(base - opts.step, module, &mut input_values);
            let minus = eval(module, &input_values)?;
            set(base, module, &mut input_values);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = t.analytic.data()[e];
            max_err = max_err.max((analytic - numeric).abs());
            max_a = max_a.max(analytic.abs());
            max_n = max_n.max(numeric.abs());
        }
        let scale = max_a.max(max_n);
        let rel_err = relative(max_err, scale);
        all_err = all_err.max(max_err);
        all_scale = all_scale.max(scale);
        all_count += elems.len();
        report.push(TensorCheck {
            name: t.name.clone(),
            checked: elems.len(),
            max_abs_err: max_err,
            rel_err,
        });
    }
    let pooled = opts.pooled.then(|| TensorCheck {
        name: "[all probed elements]".into(),
        checked: all_count,
        max_abs_err: all_err,
        rel_err: relative(all_err, all_scale),
    });
    Ok(GradReport {
        tensors: report,
        pooled,
        tolerance: opts.tolerance,
    })
}

/// [`grad_check`] for a parameter-free function of the inputs.
pub fn grad_check_fn<F>(inputs: &[(&str, Tensor<f64>)], f: F, opts: GradCheckOptions) -> Result<GradReport>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    grad_check(&mut NoParams, inputs, |tape, _, xs| f(tape, xs), opts)
}

//! Training hyperparameters, the step-size schedule and ADAM.

use crate::config::{self, KeyValue};
use crate::error::{FmsrError, Result};
use crate::param::Module;
use crate::scalar::Scalar;
use crate::tape::Grads;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Initial learning rate.
    pub lr0: f64,
    /// The rate halves every this many epochs.
    pub halve_every: usize,
    /// Number of epochs.
    pub total: usize,
    /// Optimizer steps per epoch.
    pub steps_per_epoch: usize,
    pub batch: usize,
    /// LR patch side; HR patches are `scale` times larger.
    pub patch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Random flips and quarter turns of training patches.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            halve_every: 200,
            total: 500,
            steps_per_epoch: 100,
            batch: 4,
            patch: 64,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 50,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FmsrError::Config(msg));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.halve_every == 0 || self.halve_every > self.total {
            return bad(format!(
                "halve_every must be in 1..={}, got {}",
                self.total, self.halve_every
            ));
        }
        if self.batch == 0 || self.patch == 0 {
            return bad("batch and patch must be positive".into());
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total * self.steps_per_epoch
    }

    pub fn adam(&self) -> Adam {
        Adam {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

impl KeyValue for TrainConfig {
    fn set_key(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "lr0" => self.lr0 = config::value(key, v)?,
            "halve_every" => self.halve_every = config::value(key, v)?,
            "total" => self.total = config::value(key, v)?,
            "steps_per_epoch" => self.steps_per_epoch = config::value(key, v)?,
            "batch" => self.batch = config::value(key, v)?,
            "patch" => self.patch = config::value(key, v)?,
            "beta1" => self.beta1 = config::value(key, v)?,
            "beta2" => self.beta2 = config::value(key, v)?,
            "eps" => self.eps = config::value(key, v)?,
            "seed" => self.seed = config::value(key, v)?,
            "checkpoint_every" => self.checkpoint_every = config::value(key, v)?,
            "augment" => self.augment = config::flag(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr0", self.lr0.to_string()),
            ("halve_every", self.halve_every.to_string()),
            ("total", self.total.to_string()),
            ("steps_per_epoch", self.steps_per_epoch.to_string()),
            ("batch", self.batch.to_string()),
            ("patch", self.patch.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("seed", self.seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("augment", self.augment.to_string()),
        ]
    }
}

/// `lr0 · 0.5^⌊epoch / halve_every⌋`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.halve_every.max(1)) as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

/// First and second moments per parameter, in registry order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new<M: Module<T>>(model: &M) -> Self {
        let zeros: Vec<Tensor<T>> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn check<M: Module<T>>(&self, model: &M) -> Result<()> {
        let params = model.params();
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(FmsrError::shape("adam_step", format!("{} moment tensors", params.len()), self.m.len()));
        }
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            if m.shape() != p.shape() || v.shape() != p.shape() {
                return Err(FmsrError::shape("adam_step", p.name().to_string(), "moment shape differs"));
            }
        }
        Ok(())
    }
}

/// Pulls each parameter's gradient out of a backward result, in registry order.
pub fn param_grads<T: Scalar, M: Module<T>>(model: &M, mut grads: Grads<T>) -> Vec<Option<Tensor<T>>> {
    model.params().iter().map(|p| grads.take_by_id(p.index())).collect()
}

/// One bias-corrected ADAM update. Parameters whose gradient is `None`
/// are left untouched. Gradients are checked before anything changes, so
/// a non-finite gradient aborts without a partial update.
pub fn adam_step<T: Scalar, M: Module<T>>(
    model: &mut M,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimState<T>,
    lr: f64,
    adam: &Adam,
) -> Result<()> {
    state.check(model)?;
    let params = model.params();
    if grads.len() != params.len() {
        return Err(FmsrError::shape("adam_step", format!("{} gradients", params.len()), grads.len()));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            g.expect_shape("adam_step", p.shape())?;
            if !g.all_finite() {
                return Err(FmsrError::NonFinite {
                    name: p.name().to_string(),
                    step: Some(state.t as usize),
                });
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::of(1.0 - adam.beta1.powi(t));
    let bc2 = T::of(1.0 - adam.beta2.powi(t));
    let (b1, b2) = (T::of(adam.beta1), T::of(adam.beta2));
    let (one, lr, eps) = (T::one(), T::of(lr), T::of(adam.eps));
    let mut i = 0;
    model.visit_mut(&mut |p| {
        if let Some(g) = &grads[i] {
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (((w, &gv), mv), vv) in p.tensor_mut().data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        i += 1;
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::{Param, ParamBuilder};
    use proptest::prelude::*;

    struct One {
        w: Param<f64>,
    }

    impl Module<f64> for One {
        fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<f64>)) {
            f(&self.w);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
            f(&mut self.w);
        }
    }

    fn one(values: &[f64]) -> One {
        let mut pb = ParamBuilder::new(0);
        One {
            w: pb.add("w", Tensor::from_f64(&[values.len()], values).unwrap()),
        }
    }

    fn grad(values: &[f64]) -> Vec<Option<Tensor<f64>>> {
        vec![Some(Tensor::from_f64(&[values.len()], values).unwrap())]
    }

    #[test]
    fn schedule_halves() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-4);
        assert_eq!(lr_schedule(199, &cfg), 1e-4);
        assert_eq!(lr_schedule(200, &cfg), 5e-5);
        assert_eq!(lr_schedule(400, &cfg), 2.5e-5);
        assert_eq!(lr_schedule(499, &cfg), 2.5e-5);
    }

    #[test]
    fn scalar_recurrence() {
        let mut m = one(&[0.0]);
        let mut st = OptimState::new(&m);
        adam_step(&mut m, &grad(&[3.0]), &mut st, 1e-4, &Adam::default()).unwrap();
        let want = -1e-4 * (3.0 / (3.0 + 1e-8));
        assert!((m.w.tensor().data()[0] - want).abs() < 1e-18);
        assert!((m.w.tensor().data()[0] + 9.99999997e-5).abs() < 1e-13);
        // second step by hand
        let (mut mm, mut vv) = (0.3, 0.009);
        mm = 0.9 * mm + 0.1 * 1.0;
        vv = 0.999 * vv + 0.001 * 1.0;
        let step = 1e-4 * (mm / (1.0 - 0.81)) / ((vv / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        adam_step(&mut m, &grad(&[1.0]), &mut st, 1e-4, &Adam::default()).unwrap();
        assert!((m.w.tensor().data()[0] - (want - step)).abs() < 1e-18);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn sparse_gradient_can_exceed_lr() {
        // a long run of zero gradients shrinks v̂ faster than m̂
        let mut m = one(&[0.0]);
        let mut st = OptimState::new(&m);
        st.t = 1000;
        adam_step(&mut m, &grad(&[1.0]), &mut st, 1e-3, &Adam::default()).unwrap();
        let bc2 = 1.0 - 0.999f64.powi(1001);
        let want = 1e-3 * (0.1 / (1.0 - 0.9f64.powi(1001))) / ((0.001 / bc2).sqrt() + 1e-8);
        assert!((m.w.tensor().data()[0] + want).abs() < 1e-15);
        assert!(want > 2.0e-3);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut m = one(&[0.5, -2.0]);
        let mut st = OptimState::new(&m);
        adam_step(&mut m, &grad(&[0.0, 0.0]), &mut st, 1e-3, &Adam::default()).unwrap();
        assert_eq!(m.w.tensor().data(), &[0.5, -2.0]);
        adam_step(&mut m, &[None], &mut st, 1e-3, &Adam::default()).unwrap();
        assert_eq!(m.w.tensor().data(), &[0.5, -2.0]);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut m = one(&[1.0, 2.0]);
        let mut st = OptimState::new(&m);
        let err = adam_step(&mut m, &grad(&[0.1, f64::NAN]), &mut st, 1e-3, &Adam::default()).unwrap_err();
        assert!(matches!(&err, FmsrError::NonFinite { name, .. } if name == "w"), "{err}");
        assert_eq!(m.w.tensor().data(), &[1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn config_checks_and_pairs() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert!(TrainConfig { halve_every: 600, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..cfg.clone() }.validate().is_err());
        let mut back = TrainConfig { seed: 9, lr0: 0.5, ..TrainConfig::default() };
        let pairs: Vec<(String, String)> = cfg.to_pairs().into_iter().map(|(k, v)| (k.into(), v)).collect();
        config::apply(&pairs, &mut [&mut back]).unwrap();
        assert_eq!(back, cfg);
    }

    proptest! {
        #[test]
        fn first_step_moves_by_lr(g in prop::collection::vec(-1e3f64..1e3, 1..8), lr in 1e-6f64..1e-1) {
            let mut m = one(&vec![0.0; g.len()]);
            let mut st = OptimState::new(&m);
            adam_step(&mut m, &grad(&g), &mut st, lr, &Adam::default()).unwrap();
            for (&w, &gv) in m.w.tensor().data().iter().zip(&g) {
                prop_assert!(w.abs() <= lr * (1.0 + 1e-12));
                if gv.abs() > 1e-3 {
                    prop_assert!((w + lr * gv.signum()).abs() <= lr * 1e-4);
                }
            }
        }

        #[test]
        fn constant_gradient_steps_stay_within_lr(g in prop::collection::vec(-10f64..10.0, 3), steps in 1usize..50) {
            let mut m = one(&[0.0; 3]);
            let mut st = OptimState::new(&m);
            for _ in 0..steps {
                let before = m.w.tensor().clone();
                adam_step(&mut m, &grad(&g), &mut st, 1e-3, &Adam::default()).unwrap();
                prop_assert!(m.w.tensor().max_abs_diff(&before) <= 1e-3 * (1.0 + 1e-9));
            }
        }
    }
}

//! Named trainable tensors and the registry that assigns their tape ids.

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// A trainable tensor. Its tape id equals its position in the owning
/// registry, so a recording [`Tape`](crate::tape::Tape) created with the
/// registry length tracks it without copying.
#[derive(Clone, Debug)]
pub struct Param<T> {
    name: String,
    var: Var<T>,
}

impl<T: Scalar> Param<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn index(&self) -> usize {
        self.var.id().expect("parameters always carry an id")
    }

    pub fn var(&self) -> &Var<T> {
        &self.var
    }

    pub fn tensor(&self) -> &Tensor<T> {
        self.var.value()
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        self.var.value_mut()
    }

    pub fn numel(&self) -> usize {
        self.var.value().len()
    }

    pub fn set(&mut self, value: Tensor<T>) {
        assert_eq!(value.shape(), self.tensor().shape(), "{}: shape change", self.name);
        *self.var.value_mut() = value;
    }

    pub fn fill(&mut self, value: T) {
        self.tensor_mut().data_mut().fill(value);
    }
}

impl<T> Deref for Param<T> {
    type Target = Var<T>;

    fn deref(&self) -> &Var<T> {
        &self.var
    }
}

/// Walks parameters in registry order.
pub trait Module<T: Scalar> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push(p));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    fn count_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.numel());
        n
    }
}

/// Allocates parameters with sequential ids, hierarchical names and
/// seeded initial values.
pub struct ParamBuilder {
    next_id: usize,
    prefix: Vec<String>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            next_id: 0,
            prefix: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.next_id
    }

    pub fn is_empty(&self) -> bool {
        self.next_id == 0
    }

    pub fn scoped<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub fn add<T: Scalar>(&mut self, name: &str, value: Tensor<T>) -> Param<T> {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        let id = self.next_id;
        self.next_id += 1;
        Param {
            name: full,
            var: Var::with_id(id, value),
        }
    }

    /// Uniform in `±1/√fan_in`, the default for convolution and linear layers.
    pub fn fan_in<T: Scalar>(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Param<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::rand_uniform(shape, -bound, bound, &mut self.rng);
        self.add(name, t)
    }

    pub fn constant<T: Scalar>(&mut self, name: &str, shape: &[usize], value: f64) -> Param<T> {
        self.add(name, Tensor::full(shape, T::of(value)))
    }
}

/// Helper for `Module::visit` implementations over a list of fields.
#[macro_export]
macro_rules! visit_fields {
    ($self:ident, $f:ident; $($field:ident),* $(,)?) => {
        $( $f(&$self.$field); )*
    };
}

#[macro_export]
macro_rules! visit_fields_mut {
    ($self:ident, $f:ident; $($field:ident),* $(,)?) => {
        $( $f(&mut $self.$field); )*
    };
}

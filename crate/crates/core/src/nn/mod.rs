//! Learnable image-domain blocks: channel-attention blocks, prompt blocks and
//! the 3-level U-Nets built from them.

mod cab;
mod layers;
mod prompt;
mod unet;

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub use cab::Cab;
pub use layers::{Conv2d, ConvTranspose2x2, Linear};
pub use prompt::PromptBlock;
pub use unet::{NetConfig, PromptConfig, PromptLevel, Unet};

/// LeakyReLU slope used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Instance-norm stabilizer.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, value: Tensor) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a tensor; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", cur.shape(), value.shape()));
        }
        self.values[id.0] = Rc::new(value);
        Ok(())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::config(alloc::format!("unknown parameter {name}")))?;
        self.set(id, value)
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for i in 0..self.values.len() {
            if self.names[i].starts_with(prefix) {
                Rc::make_mut(&mut self.values[i]).data_mut().fill(0.0);
            }
        }
    }

    /// Registers every parameter as a differentiable leaf of `tape`.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf_rc(v.clone())).collect(),
        }
    }
}

/// Parameters of a [`ParamStore`] bound to one tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps externally created variables, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Gradients for every parameter, in store order.
    pub fn grads(&self, grads: &Grads) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.wrt_or_zero(v)).collect()
    }
}

/// Parameter factory with a name prefix and a seeded generator.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = if bound > 0.0 {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            (0..n).map(|_| dist.sample(self.rng)).collect()
        } else {
            alloc::vec![0.0; n]
        };
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn unit_uniform(&mut self, name: String, shape: &[usize]) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random::<f64>()).collect();
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, value))
    }
}

/// Default fan-in bound `1/sqrt(fan_in)`.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / math::sqrt(fan_in.max(1) as f64)
}

#[cfg(test)]
mod tests;

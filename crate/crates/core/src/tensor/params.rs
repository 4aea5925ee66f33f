use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, Gradients, Tape, Tensor};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Glorot-uniform over the last two extents.
    Xavier,
    Uniform(f64, f64),
    Normal(f64),
}

/// Named, ordered collection of model weights.
///
/// Each parameter's random initialization is seeded from the store seed and
/// the parameter name, so adding or removing a parameter never perturbs the
/// others.
#[derive(Clone, Debug)]
pub struct ParamStore {
    seed: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { seed, names: Vec::new(), values: Vec::new() }
    }

    /// Generator seeded from the store seed and `name`, for custom inits.
    pub fn rng_for(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name))
    }

    pub fn init(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let mut rng = self.rng_for(name);
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::Const(v) => Tensor::full(shape, v),
            Init::Xavier => {
                let (fan_in, fan_out) = match shape.len() {
                    0 => (1, 1),
                    1 => (shape[0], shape[0]),
                    n => (shape[n - 2], shape[n - 1]),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::uniform(shape, -a, a, &mut rng)
            }
            Init::Uniform(lo, hi) => Tensor::uniform(shape, lo, hi, &mut rng),
            Init::Normal(std) => Tensor::randn(shape, std, &mut rng),
        };
        self.insert(name, t)
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter name `{name}`");
        self.names.push(name.to_string());
        self.values.push(value.detach());
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape("set", &[self.values[id.0].shape(), value.shape()]));
        }
        self.values[id.0] = value.detach();
        Ok(())
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Register every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &Tape) -> Params {
        Params { tensors: self.values.iter().map(|v| tape.leaf(v)).collect() }
    }

    /// Untracked view for inference.
    pub fn frozen(&self) -> Params {
        Params { tensors: self.values.clone() }
    }

    /// Apply one optimizer update using gradients of `bound` leaves.
    pub fn step(&mut self, opt: &mut Adam, bound: &Params, grads: &Gradients) -> Result<()> {
        for (name, leaf) in self.names.iter().zip(&bound.tensors) {
            match grads.get(leaf) {
                None => return Err(Error::MissingGradient(name.clone())),
                Some(g) if !g.all_finite() => return Err(Error::NonFiniteGradient(name.clone())),
                Some(_) => {}
            }
        }
        opt.step(&mut self.values, &bound.tensors, grads)
    }
}

/// Parameter values for one forward pass, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Params {
    tensors: Vec<Tensor>,
}

impl Params {
    /// Values in store order, e.g. perturbed copies for gradient checks.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Params { tensors }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}

impl Index<ParamId> for Params {
    type Output = Tensor;

    fn index(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}

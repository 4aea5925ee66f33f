//! Layers shared by the graph beamformer and the text codec.
//!
//! A layer holds only [`ParamId`]s into a [`ParamStore`]; values are read from
//! a [`Params`] view per forward pass, so the same layer runs on a training
//! tape or frozen for inference.

use crate::error::{Error, Result};
use crate::tensor::{Init, ParamId, ParamStore, Params, Tape, Tensor};

#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        let w = store.init(&format!("{name}.w"), &[in_dim, out_dim], Init::Xavier);
        let b = bias.then(|| store.init(&format!("{name}.b"), &[out_dim], Init::Zeros));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let y = tape.matmul(x, &p[self.w])?;
        match self.b {
            Some(b) => tape.add(&y, &p[b]),
            None => Ok(y),
        }
    }
}

/// Normalization over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.init(&format!("{name}.gamma"), &[dim], Init::Ones),
            beta: store.init(&format!("{name}.beta"), &[dim], Init::Zeros),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let n = tape.layernorm(x, self.eps)?;
        tape.add(&tape.mul(&n, &p[self.gamma])?, &p[self.beta])
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize) -> Self {
        let table = store.init(&format!("{name}.table"), &[vocab, dim], Init::Normal(1.0 / (dim as f64).sqrt()));
        Embedding { table, vocab, dim }
    }

    /// Rows of the table for `ids`, shape `(ids.len(), dim)`.
    pub fn forward(&self, tape: &Tape, p: &Params, ids: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary of {}", self.vocab)));
        }
        tape.gather(&p[self.table], ids)
    }
}

/// Multi-head scaled dot-product attention over `(B, L, D)` inputs.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("width {dim} is not divisible into {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true),
            heads,
            dim,
        })
    }

    fn split(&self, tape: &Tape, x: &Tensor) -> Result<Tensor> {
        let (b, l) = (x.shape()[0], x.shape()[1]);
        let r = tape.reshape(x, &[b, l, self.heads, self.dim / self.heads])?;
        tape.transpose(&r, 1, 2)
    }

    /// Attend from `xq (B, Lq, D)` to `xkv (B, Lk, D)`. With `causal`, query
    /// `i` sees keys `0..=i` only.
    pub fn forward(&self, tape: &Tape, p: &Params, xq: &Tensor, xkv: &Tensor, causal: bool) -> Result<Tensor> {
        if xq.rank() != 3 || xkv.rank() != 3 || xq.shape()[2] != self.dim || xkv.shape()[2] != self.dim {
            return Err(Error::shape("attention", &[xq.shape(), xkv.shape(), &[self.dim]]));
        }
        let (b, lq, lk) = (xq.shape()[0], xq.shape()[1], xkv.shape()[1]);
        let q = self.split(tape, &self.q.forward(tape, p, xq)?)?;
        let k = self.split(tape, &self.k.forward(tape, p, xkv)?)?;
        let v = self.split(tape, &self.v.forward(tape, p, xkv)?)?;
        let kt = tape.transpose(&k, 2, 3)?;
        let scale = 1.0 / ((self.dim / self.heads) as f64).sqrt();
        let mut scores = tape.scale(&tape.matmul(&q, &kt)?, scale)?;
        if causal {
            let mask: Vec<f64> = (0..lq).flat_map(|i| (0..lk).map(move |j| if j <= i { 0.0 } else { -1e9 })).collect();
            scores = tape.add(&scores, &Tensor::new(&[lq, lk], mask)?)?;
        }
        let att = tape.softmax(&scores)?;
        let ctx = tape.transpose(&tape.matmul(&att, &v)?, 1, 2)?;
        let merged = tape.reshape(&ctx, &[b, lq, self.dim])?;
        self.o.forward(tape, p, &merged)
    }
}

/// Position-wise two-layer perceptron with a ReLU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true),
        }
    }

    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let h = tape.relu(&self.up.forward(tape, p, x)?)?;
        self.down.forward(tape, p, &h)
    }
}

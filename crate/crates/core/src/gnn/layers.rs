use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::ssm::{MambaBlock, MambaBlockConfig};
use crate::tensor::{Init, ParamId, ParamStore, Params, Tape, Tensor};
use crate::wireless::{BeamformingDecision, NetworkConfig};

/// Keeps the power normalization finite when the head emits all zeros.
const NORM_EPS: f64 = 1e-12;

const LEAKY_SLOPE: f64 = 0.2;

/// Multi-head graph attention over all node pairs with residual and
/// normalization: `LN(x + W_o [Σ_j α_ij W_r x_j])`.
///
/// Scores are pairwise and additive, `e_ij = aᵀ LeakyReLU(W_l x_i + W_r x_j)`
/// per head, so every edge carries `O(width)` work and the layer is
/// quadratic in the node count.
#[derive(Clone, Debug)]
pub struct GatLayer {
    src: Linear,
    dst: Linear,
    att: ParamId,
    out: Linear,
    norm: LayerNorm,
    pub width: usize,
    pub heads: usize,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("width {width} is not divisible into {heads} heads")));
        }
        let s = (1.0 / (width / heads) as f64).sqrt();
        Ok(GatLayer {
            src: Linear::new(store, &format!("{name}.src"), width, width, true),
            dst: Linear::new(store, &format!("{name}.dst"), width, width, false),
            att: store.init(&format!("{name}.att"), &[width], Init::Uniform(-s, s)),
            out: Linear::new(store, &format!("{name}.out"), width, width, true),
            norm: LayerNorm::new(store, &format!("{name}.norm"), width),
            width,
            heads,
        })
    }

    /// `x` is `(B, K, width)`.
    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let (b, k) = match *x.shape() {
            [b, k, d] if d == self.width => (b, k),
            _ => return Err(Error::shape("gat_layer", &[x.shape(), &[self.width]])),
        };
        let (d, h) = (self.width, self.heads);
        let dh = d / h;
        let zl = tape.reshape(&self.src.forward(tape, p, x)?, &[b * k, d])?;
        let zr = tape.reshape(&self.dst.forward(tape, p, x)?, &[b * k, d])?;

        // Row (s, i, j) of the pair tensors pairs node i with node j of sample s.
        let (mut rows_i, mut rows_j) = (Vec::with_capacity(b * k * k), Vec::with_capacity(b * k * k));
        for s in 0..b {
            for i in 0..k {
                for j in 0..k {
                    rows_i.push(s * k + i);
                    rows_j.push(s * k + j);
                }
            }
        }
        let pair = tape.add(&tape.gather(&zl, &rows_i)?, &tape.gather(&zr, &rows_j)?)?;
        let act = tape.add(&tape.scale(&tape.relu(&pair)?, 1.0 - LEAKY_SLOPE)?, &tape.scale(&pair, LEAKY_SLOPE)?)?;
        let e = tape.mul(&act, &p[self.att])?;
        let e = tape.sum_axis(&tape.reshape(&e, &[b, k, k, h, dh])?, 4)?;
        // (B, K, K, H) -> (B, H, K, K), softmax over neighbours j.
        let e = tape.transpose(&tape.transpose(&e, 2, 3)?, 1, 2)?;
        let alpha = tape.softmax(&e)?;

        let v = tape.transpose(&tape.reshape(&zr, &[b, k, h, dh])?, 1, 2)?;
        let ctx = tape.transpose(&tape.matmul(&alpha, &v)?, 1, 2)?;
        let msg = self.out.forward(tape, p, &tape.reshape(&ctx, &[b, k, d])?)?;
        self.norm.forward(tape, p, &tape.add(x, &msg)?)
    }
}

pub fn gat_layer(tape: &Tape, p: &Params, layer: &GatLayer, x: &Tensor) -> Result<Tensor> {
    layer.forward(tape, p, x)
}

/// A Mamba block run over the nodes serialized in a given order and in the
/// reverse order; the two outputs are averaged and scattered back to nodes.
#[derive(Clone, Debug)]
pub struct MambaGraphLayer {
    pub block: MambaBlock,
}

impl MambaGraphLayer {
    pub fn new(store: &mut ParamStore, name: &str, config: MambaBlockConfig) -> Result<Self> {
        Ok(MambaGraphLayer { block: MambaBlock::new(store, name, config)? })
    }

    /// `x` is `(B, K, width)`; `orders[b]` is a permutation of `0..K`.
    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor, orders: &[Vec<usize>]) -> Result<Tensor> {
        let (b, k, d) = match *x.shape() {
            [b, k, d] => (b, k, d),
            _ => return Err(Error::shape("mamba_graph_layer", &[x.shape()])),
        };
        if orders.len() != b || orders.iter().any(|o| !is_permutation(o, k)) {
            return Err(Error::InvalidArgument(format!("need {b} node orders over {k} nodes")));
        }
        // Rows 0..B*K hold the forward serializations, B*K..2*B*K the reversed.
        let mut serialize = Vec::with_capacity(2 * b * k);
        for (s, o) in orders.iter().enumerate() {
            serialize.extend(o.iter().map(|&n| s * k + n));
        }
        for (s, o) in orders.iter().enumerate() {
            serialize.extend(o.iter().rev().map(|&n| s * k + n));
        }
        let flat = tape.reshape(x, &[b * k, d])?;
        let seq = tape.gather(&flat, &serialize)?;
        let seq = tape.reshape(&seq, &[2 * b, k, d])?;
        let out = self.block.forward(tape, p, &seq)?;
        let out = tape.reshape(&out, &[2 * b * k, d])?;

        // Position of each node in its sample's forward sequence.
        let mut fwd = vec![0; b * k];
        let mut rev = vec![0; b * k];
        for (s, o) in orders.iter().enumerate() {
            for (pos, &n) in o.iter().enumerate() {
                fwd[s * k + n] = s * k + pos;
                rev[s * k + n] = b * k + s * k + (k - 1 - pos);
            }
        }
        let a = tape.gather(&out, &fwd)?;
        let r = tape.gather(&out, &rev)?;
        let avg = tape.scale(&tape.add(&a, &r)?, 0.5)?;
        tape.reshape(&avg, &[b, k, d])
    }
}

fn is_permutation(o: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    o.len() == k && o.iter().all(|&i| i < k && !std::mem::replace(&mut seen[i], true))
}

pub fn mamba_graph_layer(
    tape: &Tape,
    p: &Params,
    layer: &MambaGraphLayer,
    x: &Tensor,
    orders: &[Vec<usize>],
) -> Result<Tensor> {
    layer.forward(tape, p, x, orders)
}

/// Per-node linear head to `2Nt` reals plus a pooled power fraction.
#[derive(Clone, Debug)]
pub struct Decoder {
    head: Linear,
    power: Linear,
    pub nt: usize,
}

/// Beamformers as `(B, K, Nt)` real and imaginary parts.
pub type BeamTensors = (Tensor, Tensor);

impl Decoder {
    /// The head sees the node embedding next to the node's input features.
    pub fn new(store: &mut ParamStore, name: &str, width: usize, nt: usize) -> Self {
        Decoder {
            head: Linear::new(store, &format!("{name}.head"), width + 2 * nt, 2 * nt, true),
            power: Linear::new(store, &format!("{name}.power"), width, 1, true),
            nt,
        }
    }

    pub fn power_bias(&self) -> ParamId {
        self.power.bias().expect("power head has a bias")
    }

    pub fn head_weight(&self) -> ParamId {
        self.head.weight()
    }

    /// Scales the head output jointly so `Σ‖w_k‖² = p·P_max`, `p = sigmoid(pool)`.
    pub fn forward(&self, tape: &Tape, p: &Params, h: &Tensor, x: &Tensor, p_max: f64) -> Result<BeamTensors> {
        let (b, k) = (h.shape()[0], h.shape()[1]);
        if x.shape() != [b, k, 2 * self.nt] {
            return Err(Error::shape("decoder", &[h.shape(), x.shape()]));
        }
        let raw = self.head.forward(tape, p, &tape.concat(&[h, x], 2)?)?;
        let flat = tape.reshape(&raw, &[b, k * 2 * self.nt])?;
        let norm = tape.add_scalar(&tape.sum_axis(&tape.square(&flat)?, 1)?, NORM_EPS)?;
        let pooled = tape.mean_axis(h, 1)?;
        let frac = tape.reshape(&tape.sigmoid(&self.power.forward(tape, p, &pooled)?)?, &[b])?;
        let scale = tape.sqrt(&tape.div(&tape.scale(&frac, p_max)?, &norm)?)?;
        let w = tape.scale_rows(&raw, &scale)?;
        Ok((tape.slice_last(&w, 0, self.nt)?, tape.slice_last(&w, self.nt, self.nt)?))
    }
}

/// Split batched beamformer tensors into per-sample decisions, each projected
/// onto the power budget so rounding can never make one infeasible.
pub fn to_decisions(w: &BeamTensors, p_max: f64) -> Vec<BeamformingDecision> {
    let (re, im) = (w.0.data(), w.1.data());
    let (b, k, nt) = (w.0.shape()[0], w.0.shape()[1], w.0.shape()[2]);
    (0..b)
        .map(|s| {
            let span = s * k * nt..(s + 1) * k * nt;
            BeamformingDecision { k, nt, re: re[span.clone()].to_vec(), im: im[span].to_vec() }.project_to_budget(p_max)
        })
        .collect()
}

pub fn decode_beamformers(
    tape: &Tape,
    p: &Params,
    decoder: &Decoder,
    h: &Tensor,
    x: &Tensor,
    config: &NetworkConfig,
) -> Result<Vec<BeamformingDecision>> {
    Ok(to_decisions(&decoder.forward(tape, p, h, x, config.p_max)?, config.p_max))
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TokenSequence, END, START};
use crate::error::{Error, Result};
use crate::nn::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::ssm::{MambaBlock, MambaBlockConfig};
use crate::tensor::{ParamStore, Params, Tape, Tensor};
use crate::wireless::SymbolFrame;

const PREFIX: &str = "jscd/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JscdModelConfig {
    pub width: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    /// Real channel symbols per token.
    pub channel_dim: usize,
    /// Longest sequence, markers included.
    pub max_len: usize,
    /// Mamba block between the semantic encoder and the channel encoder.
    pub mamba_tx: bool,
    /// Mamba block between the channel decoder and the semantic decoder.
    pub mamba_rx: bool,
    pub mamba_d_state: usize,
    pub mamba_expand: usize,
    pub mamba_conv_width: usize,
}

impl Default for JscdModelConfig {
    fn default() -> Self {
        JscdModelConfig {
            width: 128,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_hidden: 256,
            channel_dim: 16,
            max_len: 32,
            mamba_tx: true,
            mamba_rx: true,
            mamba_d_state: 16,
            mamba_expand: 2,
            mamba_conv_width: 4,
        }
    }
}

impl JscdModelConfig {
    /// The same codec with both Mamba insertions removed.
    pub fn baseline(&self) -> Self {
        JscdModelConfig { mamba_tx: false, mamba_rx: false, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("width {} not divisible into {} heads", self.width, self.heads)));
        }
        if self.channel_dim == 0 || self.ffn_hidden == 0 || self.max_len < 3 {
            return Err(Error::Config(format!("degenerate codec sizes: {self:?}")));
        }
        self.block_config().validate()
    }

    fn block_config(&self) -> MambaBlockConfig {
        MambaBlockConfig {
            d_model: self.width,
            d_state: self.mamba_d_state,
            expand: self.mamba_expand,
            conv_width: self.mamba_conv_width,
            pre_norm: true,
            residual: true,
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &JscdModelConfig) -> Result<Self> {
        Ok(EncoderLayer {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), c.width, c.heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c.width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c.width, c.ffn_hidden),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c.width),
        })
    }

    fn forward(&self, tape: &Tape, p: &Params, x: &Tensor) -> Result<Tensor> {
        let x = self.norm1.forward(tape, p, &tape.add(x, &self.attn.forward(tape, p, x, x, false)?)?)?;
        self.norm2.forward(tape, p, &tape.add(&x, &self.ffn.forward(tape, p, &x)?)?)
    }
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ffn: FeedForward,
    norm3: LayerNorm,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &JscdModelConfig) -> Result<Self> {
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), c.width, c.heads)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), c.width),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), c.width, c.heads)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), c.width),
            ffn: FeedForward::new(store, &format!("{name}.ffn"), c.width, c.ffn_hidden),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), c.width),
        })
    }

    fn forward(&self, tape: &Tape, p: &Params, x: &Tensor, memory: &Tensor) -> Result<Tensor> {
        let x = self.norm1.forward(tape, p, &tape.add(x, &self.self_attn.forward(tape, p, x, x, true)?)?)?;
        let x = self.norm2.forward(tape, p, &tape.add(&x, &self.cross_attn.forward(tape, p, &x, memory, false)?)?)?;
        self.norm3.forward(tape, p, &tape.add(&x, &self.ffn.forward(tape, p, &x)?)?)
    }
}

/// Transformer semantic codec around a dense channel codec. Weights are
/// seeded per name, so a baseline and a Mamba-enabled model built from the
/// same seed share every common weight.
#[derive(Clone, Debug)]
pub struct JscdModel {
    pub config: JscdModelConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    embed: Embedding,
    encoder: Vec<EncoderLayer>,
    tx_block: Option<MambaBlock>,
    chan_enc: (Linear, Linear),
    chan_dec: (Linear, Linear, LayerNorm),
    rx_block: Option<MambaBlock>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
    positions: Tensor,
    use_tx: bool,
    use_rx: bool,
}

fn sinusoidal(len: usize, dim: usize) -> Tensor {
    let data = (0..len)
        .flat_map(|pos| {
            (0..dim).map(move |i| {
                let angle = pos as f64 / 10_000f64.powf((i / 2 * 2) as f64 / dim as f64);
                if i % 2 == 0 {
                    angle.sin()
                } else {
                    angle.cos()
                }
            })
        })
        .collect();
    Tensor::new(&[len, dim], data).expect("shape matches data")
}

impl JscdModel {
    pub fn new(config: JscdModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size <= END {
            return Err(Error::InvalidArgument(format!("vocabulary of {vocab_size} has no words")));
        }
        let c = &config;
        let (d, h2) = (c.width, 2 * c.width);
        let mut s = ParamStore::new(seed);
        let embed = Embedding::new(&mut s, "embed", vocab_size, d);
        let encoder =
            (0..c.encoder_layers).map(|i| EncoderLayer::new(&mut s, &format!("enc{i}"), c)).collect::<Result<_>>()?;
        let tx_block = c.mamba_tx.then(|| MambaBlock::new(&mut s, "tx_mamba", c.block_config())).transpose()?;
        let chan_enc = (
            Linear::new(&mut s, "chan_enc.0", d, h2, true),
            Linear::new(&mut s, "chan_enc.1", h2, c.channel_dim, true),
        );
        let chan_dec = (
            Linear::new(&mut s, "chan_dec.0", c.channel_dim, h2, true),
            Linear::new(&mut s, "chan_dec.1", h2, d, true),
            LayerNorm::new(&mut s, "chan_dec.norm", d),
        );
        let rx_block = c.mamba_rx.then(|| MambaBlock::new(&mut s, "rx_mamba", c.block_config())).transpose()?;
        let decoder =
            (0..c.decoder_layers).map(|i| DecoderLayer::new(&mut s, &format!("dec{i}"), c)).collect::<Result<_>>()?;
        let head = Linear::new(&mut s, "head", d, vocab_size, true);
        Ok(JscdModel {
            positions: sinusoidal(c.max_len, d),
            use_tx: c.mamba_tx,
            use_rx: c.mamba_rx,
            config,
            vocab_size,
            store: s,
            embed,
            encoder,
            tx_block,
            chan_enc,
            chan_dec,
            rx_block,
            decoder,
            head,
        })
    }

    /// Bypass built Mamba blocks without removing their weights.
    pub fn set_mamba_active(&mut self, tx: bool, rx: bool) -> Result<()> {
        if (tx && self.tx_block.is_none()) || (rx && self.rx_block.is_none()) {
            return Err(Error::InvalidArgument("cannot activate a Mamba block that was not built".into()));
        }
        self.use_tx = tx;
        self.use_rx = rx;
        Ok(())
    }

    /// Token embeddings scaled by `sqrt(width)` plus positions, `(B, L, width)`.
    fn embed_tokens(&self, tape: &Tape, p: &Params, ids: &[Vec<usize>]) -> Result<Tensor> {
        let (b, l) = (ids.len(), ids.first().map_or(0, Vec::len));
        if b == 0 || l == 0 || ids.iter().any(|s| s.len() != l) {
            return Err(Error::InvalidArgument("token batch must be nonempty with equal lengths".into()));
        }
        if l > self.config.max_len {
            return Err(Error::LengthCap { len: l, cap: self.config.max_len });
        }
        let d = self.config.width;
        let flat: Vec<usize> = ids.concat();
        let e = tape.reshape(&self.embed.forward(tape, p, &flat)?, &[b, l, d])?;
        let pos = Tensor::new(&[l, d], self.positions.data()[..l * d].to_vec())?;
        tape.add(&tape.scale(&e, (d as f64).sqrt())?, &pos)
    }

    /// Channel symbols `(B, L, channel_dim)`, each sample scaled to unit mean
    /// power.
    pub fn encode(&self, tape: &Tape, p: &Params, ids: &[Vec<usize>]) -> Result<Tensor> {
        let mut x = self.embed_tokens(tape, p, ids)?;
        for layer in &self.encoder {
            x = layer.forward(tape, p, &x)?;
        }
        if self.use_tx {
            x = self.tx_block.as_ref().expect("checked on activation").forward(tape, p, &x)?;
        }
        let z = self.chan_enc.1.forward(tape, p, &tape.relu(&self.chan_enc.0.forward(tape, p, &x)?)?)?;
        let b = z.shape()[0];
        let flat = tape.reshape(&z, &[b, z.numel() / b])?;
        let rms = tape.sqrt(&tape.mean_axis(&tape.square(&flat)?, 1)?)?;
        let inv = tape.div(&Tensor::ones(&[b]), &rms)?;
        tape.scale_rows(&z, &inv)
    }

    /// Decoder memory `(B, L, width)` from received symbols `(B, L, channel_dim)`.
    pub fn memory(&self, tape: &Tape, p: &Params, received: &Tensor) -> Result<Tensor> {
        let (l0, l1, norm) = &self.chan_dec;
        let y = l1.forward(tape, p, &tape.relu(&l0.forward(tape, p, received)?)?)?;
        let y = norm.forward(tape, p, &y)?;
        if self.use_rx {
            return self.rx_block.as_ref().expect("checked on activation").forward(tape, p, &y);
        }
        Ok(y)
    }

    /// Next-token logits `(B, T, vocab)` for decoder inputs `(B, T)`.
    pub fn logits(&self, tape: &Tape, p: &Params, memory: &Tensor, inputs: &[Vec<usize>]) -> Result<Tensor> {
        let mut x = self.embed_tokens(tape, p, inputs)?;
        for layer in &self.decoder {
            x = layer.forward(tape, p, &x, memory)?;
        }
        self.head.forward(tape, p, &x)
    }

    /// Greedy decoding against `memory (1, L, width)`; stops at the end
    /// marker or the length cap.
    pub fn greedy(&self, p: &Params, memory: &Tensor) -> Result<TokenSequence> {
        let cap = self.config.max_len;
        let mut ids = vec![START];
        while ids.len() < cap - 1 {
            let logits = self.logits(&Tape::new(), p, memory, &[ids.clone()])?;
            let v = self.vocab_size;
            let last = &logits.data()[(ids.len() - 1) * v..ids.len() * v];
            let next = last
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0;
            if next == END {
                break;
            }
            ids.push(next);
        }
        ids.push(END);
        TokenSequence::new(ids, cap, self.vocab_size)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.store.save(path, PREFIX)
    }

    pub fn load(config: JscdModelConfig, vocab_size: usize, path: impl AsRef<Path>) -> Result<Self> {
        let mut m = JscdModel::new(config, vocab_size, 0)?;
        m.store.load(path, PREFIX)?;
        Ok(m)
    }
}

/// Encode one sentence into a unit-power frame of `len * channel_dim` symbols.
pub fn transmit_encode(seq: &TokenSequence, model: &JscdModel) -> Result<SymbolFrame> {
    if seq.len() > model.config.max_len {
        return Err(Error::LengthCap { len: seq.len(), cap: model.config.max_len });
    }
    let z = model.encode(&Tape::new(), &model.store.frozen(), &[seq.ids().to_vec()])?;
    Ok(SymbolFrame::new(z.to_vec()).normalize())
}

/// Channel-decode a received frame and greedily decode tokens.
pub fn receive_decode(frame: &SymbolFrame, model: &JscdModel) -> Result<TokenSequence> {
    let c = model.config.channel_dim;
    let n = frame.data.len();
    if n == 0 || !n.is_multiple_of(c) || n / c > model.config.max_len {
        return Err(Error::shape("receive_decode", &[&[n], &[c, model.config.max_len]]));
    }
    let p = model.store.frozen();
    let received = Tensor::new(&[1, n / c, c], frame.data.clone())?;
    let memory = model.memory(&Tape::new(), &p, &received)?;
    model.greedy(&p, &memory)
}

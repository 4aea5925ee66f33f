use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{to_decisions, BeamTensors, Decoder, GatLayer, MambaGraphLayer};
use super::{FeatureStats, GraphBatch, OrderingPolicy};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::ssm::MambaBlockConfig;
use crate::tensor::checkpoint::{read_records, write_records};
use crate::tensor::{ParamStore, Params, Tape, Tensor};
use crate::wireless::{energy_efficiency, BeamformingDecision, ChannelRealization, NetworkConfig};

const PREFIX: &str = "gnn/";
/// Inference batch; bounds tape memory when scoring large sets.
const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Attention,
    Mamba,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridModelConfig {
    pub layers: usize,
    pub attention_layers: Vec<usize>,
    pub mamba_layers: Vec<usize>,
    pub width: usize,
    pub heads: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub ordering: OrderingPolicy,
}

impl Default for HybridModelConfig {
    /// Four layers, Mamba at the even indices.
    fn default() -> Self {
        HybridModelConfig {
            layers: 4,
            attention_layers: vec![1, 3],
            mamba_layers: vec![0, 2],
            width: 64,
            heads: 4,
            d_state: 16,
            expand: 2,
            conv_width: 4,
            ordering: OrderingPolicy::DescendingNorm,
        }
    }
}

impl HybridModelConfig {
    pub fn hybrid() -> Self {
        Self::default()
    }

    /// Same sizes with every layer realized as graph attention.
    pub fn pure_gat() -> Self {
        let d = Self::default();
        HybridModelConfig { attention_layers: (0..d.layers).collect(), mamba_layers: vec![], ..d }
    }

    /// Every attention and Mamba index appears exactly once and together they
    /// cover `0..layers`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![0u8; self.layers];
        for &i in self.attention_layers.iter().chain(&self.mamba_layers) {
            match seen.get_mut(i) {
                Some(c) => *c += 1,
                None => return Err(Error::Config(format!("layer index {i} outside 0..{}", self.layers))),
            }
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(Error::Config(format!(
                "layer {i} must be exactly one of attention or mamba (appears {} times)",
                seen[i]
            )));
        }
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("width {} not divisible into {} heads", self.width, self.heads)));
        }
        self.block_config().validate()
    }

    pub fn kind(&self, layer: usize) -> LayerKind {
        if self.mamba_layers.contains(&layer) {
            LayerKind::Mamba
        } else {
            LayerKind::Attention
        }
    }

    pub fn block_config(&self) -> MambaBlockConfig {
        MambaBlockConfig {
            d_model: self.width,
            d_state: self.d_state,
            expand: self.expand,
            conv_width: self.conv_width,
            pre_norm: true,
            residual: true,
        }
    }
}

#[derive(Clone, Debug)]
pub enum GraphLayer {
    Attention(GatLayer),
    Mamba(MambaGraphLayer),
}

impl GraphLayer {
    pub fn forward(&self, tape: &Tape, p: &Params, x: &Tensor, orders: &[Vec<usize>]) -> Result<Tensor> {
        match self {
            GraphLayer::Attention(l) => l.forward(tape, p, x),
            GraphLayer::Mamba(l) => l.forward(tape, p, x, orders),
        }
    }
}

/// Input projection, the configured layer stack and the beamformer decoder.
#[derive(Clone, Debug)]
pub struct BeamformerModel {
    pub config: HybridModelConfig,
    pub nt: usize,
    pub store: ParamStore,
    pub stats: FeatureStats,
    input: Linear,
    pub layers: Vec<GraphLayer>,
    pub decoder: Decoder,
}

impl BeamformerModel {
    /// Parameters are seeded per name, so two models built with the same seed
    /// share every identically named weight.
    pub fn new(config: HybridModelConfig, nt: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let input = Linear::new(&mut store, "input", 2 * nt, config.width, true);
        let layers = (0..config.layers)
            .map(|i| {
                let name = format!("layer{i}");
                Ok(match config.kind(i) {
                    LayerKind::Attention => {
                        GraphLayer::Attention(GatLayer::new(&mut store, &name, config.width, config.heads)?)
                    }
                    LayerKind::Mamba => {
                        GraphLayer::Mamba(MambaGraphLayer::new(&mut store, &name, config.block_config())?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = Decoder::new(&mut store, "decoder", config.width, nt);
        Ok(BeamformerModel { config, nt, store, stats: FeatureStats::identity(2 * nt), input, layers, decoder })
    }

    pub fn batch(&self, channels: &[&ChannelRealization]) -> Result<GraphBatch> {
        GraphBatch::new(channels, &self.stats, self.config.ordering)
    }

    /// Node embeddings after the layer stack, `(B, K, width)`.
    pub fn embed(&self, tape: &Tape, p: &Params, batch: &GraphBatch) -> Result<Tensor> {
        let mut h = self.input.forward(tape, p, &batch.features)?;
        for layer in &self.layers {
            h = layer.forward(tape, p, &h, &batch.orders)?;
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &Tape, p: &Params, batch: &GraphBatch, p_max: f64) -> Result<BeamTensors> {
        let h = self.embed(tape, p, batch)?;
        self.decoder.forward(tape, p, &h, &batch.features, p_max)
    }

    /// Beamformers for each channel, evaluated without recording. Channels of
    /// different sizes are batched separately.
    pub fn predict(&self, channels: &[ChannelRealization], config: &NetworkConfig) -> Result<Vec<BeamformingDecision>> {
        let p = self.store.frozen();
        let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, h) in channels.iter().enumerate() {
            groups.entry((h.k, h.nt)).or_default().push(i);
        }
        let chunks: Vec<&[usize]> = groups.values().flat_map(|g| g.chunks(EVAL_CHUNK)).collect();
        let decided: Vec<Vec<BeamformingDecision>> = chunks
            .par_iter()
            .map(|idx| {
                let refs: Vec<&ChannelRealization> = idx.iter().map(|&i| &channels[i]).collect();
                let batch = self.batch(&refs)?;
                Ok(to_decisions(&self.forward(&Tape::new(), &p, &batch, config.p_max)?, config.p_max))
            })
            .collect::<Result<_>>()?;
        let mut out = vec![None; channels.len()];
        for (idx, ws) in chunks.iter().zip(decided) {
            for (&i, w) in idx.iter().zip(ws) {
                out[i] = Some(w);
            }
        }
        Ok(out.into_iter().map(|w| w.expect("every channel is in one chunk")).collect())
    }

    /// Energy efficiency of the model's decisions, scored by the reference
    /// evaluator rather than the training loss.
    pub fn evaluate(&self, channels: &[ChannelRealization], config: &NetworkConfig) -> Result<Vec<f64>> {
        let w = self.predict(channels, config)?;
        channels.iter().zip(&w).map(|(h, w)| Ok(energy_efficiency(h, w, config)?.ee)).collect()
    }

    /// Weights and feature statistics under the `gnn/` prefix.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mean = Tensor::vector(self.stats.mean.clone());
        let std = Tensor::vector(self.stats.std.clone());
        let records: Vec<(String, &Tensor)> = self
            .store
            .iter()
            .map(|(n, t)| (format!("{PREFIX}{n}"), t))
            .chain([(format!("{PREFIX}stats.mean"), &mean), (format!("{PREFIX}stats.std"), &std)])
            .collect();
        write_records(BufWriter::new(File::create(path)?), records.into_iter())
    }

    pub fn load(config: HybridModelConfig, nt: usize, path: impl AsRef<Path>) -> Result<Self> {
        let mut model = BeamformerModel::new(config, nt, 0)?;
        model.store.load(path.as_ref(), PREFIX)?;
        let records = read_records(BufReader::new(File::open(path)?))?;
        let stat = |name: &str| {
            records
                .iter()
                .find(|(n, _)| *n == format!("{PREFIX}stats.{name}"))
                .map(|(_, t)| t.to_vec())
                .filter(|v| v.len() == 2 * nt)
                .ok_or_else(|| Error::Checkpoint(format!("missing feature statistic `{name}`")))
        };
        model.stats = FeatureStats { mean: stat("mean")?, std: stat("std")? };
        Ok(model)
    }
}

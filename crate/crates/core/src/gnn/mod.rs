//! Graph beamformer: users are nodes of a fully connected graph, node
//! features are their channels, and a stack of graph-attention and Mamba
//! layers maps features to per-user beamforming vectors.

mod bench;
mod layers;
mod loss;
mod model;
mod train;

pub use bench::{benchmark_inference, benchmark_layers, random_graph_batch, write_latency_csv, LatencyRow};
pub use layers::{decode_beamformers, gat_layer, mamba_graph_layer, Decoder, GatLayer, MambaGraphLayer};
pub use loss::ee_on_tape;
pub use model::{BeamformerModel, GraphLayer, HybridModelConfig, LayerKind};
pub use train::{evaluate_ratio, train_beamformer, write_curve_csv, CurveRow, TrainConfig, TrainedBeamformer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wireless::ChannelRealization;

/// How nodes are serialized into a sequence for Mamba layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingPolicy {
    /// Strongest channel first; ties broken by the lower user index.
    #[default]
    DescendingNorm,
    /// User index order.
    Index,
}

impl OrderingPolicy {
    pub fn order(&self, h: &ChannelRealization) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..h.k).collect();
        if *self == OrderingPolicy::DescendingNorm {
            let norms: Vec<f64> = (0..h.k).map(|k| h.user_norm(k)).collect();
            idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
        }
        idx
    }
}

/// Per-dimension standardization of node features, fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Identity transform for `dim` features.
    pub fn identity(dim: usize) -> Self {
        FeatureStats { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit(channels: &[ChannelRealization]) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("channel set"))?;
        let dim = 2 * first.nt;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0usize;
        for h in channels {
            if 2 * h.nt != dim {
                return Err(Error::shape("feature stats", &[&[dim], &[2 * h.nt]]));
            }
            for k in 0..h.k {
                for (j, v) in raw_features(h, k).into_iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                count += 1;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(1e-12)).collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn raw_features(h: &ChannelRealization, k: usize) -> Vec<f64> {
    let row = k * h.nt..(k + 1) * h.nt;
    h.re[row.clone()].iter().chain(&h.im[row]).copied().collect()
}

/// Users of one channel realization as graph nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct UserGraph {
    pub k: usize,
    pub nt: usize,
    /// Row-major `(K, 2Nt)`: standardized `(Re h_k, Im h_k)`.
    pub features: Vec<f64>,
    /// Serialization order for Mamba layers; a permutation of `0..K`.
    pub order: Vec<usize>,
}

pub fn build_graph(h: &ChannelRealization, stats: &FeatureStats, policy: OrderingPolicy) -> UserGraph {
    assert_eq!(stats.dim(), 2 * h.nt, "feature stats fitted for another antenna count");
    let features = (0..h.k)
        .flat_map(|k| raw_features(h, k))
        .enumerate()
        .map(|(i, v)| {
            let j = i % stats.dim();
            (v - stats.mean[j]) / stats.std[j]
        })
        .collect();
    UserGraph { k: h.k, nt: h.nt, features, order: policy.order(h) }
}

/// Equal-size graphs stacked for one forward pass, with the raw channels the
/// loss needs.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub batch: usize,
    pub k: usize,
    pub nt: usize,
    /// `(B, K, 2Nt)`
    pub features: Tensor,
    /// `(B, K, Nt)` each.
    pub h_re: Tensor,
    pub h_im: Tensor,
    /// `orders[b]` serializes the nodes of sample `b`.
    pub orders: Vec<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(channels: &[&ChannelRealization], stats: &FeatureStats, policy: OrderingPolicy) -> Result<Self> {
        let first = channels.first().ok_or(Error::Empty("graph batch"))?;
        let (k, nt) = (first.k, first.nt);
        if let Some(h) = channels.iter().find(|h| h.k != k || h.nt != nt) {
            return Err(Error::shape("graph batch", &[&[k, nt], &[h.k, h.nt]]));
        }
        let b = channels.len();
        let mut feats = Vec::with_capacity(b * k * 2 * nt);
        let (mut re, mut im) = (Vec::with_capacity(b * k * nt), Vec::with_capacity(b * k * nt));
        let mut orders = Vec::with_capacity(b);
        for h in channels {
            let g = build_graph(h, stats, policy);
            feats.extend(g.features);
            orders.push(g.order);
            re.extend_from_slice(&h.re);
            im.extend_from_slice(&h.im);
        }
        Ok(GraphBatch {
            batch: b,
            k,
            nt,
            features: Tensor::new(&[b, k, 2 * nt], feats)?,
            h_re: Tensor::new(&[b, k, nt], re)?,
            h_im: Tensor::new(&[b, k, nt], im)?,
            orders,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wireless::{sample_channel, NetworkConfig};

    #[test]
    fn ordering_breaks_ties_by_index() {
        let z = num_complex::Complex64::new(1.0, 0.0);
        let h = ChannelRealization::from_complex(3, 1, &[z, z * 2.0, z], 0);
        assert_eq!(OrderingPolicy::DescendingNorm.order(&h), vec![1, 0, 2]);
        assert_eq!(OrderingPolicy::Index.order(&h), vec![0, 1, 2]);
    }

    #[test]
    fn batch_rejects_mixed_sizes() {
        let a = sample_channel(&NetworkConfig::default().with_users(2), 0);
        let b = sample_channel(&NetworkConfig::default().with_users(3), 0);
        let stats = FeatureStats::identity(8);
        assert!(GraphBatch::new(&[&a, &b], &stats, OrderingPolicy::Index).is_err());
    }
}

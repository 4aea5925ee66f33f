use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{BeamformerModel, GraphBatch, GraphLayer};
use crate::error::{Error, Result};
use crate::ssm::{time_round_robin, Body};
use crate::tensor::{Tape, Tensor};
use crate::wireless::{sample_channel, NetworkConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyRow {
    pub model: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub median_us: f64,
    pub p90_us: f64,
}

/// A batch of one random `K`-user channel under the model's statistics.
pub fn random_graph_batch(model: &BeamformerModel, k: usize, seed: u64) -> Result<GraphBatch> {
    let cfg = NetworkConfig { k, nt: model.nt, ..NetworkConfig::default() };
    model.batch(&[&sample_channel(&cfg, seed)])
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(pool.install(f))
}

fn check(ks: &[usize], repeats: usize) -> Result<()> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(format!("user counts must be positive: {ks:?}")));
    }
    Ok(())
}

/// Median and p90 forward-pass time per user count, batch size one, on a
/// single thread. Timing does not depend on the weights.
pub fn benchmark_inference(
    models: &[(&str, &BeamformerModel)],
    ks: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<LatencyRow>> {
    check(ks, repeats)?;
    let mut cases = Vec::new();
    for &(name, model) in models {
        for &k in ks {
            cases.push((name, k, model, model.store.frozen(), random_graph_batch(model, k, seed ^ k as u64)?));
        }
    }
    single_thread(|| {
        let bodies: Vec<Body<'_>> = cases
            .iter()
            .map(|(_, _, model, p, batch)| -> Body<'_> {
                Box::new(move || {
                    std::hint::black_box(model.forward(&Tape::new(), p, batch, 1.0).expect("valid batch"));
                })
            })
            .collect();
        rows(cases.iter().map(|c| (c.0, c.1)), time_round_robin(repeats, bodies))
    })
}

fn rows<'a>(keys: impl Iterator<Item = (&'a str, usize)>, times: Vec<(f64, f64)>) -> Vec<LatencyRow> {
    keys.zip(times)
        .map(|((model, k), (median_us, p90_us))| LatencyRow { model: model.to_string(), k, median_us, p90_us })
        .collect()
}

/// Time of the first attention layer and the first Mamba layer of `model` on
/// random `(1, K, width)` node features. Rows are named `gat_layer` and
/// `mamba_layer`.
pub fn benchmark_layers(model: &BeamformerModel, ks: &[usize], repeats: usize, seed: u64) -> Result<Vec<LatencyRow>> {
    check(ks, repeats)?;
    let pick = |want_mamba: bool| model.layers.iter().find(|l| matches!(l, GraphLayer::Mamba(_)) == want_mamba);
    let p = model.store.frozen();
    let mut cases = Vec::new();
    for (name, layer) in [("gat_layer", pick(false)), ("mamba_layer", pick(true))] {
        let Some(layer) = layer else { continue };
        for &k in ks {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k as u64);
            let x = Tensor::randn(&[1, k, model.config.width], 1.0, &mut rng);
            cases.push((name, k, layer, x, vec![(0..k).collect::<Vec<_>>()]));
        }
    }
    single_thread(|| {
        let bodies: Vec<Body<'_>> = cases
            .iter()
            .map(|(_, _, layer, x, orders)| -> Body<'_> {
                let p = &p;
                Box::new(move || {
                    std::hint::black_box(layer.forward(&Tape::new(), p, x, orders).expect("valid input"));
                })
            })
            .collect();
        rows(cases.iter().map(|c| (c.0, c.1)), time_round_robin(repeats, bodies))
    })
}

pub fn write_latency_csv<W: Write>(w: W, rows: &[LatencyRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

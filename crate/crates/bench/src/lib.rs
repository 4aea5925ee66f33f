//! Fixtures shared by the benchmarks.

use mamba_wireless::gnn::{BeamformerModel, HybridModelConfig};
use mamba_wireless::semcom::{JscdModel, JscdModelConfig, TokenSequence, END, START};

/// Untrained hybrid beamformer at the default sizes; timing does not depend
/// on the weights.
pub fn hybrid_model() -> BeamformerModel {
    BeamformerModel::new(HybridModelConfig::hybrid(), 4, 0).expect("default config is valid")
}

pub fn jscd_model(mamba: bool) -> JscdModel {
    let cfg = JscdModelConfig::default();
    let cfg = if mamba { cfg } else { cfg.baseline() };
    JscdModel::new(cfg, 100, 0).expect("default config is valid")
}

/// A framed sentence of `words` in-vocabulary ids.
pub fn sentence(words: usize, vocab: usize) -> TokenSequence {
    let ids = std::iter::once(START).chain((0..words).map(|i| 4 + i % (vocab - 4))).chain([END]).collect();
    TokenSequence::new(ids, words + 2, vocab).expect("ids are framed and in range")
}

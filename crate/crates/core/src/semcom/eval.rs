use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{bleu, receive_decode, tokenize, transmit_encode, JscdModel, Vocab};
use crate::error::Result;
use crate::wireless::awgn_channel;

/// One BLEU-vs-SNR row. The noiseless sentinel serializes as `inf`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnrRow {
    pub variant: String,
    pub snr_db: f64,
    pub bleu: f64,
    pub bp: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

/// Corpus BLEU of transmit, AWGN and greedy receive at each SNR. Sentence `i`
/// under seed `s` always draws the same noise, so tables are reproducible.
pub fn evaluate_over_snr(
    variant: &str,
    model: &JscdModel,
    vocab: &Vocab,
    test: &[String],
    snrs_db: &[f64],
    seeds: &[u64],
) -> Result<Vec<SnrRow>> {
    let cap = model.config.max_len;
    let refs: Vec<_> = test.iter().map(|s| tokenize(s, vocab, cap)).collect::<Result<_>>()?;
    let frames: Vec<_> = refs.par_iter().map(|s| transmit_encode(s, model)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(snrs_db.len());
    for &snr in snrs_db {
        let jobs: Vec<(usize, u64)> = seeds.iter().flat_map(|&s| (0..refs.len()).map(move |i| (i, s))).collect();
        let decoded: Vec<(Vec<usize>, Vec<usize>)> = jobs
            .par_iter()
            .map(|&(i, seed)| {
                let noise_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
                let y = awgn_channel(&frames[i], snr, noise_seed)?;
                let out = receive_decode(&y, model)?;
                Ok((out.content().to_vec(), refs[i].content().to_vec()))
            })
            .collect::<Result<_>>()?;
        let (cands, references): (Vec<_>, Vec<_>) = decoded.into_iter().unzip();
        let r = bleu(&cands, &references, 4)?;
        rows.push(SnrRow {
            variant: variant.to_string(),
            snr_db: snr,
            bleu: r.bleu,
            bp: r.brevity_penalty,
            p1: r.precisions[0],
            p2: r.precisions[1],
            p3: r.precisions[2],
            p4: r.precisions[3],
        });
    }
    Ok(rows)
}

pub fn write_snr_csv(path: impl AsRef<Path>, rows: &[SnrRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

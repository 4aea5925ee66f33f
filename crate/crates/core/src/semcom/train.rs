use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{tokenize, JscdModel, JscdModelConfig, TokenSequence, Vocab};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Params, Tape, Tensor};

const MIN_CORPUS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JscdTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-batch training SNR is drawn uniformly from this range, in dB.
    pub snr_range_db: (f64, f64),
    /// Fixed SNR for the per-epoch validation accuracy.
    pub val_snr_db: f64,
    pub min_word_freq: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for JscdTrainConfig {
    fn default() -> Self {
        JscdTrainConfig {
            epochs: 4,
            batch_size: 32,
            lr: 5e-4,
            snr_range_db: (0.0, 18.0),
            val_snr_db: 9.0,
            min_word_freq: 1,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JscdCurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_token_accuracy: f64,
}

pub struct TrainedJscd {
    pub model: JscdModel,
    pub vocab: Vocab,
    pub curve: Vec<JscdCurveRow>,
}

/// Equal-length minibatches, so no padding enters attention or the scan.
fn buckets(seqs: &[TokenSequence], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..seqs.len()).collect();
    idx.shuffle(rng);
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in idx {
        by_len.entry(seqs[i].len()).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = by_len.values().flat_map(|g| g.chunks(batch).map(<[usize]>::to_vec)).collect();
    out.shuffle(rng);
    out
}

/// Gaussian noise at `snr_db` for a unit-power tensor of `shape`.
fn noise(shape: &[usize], snr_db: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let std = 10f64.powf(-snr_db / 20.0);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect::<Vec<f64>>();
    Tensor::new(shape, data)
}

/// Teacher-forced logits `(B, L - 1, vocab)` and next-token targets.
pub(crate) fn teacher_forced(
    model: &JscdModel,
    tape: &Tape,
    p: &Params,
    batch: &[&TokenSequence],
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let ids: Vec<Vec<usize>> = batch.iter().map(|s| s.ids().to_vec()).collect();
    let z = model.encode(tape, p, &ids)?;
    let y = tape.add(&z, &noise(z.shape(), snr_db, rng)?)?;
    let memory = model.memory(tape, p, &y)?;
    let inputs: Vec<Vec<usize>> = ids.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
    let targets: Vec<usize> = ids.iter().flat_map(|s| s[1..].iter().copied()).collect();
    Ok((model.logits(tape, p, &memory, &inputs)?, targets))
}

fn token_accuracy(model: &JscdModel, seqs: &[TokenSequence], config: &JscdTrainConfig) -> Result<f64> {
    let p = model.store.frozen();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let (mut hit, mut total) = (0usize, 0usize);
    for idx in buckets(seqs, config.batch_size, &mut rng) {
        let batch: Vec<&TokenSequence> = idx.iter().map(|&i| &seqs[i]).collect();
        let (logits, targets) = teacher_forced(model, &Tape::new(), &p, &batch, config.val_snr_db, &mut rng)?;
        let v = model.vocab_size;
        for (row, &t) in logits.data().chunks(v).zip(&targets) {
            let arg =
                row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0;
            hit += usize::from(arg == t);
            total += 1;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// End-to-end cross-entropy training through an AWGN channel. The vocabulary
/// is built from `train`; `val` gives the per-epoch token accuracy.
pub fn train_jscd(
    train: &[String],
    val: &[String],
    model_config: JscdModelConfig,
    config: &JscdTrainConfig,
) -> Result<TrainedJscd> {
    if train.len() < MIN_CORPUS {
        return Err(Error::InvalidArgument(format!(
            "training corpus has {} sentences, need {MIN_CORPUS}",
            train.len()
        )));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation corpus"));
    }
    let (lo, hi) = config.snr_range_db;
    if config.batch_size == 0 || !(lo <= hi) {
        return Err(Error::Config(format!(
            "bad batch size {} or SNR range {:?}",
            config.batch_size, config.snr_range_db
        )));
    }
    let vocab = Vocab::build(train, config.min_word_freq);
    let cap = model_config.max_len;
    let encode = |c: &[String]| c.iter().map(|s| tokenize(s, &vocab, cap)).collect::<Result<Vec<_>>>();
    let (train_seqs, val_seqs) = (encode(train)?, encode(val)?);

    let mut model = JscdModel::new(model_config, vocab.len(), config.seed)?;
    let mut opt = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut curve = Vec::new();
    for epoch in 1..=config.epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in buckets(&train_seqs, config.batch_size, &mut rng) {
            let batch: Vec<&TokenSequence> = idx.iter().map(|&i| &train_seqs[i]).collect();
            let snr = rng.gen_range(lo..=hi);
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let (logits, targets) = teacher_forced(&model, &tape, &p, &batch, snr, &mut rng)?;
            let loss = tape.cross_entropy(&logits, &targets)?;
            if !loss.item().is_finite() {
                return Err(Error::Diverged { epoch, loss: loss.item() });
            }
            let mut grads = tape.backward(&loss)?;
            if let Some(c) = config.grad_clip {
                grads.clip_global_norm(c);
            }
            model.store.step(&mut opt, &p, &grads)?;
            sum += loss.item() * targets.len() as f64;
            count += targets.len();
        }
        let acc = token_accuracy(&model, &val_seqs, config)?;
        curve.push(JscdCurveRow { epoch, train_loss: sum / count as f64, val_token_accuracy: acc });
    }
    Ok(TrainedJscd { model, vocab, curve })
}

pub fn write_jscd_curve_csv(path: impl AsRef<Path>, rows: &[JscdCurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

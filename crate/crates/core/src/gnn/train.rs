use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ee_on_tape, BeamformerModel, FeatureStats, HybridModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AdamConfig, Tape};
use crate::wireless::{ChannelRealization, NetworkConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without a relative validation gain of `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, batch_size: 64, lr: 1e-3, patience: 3, min_delta: 1e-4, grad_clip: None, seed: 0 }
    }
}

/// One row of the training curve. `val_ratio_to_oracle` is NaN when no oracle
/// values were supplied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    #[serde(rename = "train_EE")]
    pub train_ee: f64,
    #[serde(rename = "val_EE")]
    pub val_ee: f64,
    pub val_ratio_to_oracle: f64,
}

pub struct TrainedBeamformer {
    /// Weights from the epoch with the best validation EE.
    pub model: BeamformerModel,
    pub curve: Vec<CurveRow>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Mean model EE over mean oracle EE on the same channels.
pub fn evaluate_ratio(
    model: &BeamformerModel,
    channels: &[ChannelRealization],
    oracle_ee: &[f64],
    config: &NetworkConfig,
) -> Result<f64> {
    if channels.len() != oracle_ee.len() || channels.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} channels scored against {} oracle values",
            channels.len(),
            oracle_ee.len()
        )));
    }
    let ee = model.evaluate(channels, config)?;
    Ok(ee.iter().sum::<f64>() / oracle_ee.iter().sum::<f64>())
}

/// Minibatches of equal-size channels, shuffled within and across sizes.
fn minibatches(train: &[ChannelRealization], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(rng);
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for i in idx {
        groups.entry((train[i].k, train[i].nt)).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.values().flat_map(|g| g.chunks(batch).map(<[usize]>::to_vec)).collect();
    out.shuffle(rng);
    out
}

/// Unsupervised training on `-mean EE`. Feature statistics are fitted on
/// `train`; validation EE after every epoch drives early stopping and the
/// best weights are kept.
pub fn train_beamformer(
    train: &[ChannelRealization],
    val: &[ChannelRealization],
    val_oracle: Option<&[f64]>,
    network: &NetworkConfig,
    model_config: HybridModelConfig,
    config: &TrainConfig,
) -> Result<TrainedBeamformer> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let nt = train[0].nt;
    let mut model = BeamformerModel::new(model_config, nt, config.seed)?;
    model.stats = FeatureStats::fit(train)?;
    let mut opt = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut curve = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0, model.store.clone());
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in minibatches(train, config.batch_size, &mut rng) {
            let refs: Vec<&ChannelRealization> = idx.iter().map(|&i| &train[i]).collect();
            let batch = model.batch(&refs)?;
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let (wr, wi) = model.forward(&tape, &p, &batch, network.p_max)?;
            let ee = ee_on_tape(&tape, &batch.h_re, &batch.h_im, &wr, &wi, network)?;
            let loss = tape.neg(&tape.mean(&ee)?)?;
            if !loss.item().is_finite() {
                return Err(Error::Diverged { epoch, loss: loss.item() });
            }
            let mut grads = tape.backward(&loss)?;
            if let Some(c) = config.grad_clip {
                grads.clip_global_norm(c);
            }
            model.store.step(&mut opt, &p, &grads)?;
            sum += -loss.item() * idx.len() as f64;
            count += idx.len();
        }

        let val_ee = model.evaluate(val, network)?;
        let val_mean = val_ee.iter().sum::<f64>() / val.len() as f64;
        if !val_mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: -val_mean });
        }
        let ratio = match val_oracle {
            Some(o) if o.len() == val.len() => val_ee.iter().sum::<f64>() / o.iter().sum::<f64>(),
            Some(o) => {
                return Err(Error::InvalidArgument(format!(
                    "{} validation oracle values for {} channels",
                    o.len(),
                    val.len()
                )))
            }
            None => f64::NAN,
        };
        curve.push(CurveRow { epoch, train_ee: sum / count as f64, val_ee: val_mean, val_ratio_to_oracle: ratio });

        if epoch == 1 || val_mean > best.0 + config.min_delta * best.0.abs() {
            best = (val_mean, epoch, model.store.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    model.store = best.2;
    Ok(TrainedBeamformer { model, curve, best_epoch: best.1, stopped_early })
}

pub fn write_curve_csv(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::semcom::{bleu, transmit_encode, JscdModel, JscdModelConfig, TokenSequence, END, START};
use crate::ssm::{random_scan_inputs, scan_parallel, scan_sequential, MambaBlock, MambaBlockConfig, ScanState};
use crate::tensor::gradcheck::GradCheck;
use crate::tensor::{ParamStore, Params, Tensor};
use crate::wireless::{oracle_beamforming, sample_channel, single_user_optimum, NetworkConfig, OracleConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SelftestResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Normwise, since outputs are sums of `N` terms and single entries can cancel.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn scan_equivalence() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for (i, l) in [1, 2, 7, 33, 256, 1000].into_iter().enumerate() {
        let inputs = random_scan_inputs(l, 8, 16, i as u64)?;
        let h0 = ScanState::zeros(8, 16);
        let (ys, hs, _) = scan_sequential(&inputs, &h0)?;
        let (yp, hp, _) = scan_parallel(&inputs, &h0)?;
        worst = worst.max(rel_err(&ys, &yp)).max(rel_err(&hs.h, &hp.h));
    }
    Ok((worst <= 1e-10, format!("max normwise relative error {worst:.2e}")))
}

fn null_steps() -> Result<(bool, String)> {
    let inputs = random_scan_inputs(50, 4, 4, 7)?;
    let h0 = ScanState::zeros(4, 4);
    let (_, base, _) = scan_sequential(&inputs, &h0)?;
    let mut padded = inputs.clone();
    for at in [0, 10, 25, 53] {
        padded.insert_null_step(at);
    }
    let (_, after, _) = scan_sequential(&padded, &h0)?;
    let diff = base.h.iter().zip(&after.h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((diff <= 1e-12, format!("max state change {diff:.2e}")))
}

fn block_gradients() -> Result<(bool, String)> {
    let mut store = ParamStore::new(3);
    let cfg = MambaBlockConfig { d_model: 3, d_state: 2, expand: 2, conv_width: 3, ..Default::default() };
    let block = MambaBlock::new(&mut store, "block", cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Tensor::randn(&[1, 4, 3], 1.0, &mut rng);
    let mut inputs = vec![Tensor::randn(&[1, 4, 3], 1.0, &mut rng)];
    inputs.extend(store.iter().map(|(_, t)| Tensor::uniform(t.shape(), -1.0, 1.0, &mut rng)));
    let report = GradCheck::default().run(
        |t, xs| {
            let y = block.forward(t, &Params::from_tensors(xs[1..].to_vec()), &xs[0])?;
            t.sum(&t.mul(&y, &w)?)
        },
        &inputs,
    )?;
    Ok((report.passed(), format!("{}/{} entries within 1e-4", report.within_rel, report.entries)))
}

fn bleu_clipping() -> Result<(bool, String)> {
    let c = vec!["the the the the the the the".split(' ').collect::<Vec<_>>()];
    let r = vec!["the cat is on the mat".split(' ').collect::<Vec<_>>()];
    let p1 = bleu(&c, &r, 4)?.precisions[0];
    let perfect = bleu(&r, &r, 4)?.bleu;
    Ok(((p1 - 2.0 / 7.0).abs() < 1e-15 && perfect == 1.0, format!("p1 = {p1:.6}, perfect = {perfect}")))
}

fn jscd_bypass() -> Result<(bool, String)> {
    let cfg = JscdModelConfig {
        width: 16,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_hidden: 16,
        channel_dim: 4,
        max_len: 8,
        mamba_d_state: 4,
        ..JscdModelConfig::default()
    };
    let base = JscdModel::new(cfg.baseline(), 12, 5)?;
    let mut full = JscdModel::new(cfg, 12, 5)?;
    full.set_mamba_active(false, false)?;
    let seq = TokenSequence::new(vec![START, 4, 7, 9, END], 8, 12)?;
    let (a, b) = (transmit_encode(&seq, &base)?, transmit_encode(&seq, &full)?);
    let power = a.mean_power();
    let ok = a.data == b.data && (power - 1.0).abs() < 1e-9;
    Ok((ok, format!("bit-identical = {}, frame power {power:.12}", a.data == b.data)))
}

fn oracle_single_user() -> Result<(bool, String)> {
    let net = NetworkConfig::default().with_users(1);
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let h = sample_channel(&net, seed);
        let r = oracle_beamforming(&h, &net, &OracleConfig::default())?;
        let (_, golden) = single_user_optimum(&h, &net);
        worst = worst.max((r.ee - golden).abs() / golden);
    }
    Ok((worst <= 0.01, format!("max relative gap to closed form {worst:.2e}")))
}

/// Fast invariant checks over every module, in a fixed order.
pub fn selftest() -> Vec<SelftestResult> {
    let checks: [(&'static str, fn() -> Result<(bool, String)>); 6] = [
        ("scan-equivalence", scan_equivalence),
        ("null-step-invariance", null_steps),
        ("mamba-block-gradients", block_gradients),
        ("bleu-clipping", bleu_clipping),
        ("jscd-bypass-and-power", jscd_bypass),
        ("oracle-single-user", oracle_single_user),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => SelftestResult { name, passed, detail },
            Err(e) => SelftestResult { name, passed: false, detail: e.to_string() },
        })
        .collect()
}

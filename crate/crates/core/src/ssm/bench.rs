use std::io::Write;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{scan_parallel, scan_sequential, ScanInputs, ScanState};
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanImpl {
    Sequential,
    Parallel,
    Attention,
}

impl ScanImpl {
    pub fn name(&self) -> &'static str {
        match self {
            ScanImpl::Sequential => "sequential",
            ScanImpl::Parallel => "parallel",
            ScanImpl::Attention => "attention",
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ScanBenchRow {
    #[serde(rename = "impl")]
    pub implementation: ScanImpl,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub median_us: f64,
    pub p90_us: f64,
}

/// Single-head softmax self-attention of width `D` with `D x D` projections.
/// Scores are formed one query row at a time so memory stays `O(L)`.
pub fn attention_reference(x: &[f64], l: usize, d: usize, wq: &[f64], wk: &[f64], wv: &[f64]) -> Vec<f64> {
    let project = |w: &[f64]| {
        let mut out = vec![0.0; l * d];
        for t in 0..l {
            let row = &x[t * d..(t + 1) * d];
            for (i, &xv) in row.iter().enumerate() {
                for (o, &wv) in out[t * d..(t + 1) * d].iter_mut().zip(&w[i * d..(i + 1) * d]) {
                    *o += xv * wv;
                }
            }
        }
        out
    };
    let (q, k, v) = (project(wq), project(wk), project(wv));
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; l * d];
    let mut scores = vec![0.0; l];
    for i in 0..l {
        let qi = &q[i * d..(i + 1) * d];
        let mut max = f64::NEG_INFINITY;
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(qi, &k[j * d..(j + 1) * d]) * scale;
            max = max.max(*s);
        }
        let mut total = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            total += *s;
        }
        let oi = &mut out[i * d..(i + 1) * d];
        for (j, &s) in scores.iter().enumerate() {
            let wgt = s / total;
            for (o, &vv) in oi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                *o += wgt * vv;
            }
        }
    }
    out
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Untimed calls per body before sampling; one call is not enough to settle
/// the allocator and caches for millisecond-scale bodies.
const WARMUP: Duration = Duration::from_millis(50);

pub(crate) type Body<'a> = Box<dyn FnMut() + 'a>;

/// Median and p90 microseconds per body. Samples are taken round-robin, one
/// call of each body per round, so a burst of machine noise is spread over
/// every row instead of swallowing one row's whole sample window.
pub(crate) fn time_round_robin(repeats: usize, mut bodies: Vec<Body<'_>>) -> Vec<(f64, f64)> {
    for f in bodies.iter_mut() {
        let warm = Instant::now();
        loop {
            f();
            if warm.elapsed() >= WARMUP {
                break;
            }
        }
    }
    let mut samples = vec![Vec::with_capacity(repeats); bodies.len()];
    for _ in 0..repeats {
        for (f, out) in bodies.iter_mut().zip(samples.iter_mut()) {
            let start = Instant::now();
            f();
            out.push(start.elapsed().as_secs_f64() * 1e6);
        }
    }
    samples
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            (percentile(&v, 0.5), percentile(&v, 0.9))
        })
        .collect()
}

/// Random scan instance with stable dynamics.
pub fn random_scan_inputs(l: usize, d: usize, n: usize, seed: u64) -> Result<ScanInputs> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[l, d], 1.0, &mut rng);
    let delta = Tensor::uniform(&[l, d], 1e-3, 0.5, &mut rng);
    let a = Tensor::uniform(&[d, n], -2.0, -0.05, &mut rng);
    let b = Tensor::randn(&[l, n], 1.0, &mut rng);
    let c = Tensor::randn(&[l, n], 1.0, &mut rng);
    ScanInputs::new(&x, &delta, &a, &b, &c)
}

/// Median and 90th-percentile wall time per sequence length for both scans
/// and a quadratic attention layer of the same width. Lengths must ascend.
pub fn benchmark_scan(ls: &[usize], d: usize, n: usize, repeats: usize, seed: u64) -> Result<Vec<ScanBenchRow>> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    if ls.is_empty() {
        return Err(Error::Empty("sequence lengths"));
    }
    if ls.windows(2).any(|w| w[0] >= w[1]) || ls[0] == 0 {
        return Err(Error::InvalidArgument(format!("lengths must be positive and ascending: {ls:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let s = 1.0 / (d as f64).sqrt();
    let w: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[d, d], -s, s, &mut rng)).collect();
    let cases = ls
        .iter()
        .map(|&l| {
            let inputs = random_scan_inputs(l, d, n, seed.wrapping_add(l as u64))?;
            let x: Vec<f64> = (0..l * d).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect();
            Ok((l, inputs, x))
        })
        .collect::<Result<Vec<_>>>()?;
    let h0 = ScanState::zeros(d, n);
    let mut keys = Vec::new();
    let mut bodies: Vec<Body<'_>> = Vec::new();
    for (l, inputs, x) in &cases {
        let (l, h0, w) = (*l, &h0, &w);
        keys.extend([(ScanImpl::Sequential, l), (ScanImpl::Parallel, l), (ScanImpl::Attention, l)]);
        bodies.push(Box::new(move || {
            std::hint::black_box(scan_sequential(inputs, h0).expect("validated"));
        }));
        bodies.push(Box::new(move || {
            std::hint::black_box(scan_parallel(inputs, h0).expect("validated"));
        }));
        bodies.push(Box::new(move || {
            std::hint::black_box(attention_reference(x, l, d, w[0].data(), w[1].data(), w[2].data()));
        }));
    }
    let times = time_round_robin(repeats, bodies);
    Ok(keys
        .into_iter()
        .zip(times)
        .map(|((implementation, l), (median_us, p90_us))| ScanBenchRow { implementation, l, d, n, median_us, p90_us })
        .collect())
}

pub fn write_scan_csv<W: Write>(w: W, rows: &[ScanBenchRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

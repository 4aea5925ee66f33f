//! Sequential and prefix-scan executions of the selective recurrence.
//!
//! Each step is the affine map `h ↦ a h + u` on one lane `(d, n)`. Maps
//! compose as `(a₂, u₂) ∘ (a₁, u₁) = (a₂ a₁, a₂ u₁ + u₂)`, which is
//! associative, so every prefix can be formed by a balanced tree.
//!
//! The parallel execution pairs neighbours, scans the half-length sequence
//! recursively, then fills in the even positions. That is `⌊L/2⌋` combines
//! on the way up and `⌈L/2⌉ - 1` on the way down per level, under `2L` in
//! total, with `O(log L)` levels. Odd lengths leave the last element
//! unpaired, so no padding is needed.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use super::{ScanInputs, ScanState};
use crate::error::{Error, Result};

/// Lane-combines performed by one scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub combines: u64,
}

/// Work items smaller than this many lanes stay on the calling thread.
const PAR_GRAIN: usize = 1 << 14;

fn check_state(inputs: &ScanInputs, h0: &ScanState) -> Result<()> {
    let want = inputs.channels() * inputs.state_size();
    if h0.h.len() != want {
        return Err(Error::shape("scan", &[&[h0.h.len()], &[inputs.channels(), inputs.state_size()]]));
    }
    Ok(())
}

/// One step at a time. Returns `y` as `(L, D)` and the final state.
pub fn scan_sequential(inputs: &ScanInputs, h0: &ScanState) -> Result<(Vec<f64>, ScanState, ScanStats)> {
    check_state(inputs, h0)?;
    let w = h0.h.len();
    let l = inputs.len();
    let u = inputs.drive();
    let a = inputs.abar();
    let mut hs = vec![0.0; l * w];
    let mut h = h0.h.clone();
    for t in 0..l {
        let row = t * w..(t + 1) * w;
        for ((hv, &av), &uv) in h.iter_mut().zip(&a[row.clone()]).zip(&u[row.clone()]) {
            *hv = av * *hv + uv;
        }
        hs[row].copy_from_slice(&h);
    }
    let y = inputs.readout(&hs);
    let state = ScanState { h, t: h0.t + l };
    Ok((y, state, ScanStats { combines: (l * w) as u64 }))
}

/// Whole sequence at once by a work-efficient prefix scan. Agrees with
/// [`scan_sequential`] up to floating-point reassociation.
pub fn scan_parallel(inputs: &ScanInputs, h0: &ScanState) -> Result<(Vec<f64>, ScanState, ScanStats)> {
    check_state(inputs, h0)?;
    let w = h0.h.len();
    let l = inputs.len();
    let mut a = inputs.abar().to_vec();
    let mut u = inputs.drive();
    // Fold the initial state into the first map so prefixes are states.
    for ((uv, &av), &hv) in u[..w].iter_mut().zip(&a[..w]).zip(&h0.h) {
        *uv += av * hv;
    }
    let counter = AtomicU64::new(w as u64);
    inclusive_scan(&mut a, &mut u, w, &counter);
    let y = inputs.readout(&u);
    let h = u[(l - 1) * w..].to_vec();
    let state = ScanState { h, t: h0.t + l };
    Ok((y, state, ScanStats { combines: counter.load(Ordering::Relaxed) }))
}

/// In-place inclusive scan over rows of width `w`: afterwards row `t` holds
/// the composition of rows `0..=t`.
pub(crate) fn inclusive_scan(a: &mut [f64], u: &mut [f64], w: usize, counter: &AtomicU64) {
    let rows = a.len() / w;
    if rows <= 1 {
        return;
    }
    let half = rows / 2;
    let rows_per_task = (PAR_GRAIN / w).max(1);

    let mut ra = vec![0.0; half * w];
    let mut ru = vec![0.0; half * w];
    ra.par_chunks_mut(rows_per_task * w).zip(ru.par_chunks_mut(rows_per_task * w)).enumerate().for_each(
        |(task, (ca, cu))| {
            let first = task * rows_per_task;
            for r in 0..ca.len() / w {
                let i = first + r;
                let (lo, hi) = (2 * i * w, (2 * i + 1) * w);
                for j in 0..w {
                    let (a1, u1, a2, u2) = (a[lo + j], u[lo + j], a[hi + j], u[hi + j]);
                    ca[r * w + j] = a2 * a1;
                    cu[r * w + j] = a2 * u1 + u2;
                }
            }
            counter.fetch_add((ca.len()) as u64, Ordering::Relaxed);
        },
    );

    inclusive_scan(&mut ra, &mut ru, w, counter);

    let pair = 2 * w;
    a.par_chunks_mut(rows_per_task * pair).zip(u.par_chunks_mut(rows_per_task * pair)).enumerate().for_each(
        |(task, (ca, cu))| {
            let first = task * rows_per_task;
            let mut combined = 0;
            for (r, (pa, pu)) in ca.chunks_mut(pair).zip(cu.chunks_mut(pair)).enumerate() {
                let i = first + r;
                if i > 0 {
                    let prev = (i - 1) * w;
                    for j in 0..w {
                        let a2 = pa[j];
                        pa[j] = a2 * ra[prev + j];
                        pu[j] += a2 * ru[prev + j];
                    }
                    combined += w;
                }
                if pa.len() == pair {
                    pa[w..].copy_from_slice(&ra[i * w..(i + 1) * w]);
                    pu[w..].copy_from_slice(&ru[i * w..(i + 1) * w]);
                }
            }
            counter.fetch_add(combined as u64, Ordering::Relaxed);
        },
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefix_oracle(a: &[f64], u: &[f64]) -> Vec<f64> {
        let mut h = 0.0;
        a.iter()
            .zip(u)
            .map(|(a, u)| {
                h = a * h + u;
                h
            })
            .collect()
    }

    #[test]
    fn scalar_prefixes_match_loop_for_all_small_lengths() {
        for l in 1..40 {
            let a: Vec<f64> = (0..l).map(|i| 0.3 + 0.6 * ((i * 7 % 11) as f64 / 11.0)).collect();
            let u: Vec<f64> = (0..l).map(|i| ((i * 5 % 13) as f64 - 6.0) / 3.0).collect();
            let want = prefix_oracle(&a, &u);
            let (mut pa, mut pu) = (a.clone(), u.clone());
            let counter = AtomicU64::new(0);
            inclusive_scan(&mut pa, &mut pu, 1, &counter);
            for (p, q) in pu.iter().zip(&want) {
                assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0), "L={l}");
            }
            assert!(counter.load(Ordering::Relaxed) <= 2 * l as u64);
        }
    }
}

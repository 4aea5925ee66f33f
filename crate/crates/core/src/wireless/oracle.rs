//! Reference solutions for energy-efficient beamforming.
//!
//! Two independent routes:
//!
//! * exhaustive: each user's direction is a convex mix of its channel's
//!   projections onto, and away from, the span of the other users' channels;
//!   a grid over mixes and power splits is followed by a compass search.
//!   For `K <= 2` this family contains the optimum.
//! * iterative: Dinkelbach's method on `R(W) / (P(W) + P_c)`, each
//!   parametric problem `max R - λ P` solved by weighted-MMSE ascent with a
//!   power price, from several starting points.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ee_rows, inner, mrt, norm, normalized, split_projection, zf, BeamformingDecision, ChannelRealization, NetworkConfig,
};
use crate::error::{Error, Result};

type Rows = Vec<Vec<Complex64>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Largest `K` for which the exhaustive route runs.
    pub exhaustive_limit: usize,
    /// Grid points per user for the direction mix, `K <= 2`.
    pub mix_steps: usize,
    /// Power levels per user, as fractions `i / power_steps` of the budget.
    pub power_steps: usize,
    /// Coarser grid used for `K > 2`.
    pub coarse_mix_steps: usize,
    pub coarse_power_steps: usize,
    /// Compass-search step at which refinement stops.
    pub refine_tol: f64,
    pub dinkelbach_iters: usize,
    pub wmmse_iters: usize,
    /// Random starting points for the iterative route, on top of the
    /// structured MRT, ZF and single-user starts.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            exhaustive_limit: 4,
            mix_steps: 11,
            power_steps: 20,
            coarse_mix_steps: 5,
            coarse_power_steps: 8,
            refine_tol: 1e-7,
            dinkelbach_iters: 20,
            wmmse_iters: 60,
            random_starts: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub w: BeamformingDecision,
    pub ee: f64,
    pub exhaustive_ee: Option<f64>,
    pub iterative_ee: f64,
}

/// Maximize a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    let x = (lo + hi) / 2.0;
    (x, f(x))
}

/// Single user: MRT with the power maximizing
/// `log2(1 + p‖h‖²/σ²) / (p + P_c)` over `(0, P_max]`.
pub fn single_user_optimum(h: &ChannelRealization, cfg: &NetworkConfig) -> (f64, f64) {
    assert_eq!(h.k, 1, "single-user optimum needs K = 1");
    let g = h.user_norm(0).powi(2);
    let f = |p: f64| (1.0 + p * g / cfg.noise_power).log2() / (p + cfg.p_circuit);
    golden_section(f, 0.0, cfg.p_max, 1e-12 * cfg.p_max)
}

/// Best of the exhaustive and iterative routes; the exhaustive one only when
/// `K <= exhaustive_limit`.
pub fn oracle_beamforming(h: &ChannelRealization, cfg: &NetworkConfig, ocfg: &OracleConfig) -> Result<OracleResult> {
    let (wi, ei) = oracle_iterative(h, cfg, ocfg);
    let (mut w, mut ee, mut exhaustive_ee) = (wi, ei, None);
    if h.k <= ocfg.exhaustive_limit {
        let (wg, eg) = oracle_exhaustive(h, cfg, ocfg)?;
        exhaustive_ee = Some(eg);
        if eg > ee {
            w = wg;
            ee = eg;
        }
    }
    Ok(OracleResult { w, ee, exhaustive_ee, iterative_ee: ei })
}

struct Mixer {
    inside: Rows,
    outside: Rows,
    own: Rows,
}

impl Mixer {
    fn new(h: &Rows) -> Self {
        let mut inside = Vec::new();
        let mut outside = Vec::new();
        for k in 0..h.len() {
            let others: Vec<&Vec<Complex64>> = h.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, r)| r).collect();
            let (a, b) = split_projection(&h[k], &others);
            inside.push(a);
            outside.push(b);
        }
        Mixer { inside, outside, own: h.clone() }
    }

    /// Unit direction `λ Π h_k + (1 - λ) Π⊥ h_k`.
    fn direction(&self, k: usize, mix: f64) -> Vec<Complex64> {
        let v: Vec<Complex64> =
            self.inside[k].iter().zip(&self.outside[k]).map(|(a, b)| a * mix + b * (1.0 - mix)).collect();
        if norm(&v) > 1e-12 * norm(&self.own[k]) {
            normalized(&v)
        } else {
            normalized(&self.own[k])
        }
    }

    fn beams(&self, mix: &[f64], power: &[f64]) -> Rows {
        (0..mix.len())
            .map(|k| {
                let s = power[k].max(0.0).sqrt();
                self.direction(k, mix[k]).into_iter().map(|c| c * s).collect()
            })
            .collect()
    }
}

/// Integer power splits `(i_1..i_K)` with `Σ i <= n`, excluding all-zero.
fn power_splits(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            if cur.iter().any(|&i| i > 0) {
                out.push(cur.clone());
            }
            return;
        }
        for i in 0..=left {
            cur.push(i);
            rec(k, left - i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, n, &mut Vec::new(), &mut out);
    out
}

/// Grid over per-user direction mixes and power splits, then compass search.
pub fn oracle_exhaustive(
    h: &ChannelRealization,
    cfg: &NetworkConfig,
    ocfg: &OracleConfig,
) -> Result<(BeamformingDecision, f64)> {
    if h.k > ocfg.exhaustive_limit {
        return Err(Error::OracleLimit { k: h.k, limit: ocfg.exhaustive_limit });
    }
    let rows = h.rows();
    let k = h.k;
    let mixer = Mixer::new(&rows);
    let (m, n) = if k == 1 {
        (1, ocfg.power_steps)
    } else if k <= 2 {
        (ocfg.mix_steps, ocfg.power_steps)
    } else {
        (ocfg.coarse_mix_steps, ocfg.coarse_power_steps)
    };
    let mix_level = |i: usize| if m == 1 { 0.5 } else { i as f64 / (m - 1) as f64 };
    let splits = power_splits(k, n);
    let combos = m.pow(k as u32);

    // Lowest flat index wins ties, independent of scheduling.
    let (_, best_idx) = (0..combos)
        .into_par_iter()
        .map(|c| {
            let mut mix = Vec::with_capacity(k);
            let mut r = c;
            for _ in 0..k {
                mix.push(mix_level(r % m));
                r /= m;
            }
            let dirs: Rows = (0..k).map(|u| mixer.direction(u, mix[u])).collect();
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for (s, split) in splits.iter().enumerate() {
                let w: Rows = dirs
                    .iter()
                    .zip(split)
                    .map(|(d, &i)| {
                        let a = (i as f64 / n as f64 * cfg.p_max).sqrt();
                        d.iter().map(|c| c * a).collect()
                    })
                    .collect();
                let e = ee_rows(&rows, &w, cfg).ee;
                if e > best.0 {
                    best = (e, c * splits.len() + s);
                }
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), |a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a });
    let (c, s) = (best_idx / splits.len(), best_idx % splits.len());
    let mut x = Vec::with_capacity(2 * k);
    let mut r = c;
    for _ in 0..k {
        x.push(mix_level(r % m));
        r /= m;
    }
    x.extend(splits[s].iter().map(|&i| i as f64 / n as f64));

    let eval = |x: &[f64]| -> (f64, Rows) {
        let mix: Vec<f64> = x[..k].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut q: Vec<f64> = x[k..].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let total: f64 = q.iter().sum();
        if total > 1.0 {
            q.iter_mut().for_each(|v| *v /= total);
        }
        let p: Vec<f64> = q.iter().map(|v| v * cfg.p_max).collect();
        let w = mixer.beams(&mix, &p);
        (ee_rows(&rows, &w, cfg).ee, w)
    };
    let (mut fx, mut wx) = eval(&x);
    let mut step = 0.5 / n as f64;
    while step > ocfg.refine_tol {
        let mut improved = false;
        for i in 0..x.len() {
            if i < k && k == 1 {
                continue;
            }
            for s in [step, -step] {
                let mut y = x.clone();
                y[i] += s;
                let (fy, wy) = eval(&y);
                if fy > fx {
                    x = y;
                    fx = fy;
                    wx = wy;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    let flat: Vec<Complex64> = wx.into_iter().flatten().collect();
    let w = BeamformingDecision::from_complex(k, h.nt, &flat).project_to_budget(cfg.p_max);
    Ok((w, fx))
}

fn total_power(w: &Rows) -> f64 {
    w.iter().flatten().map(|c| c.norm_sqr()).sum()
}

/// One weighted-MMSE update for `max Σ ln(1 + SINR_k) - μ Σ ‖w_k‖²` subject
/// to the budget. The Hermitian system is diagonalized once so the budget
/// multiplier can be found by bisection on a scalar function.
fn wmmse_step(h: &Rows, w: &Rows, mu: f64, cfg: &NetworkConfig) -> Rows {
    let (k, nt) = (h.len(), h[0].len());
    let mut s = Vec::with_capacity(k);
    let mut a = DMatrix::<Complex64>::zeros(nt, nt);
    for j in 0..k {
        let g: Vec<Complex64> = w.iter().map(|wi| inner(&h[j], wi)).collect();
        let total: f64 = g.iter().map(|c| c.norm_sqr()).sum::<f64>() + cfg.noise_power;
        let u = g[j] / total;
        let e = (1.0 - g[j].norm_sqr() / total).max(1e-12);
        let weight = 1.0 / e;
        s.push(u * weight);
        let scale = weight * u.norm_sqr();
        for r in 0..nt {
            for c in 0..nt {
                a[(r, c)] += h[j][r] * h[j][c].conj() * scale;
            }
        }
    }
    let eig = a.symmetric_eigen();
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let u = &eig.eigenvectors;
    // c[k][i] = s_k (U^H h_k)_i
    let c: Vec<Vec<Complex64>> = (0..k)
        .map(|j| (0..nt).map(|i| (0..nt).map(|r| u[(r, i)].conj() * h[j][r]).sum::<Complex64>() * s[j]).collect())
        .collect();
    let power = |m: f64| -> f64 {
        c.iter().flat_map(|cj| cj.iter().zip(&lam).map(move |(v, l)| v.norm_sqr() / (l + m).powi(2))).sum()
    };
    let floor = 1e-12;
    let mut m = mu.max(floor);
    if power(m) > cfg.p_max {
        let mut lo = m;
        let mut hi = m.max(1.0) * 2.0;
        while power(hi) > cfg.p_max {
            hi *= 2.0;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if power(mid) > cfg.p_max {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        m = hi;
    }
    c.iter().map(|cj| (0..nt).map(|r| (0..nt).map(|i| u[(r, i)] * cj[i] / (lam[i] + m)).sum()).collect()).collect()
}

fn dinkelbach(h: &Rows, w0: Rows, cfg: &NetworkConfig, ocfg: &OracleConfig) -> (Rows, f64) {
    let ln2 = std::f64::consts::LN_2;
    let mut w = w0;
    let mut lam = ee_rows(h, &w, cfg).ee;
    let mut best = (w.clone(), lam);
    for _ in 0..ocfg.dinkelbach_iters {
        let mu = lam * ln2;
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..ocfg.wmmse_iters {
            w = wmmse_step(h, &w, mu, cfg);
            let r = ee_rows(h, &w, cfg);
            let obj = r.sum_rate * ln2 - mu * r.transmit_power;
            if (obj - prev).abs() <= 1e-12 * obj.abs().max(1.0) {
                break;
            }
            prev = obj;
        }
        let e = ee_rows(h, &w, cfg).ee;
        if e > best.1 {
            best = (w.clone(), e);
        }
        if (e - lam).abs() <= 1e-10 * lam.max(1e-12) {
            break;
        }
        lam = lam.max(e);
    }
    best
}

fn starts(h: &ChannelRealization, cfg: &NetworkConfig, ocfg: &OracleConfig) -> Vec<Rows> {
    let split = |w: BeamformingDecision| -> Rows { w.to_complex().chunks(h.nt).map(<[Complex64]>::to_vec).collect() };
    let mut out = Vec::new();
    for frac in [0.05, 0.2, 0.5, 1.0] {
        out.push(split(mrt(h, frac * cfg.p_max)));
        out.push(split(zf(h, frac * cfg.p_max)));
    }
    // Serve one user only; small positive power elsewhere keeps WMMSE
    // weights defined.
    for k in 0..h.k {
        for frac in [0.1, 0.5] {
            let mut w = split(mrt(h, frac * cfg.p_max * h.k as f64));
            for (j, row) in w.iter_mut().enumerate() {
                if j != k {
                    row.iter_mut().for_each(|c| *c *= 1e-3);
                }
            }
            out.push(w);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ocfg.seed ^ h.seed);
    for _ in 0..ocfg.random_starts {
        let mut w: Rows = (0..h.k)
            .map(|_| (0..h.nt).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .collect();
        let target = rng.gen_range(0.05..1.0) * cfg.p_max;
        let s = (target / total_power(&w)).sqrt();
        w.iter_mut().flatten().for_each(|c| *c *= s);
        out.push(w);
    }
    out
}

/// Dinkelbach / weighted-MMSE from every start; best stationary point wins,
/// earliest start on ties.
pub fn oracle_iterative(
    h: &ChannelRealization,
    cfg: &NetworkConfig,
    ocfg: &OracleConfig,
) -> (BeamformingDecision, f64) {
    let rows = h.rows();
    let mut best: Option<(Rows, f64)> = None;
    for w0 in starts(h, cfg, ocfg) {
        let (w, e) = dinkelbach(&rows, w0, cfg, ocfg);
        if best.as_ref().is_none_or(|b| e > b.1) {
            best = Some((w, e));
        }
    }
    let (w, e) = best.expect("at least one start");
    let flat: Vec<Complex64> = w.into_iter().flatten().collect();
    (BeamformingDecision::from_complex(h.k, h.nt, &flat).project_to_budget(cfg.p_max), e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wireless::sample_channel;

    #[test]
    fn power_split_count() {
        // Compositions of at most n into k parts, minus the zero split.
        assert_eq!(power_splits(2, 3).len(), 9);
        assert_eq!(power_splits(1, 5).len(), 5);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, fx) = golden_section(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8 && fx.abs() < 1e-15);
    }

    #[test]
    fn wmmse_respects_budget() {
        let cfg = NetworkConfig::default();
        let h = sample_channel(&cfg, 1);
        let rows = h.rows();
        let mut w: Rows = mrt(&h, 1.0).to_complex().chunks(4).map(<[Complex64]>::to_vec).collect();
        for _ in 0..20 {
            w = wmmse_step(&rows, &w, 0.0, &cfg);
            assert!(total_power(&w) <= cfg.p_max * (1.0 + 1e-9));
        }
    }
}

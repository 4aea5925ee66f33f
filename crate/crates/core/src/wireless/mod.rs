//! MISO downlink substrate: Rayleigh channels, energy efficiency, an optimal
//! beamforming oracle, and the AWGN symbol channel used by the text codec.
//!
//! A base station with `Nt` antennas serves `K` single-antenna users. User
//! `k` sees `SINR_k = |h_kᴴ w_k|² / (Σ_{j≠k} |h_kᴴ w_j|² + σ²)` and the
//! network's energy efficiency is `Σ_k log2(1 + SINR_k) / (Σ_k ‖w_k‖² + P_c)`.

mod awgn;
mod dataset;
pub mod oracle;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use awgn::{awgn_channel, SymbolFrame, NOISELESS};
pub use dataset::{read_channels, write_channels};
pub use oracle::{golden_section, oracle_beamforming, single_user_optimum, OracleConfig, OracleResult};

/// Slack allowed on the power budget before a decision counts as infeasible.
pub const POWER_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub k: usize,
    pub nt: usize,
    /// Total transmit power budget in watts.
    pub p_max: f64,
    /// Receiver noise power per user in watts.
    pub noise_power: f64,
    /// Fixed circuit power added to the EE denominator, in watts.
    pub p_circuit: f64,
    /// Optional per-user minimum rate in bits/s/Hz.
    pub qos_min_rate: Option<f64>,
    /// Variance of additive channel-estimation error; zero means perfect CSI.
    pub csi_error_var: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            k: 3,
            nt: 4,
            p_max: 1.0,
            noise_power: 0.1,
            p_circuit: 0.5,
            qos_min_rate: None,
            csi_error_var: 0.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k >= 1
            && self.nt >= 1
            && self.p_max > 0.0
            && self.noise_power > 0.0
            && self.p_circuit >= 0.0
            && self.csi_error_var >= 0.0
            && self.qos_min_rate.is_none_or(|r| r >= 0.0);
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid network config {self:?}")));
        }
        Ok(())
    }

    pub fn with_users(mut self, k: usize) -> Self {
        self.k = k;
        self
    }
}

/// Channel matrix `H` (`K x Nt`) as separate real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub k: usize,
    pub nt: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub seed: u64,
}

impl ChannelRealization {
    pub fn from_complex(k: usize, nt: usize, h: &[Complex64], seed: u64) -> Self {
        assert_eq!(h.len(), k * nt);
        ChannelRealization { k, nt, re: h.iter().map(|c| c.re).collect(), im: h.iter().map(|c| c.im).collect(), seed }
    }

    pub fn entry(&self, user: usize, ant: usize) -> Complex64 {
        let i = user * self.nt + ant;
        Complex64::new(self.re[i], self.im[i])
    }

    pub fn user(&self, user: usize) -> Vec<Complex64> {
        (0..self.nt).map(|a| self.entry(user, a)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Complex64>> {
        (0..self.k).map(|u| self.user(u)).collect()
    }

    pub fn user_norm(&self, user: usize) -> f64 {
        let r = user * self.nt..(user + 1) * self.nt;
        self.re[r.clone()].iter().chain(&self.im[r]).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Users reordered so that new user `i` is old user `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut re = Vec::with_capacity(self.re.len());
        let mut im = Vec::with_capacity(self.im.len());
        for &p in perm {
            re.extend_from_slice(&self.re[p * self.nt..(p + 1) * self.nt]);
            im.extend_from_slice(&self.im[p * self.nt..(p + 1) * self.nt]);
        }
        ChannelRealization { re, im, ..self.clone() }
    }

    pub fn scaled(&self, c: f64) -> Self {
        ChannelRealization {
            re: self.re.iter().map(|v| v * c).collect(),
            im: self.im.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// Channel estimate `Ĥ = H + E` with i.i.d. `CN(0, var)` error.
    pub fn with_estimation_error(&self, var: f64, seed: u64) -> Self {
        if var == 0.0 {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (var / 2.0).sqrt();
        let mut noisy = |v: &f64| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + s * z
        };
        let re = self.re.iter().map(&mut noisy).collect();
        let im = self.im.iter().map(&mut noisy).collect();
        ChannelRealization { re, im, ..self.clone() }
    }
}

/// I.i.d. `CN(0, 1)` entries, a pure function of `(K, Nt, seed)`.
pub fn sample_channel(config: &NetworkConfig, seed: u64) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.k * config.nt;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        re.push(s * a);
        im.push(s * b);
    }
    ChannelRealization { k: config.k, nt: config.nt, re, im, seed }
}

/// Beamforming vectors `W` (`K x Nt`), row `k` serving user `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformingDecision {
    pub k: usize,
    pub nt: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl BeamformingDecision {
    pub fn zeros(k: usize, nt: usize) -> Self {
        BeamformingDecision { k, nt, re: vec![0.0; k * nt], im: vec![0.0; k * nt] }
    }

    pub fn from_complex(k: usize, nt: usize, w: &[Complex64]) -> Self {
        assert_eq!(w.len(), k * nt);
        BeamformingDecision { k, nt, re: w.iter().map(|c| c.re).collect(), im: w.iter().map(|c| c.im).collect() }
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re.iter().zip(&self.im).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    pub fn user_power(&self, user: usize) -> f64 {
        let r = user * self.nt..(user + 1) * self.nt;
        self.re[r.clone()].iter().chain(&self.im[r]).map(|v| v * v).sum()
    }

    /// Scale down uniformly if over budget; feasible decisions are unchanged.
    pub fn project_to_budget(mut self, p_max: f64) -> Self {
        let p = self.total_power();
        if p > p_max {
            let s = (p_max / p).sqrt();
            self.re.iter_mut().chain(self.im.iter_mut()).for_each(|v| *v *= s);
        }
        self
    }

    /// Multiply user `k`'s vector by `e^{jθ}`.
    pub fn rotated(&self, user: usize, theta: f64) -> Self {
        let mut out = self.clone();
        let rot = Complex64::from_polar(1.0, theta);
        for a in 0..self.nt {
            let i = user * self.nt + a;
            let v = Complex64::new(self.re[i], self.im[i]) * rot;
            out.re[i] = v.re;
            out.im[i] = v.im;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyEfficiency {
    /// Bits/s/Hz per watt.
    pub ee: f64,
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    pub transmit_power: f64,
}

/// `G[k][j] = |h_kᴴ w_j|²`.
pub fn gains(h: &[Vec<Complex64>], w: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    h.iter().map(|hk| w.iter().map(|wj| inner(hk, wj).norm_sqr()).collect()).collect()
}

/// `aᴴ b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn ee_rows(h: &[Vec<Complex64>], w: &[Vec<Complex64>], cfg: &NetworkConfig) -> EnergyEfficiency {
    let g = gains(h, w);
    let rates: Vec<f64> = (0..h.len())
        .map(|k| {
            let interference: f64 = g[k].iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| v).sum();
            (1.0 + g[k][k] / (interference + cfg.noise_power)).log2()
        })
        .collect();
    let transmit_power: f64 = w.iter().flatten().map(|c| c.norm_sqr()).sum();
    let sum_rate: f64 = rates.iter().sum();
    let denom = transmit_power + cfg.p_circuit;
    let ee = if sum_rate == 0.0 { 0.0 } else { sum_rate / denom };
    EnergyEfficiency { ee, rates, sum_rate, transmit_power }
}

fn split_rows(v: &[Complex64], nt: usize) -> Vec<Vec<Complex64>> {
    v.chunks(nt).map(<[Complex64]>::to_vec).collect()
}

/// Sum rate over total consumed power. Decisions over budget by more than
/// [`POWER_TOL`] are rejected.
pub fn energy_efficiency(
    h: &ChannelRealization,
    w: &BeamformingDecision,
    cfg: &NetworkConfig,
) -> Result<EnergyEfficiency> {
    if h.k != w.k || h.nt != w.nt {
        return Err(Error::shape("energy_efficiency", &[&[h.k, h.nt], &[w.k, w.nt]]));
    }
    let power = w.total_power();
    if power > cfg.p_max + POWER_TOL {
        return Err(Error::Infeasible { power, budget: cfg.p_max });
    }
    Ok(ee_rows(&h.rows(), &split_rows(&w.to_complex(), w.nt), cfg))
}

/// Maximum-ratio transmission with power `p` shared equally.
pub fn mrt(h: &ChannelRealization, p: f64) -> BeamformingDecision {
    let per = (p / h.k as f64).sqrt();
    let mut w = Vec::with_capacity(h.k * h.nt);
    for u in 0..h.k {
        let n = h.user_norm(u);
        w.extend(h.user(u).into_iter().map(|c| c * (per / n)));
    }
    BeamformingDecision::from_complex(h.k, h.nt, &w)
}

/// Unit directions orthogonal to every other user's channel (zero forcing).
/// Falls back to the user's own channel when the others span the space.
pub fn zf_directions(h: &ChannelRealization) -> Vec<Vec<Complex64>> {
    let rows = h.rows();
    (0..h.k)
        .map(|k| {
            let others: Vec<&Vec<Complex64>> =
                rows.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, r)| r).collect();
            let (inside, outside) = split_projection(&rows[k], &others);
            let v = if norm(&outside) > 1e-9 * norm(&rows[k]) { outside } else { inside };
            normalized(&v)
        })
        .collect()
}

pub fn zf(h: &ChannelRealization, p: f64) -> BeamformingDecision {
    let per = (p / h.k as f64).sqrt();
    let w: Vec<Complex64> = zf_directions(h).into_iter().flatten().map(|c| c * per).collect();
    BeamformingDecision::from_complex(h.k, h.nt, &w)
}

pub(crate) fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn normalized(v: &[Complex64]) -> Vec<Complex64> {
    let n = norm(v);
    v.iter().map(|c| c / n).collect()
}

/// Split `v` into its projection onto `span(basis)` and the orthogonal rest,
/// by modified Gram-Schmidt on the basis.
pub(crate) fn split_projection(v: &[Complex64], basis: &[&Vec<Complex64>]) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut q: Vec<Vec<Complex64>> = Vec::new();
    for b in basis {
        let mut u = b.to_vec();
        for e in &q {
            let c = inner(e, &u);
            u.iter_mut().zip(e).for_each(|(x, y)| *x -= y * c);
        }
        let n = norm(&u);
        if n > 1e-12 * norm(b).max(1e-300) {
            q.push(u.iter().map(|x| x / n).collect());
        }
    }
    let mut inside = vec![Complex64::new(0.0, 0.0); v.len()];
    for e in &q {
        let c = inner(e, v);
        inside.iter_mut().zip(e).for_each(|(x, y)| *x += y * c);
    }
    let outside = v.iter().zip(&inside).map(|(a, b)| a - b).collect();
    (inside, outside)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zf_nulls_interference() {
        let cfg = NetworkConfig { k: 3, nt: 4, ..Default::default() };
        let h = sample_channel(&cfg, 3);
        let w = split_rows(&zf(&h, 1.0).to_complex(), 4);
        let g = gains(&h.rows(), &w);
        for k in 0..3 {
            for j in 0..3 {
                if j != k {
                    assert!(g[k][j] < 1e-20, "{k},{j}: {}", g[k][j]);
                }
            }
        }
    }

    #[test]
    fn projection_parts_are_orthogonal_and_sum_back() {
        let cfg = NetworkConfig { k: 3, nt: 4, ..Default::default() };
        let h = sample_channel(&cfg, 8).rows();
        let (a, b) = split_projection(&h[0], &[&h[1], &h[2]]);
        assert!(inner(&a, &b).norm() < 1e-12);
        assert!(inner(&h[1], &b).norm() < 1e-12);
        for i in 0..4 {
            assert!((a[i] + b[i] - h[0][i]).norm() < 1e-12);
        }
    }
}

use mamba_wireless::wireless::oracle::{oracle_exhaustive, oracle_iterative};
use mamba_wireless::wireless::{
    awgn_channel, energy_efficiency, mrt, oracle_beamforming, read_channels, sample_channel, single_user_optimum,
    write_channels, BeamformingDecision, ChannelRealization, NetworkConfig, OracleConfig, SymbolFrame, NOISELESS,
};
use mamba_wireless::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(k: usize) -> NetworkConfig {
    NetworkConfig::default().with_users(k)
}

#[test]
fn channels_are_reproducible_and_unit_variance() {
    let c = cfg(3);
    assert_eq!(sample_channel(&c, 42), sample_channel(&c, 42));
    assert_ne!(sample_channel(&c, 42), sample_channel(&c, 43));
    let one = sample_channel(&cfg(1).clone(), 0);
    let one = ChannelRealization { nt: 1, re: one.re[..1].to_vec(), im: one.im[..1].to_vec(), ..one };
    assert_eq!((one.k, one.nt, one.re.len()), (1, 1, 1));

    let scalar = NetworkConfig { k: 1, nt: 1, ..Default::default() };
    let draws = 100_000;
    let (mut sum_sq, mut mean_re, mut mean_im) = (0.0, 0.0, 0.0);
    for seed in 0..draws {
        let h = sample_channel(&scalar, seed);
        sum_sq += h.re[0] * h.re[0] + h.im[0] * h.im[0];
        mean_re += h.re[0];
        mean_im += h.im[0];
    }
    let var = sum_sq / draws as f64;
    assert!((var - 1.0).abs() < 0.02, "variance {var}");
    assert!((mean_re / draws as f64).abs() < 0.01 && (mean_im / draws as f64).abs() < 0.01);
}

#[test]
fn single_user_mrt_rate_matches_closed_form() {
    let c = cfg(1);
    let h = sample_channel(&c, 5);
    for p in [0.1, 0.5, 1.0] {
        let r = energy_efficiency(&h, &mrt(&h, p), &c).unwrap();
        let want = (1.0 + p * h.user_norm(0).powi(2) / c.noise_power).log2();
        assert!((r.rates[0] - want).abs() < 1e-12);
        assert!((r.ee - want / (p + c.p_circuit)).abs() < 1e-12);
    }
}

#[test]
fn zero_beamformer_has_zero_efficiency_and_overload_is_rejected() {
    let c = cfg(2);
    let h = sample_channel(&c, 1);
    assert_eq!(energy_efficiency(&h, &BeamformingDecision::zeros(2, 4), &c).unwrap().ee, 0.0);
    let heavy = mrt(&h, c.p_max * (1.0 + 1e-6));
    assert!(matches!(energy_efficiency(&h, &heavy, &c), Err(Error::Infeasible { .. })));
    let edge = mrt(&h, c.p_max);
    assert!(energy_efficiency(&h, &edge, &c).is_ok());
}

#[test]
fn orthogonal_users_see_single_user_rates() {
    let c = NetworkConfig { k: 2, nt: 2, ..Default::default() };
    let z = Complex64::new(0.0, 0.0);
    let h = ChannelRealization::from_complex(2, 2, &[Complex64::new(0.8, -0.3), z, z, Complex64::new(-0.2, 1.1)], 0);
    let w = mrt(&h, 0.6);
    let r = energy_efficiency(&h, &w, &c).unwrap();
    for k in 0..2 {
        let want = (1.0 + 0.3 * h.user_norm(k).powi(2) / c.noise_power).log2();
        assert!((r.rates[k] - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn common_phase_rotation_preserves_efficiency(seed in any::<u64>(), user in 0usize..3, theta in -10.0f64..10.0) {
        let c = cfg(3);
        let h = sample_channel(&c, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<Complex64> = (0..12).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let w = BeamformingDecision::from_complex(3, 4, &w).project_to_budget(c.p_max);
        let a = energy_efficiency(&h, &w, &c).unwrap();
        let b = energy_efficiency(&h, &w.rotated(user, theta), &c).unwrap();
        prop_assert!((a.ee - b.ee).abs() <= 1e-12 * a.ee.max(1.0));
    }

    #[test]
    fn single_user_rate_grows_with_channel_gain(seed in any::<u64>(), scale in 1.0001f64..10.0) {
        let c = cfg(1);
        let h = sample_channel(&c, seed);
        let w = mrt(&h, 0.7);
        let base = energy_efficiency(&h, &w, &c).unwrap().rates[0];
        let grown = energy_efficiency(&h.scaled(scale), &w, &c).unwrap().rates[0];
        prop_assert!(grown > base);
    }
}

#[test]
fn single_user_oracle_matches_golden_section() {
    let c = cfg(1);
    let o = OracleConfig::default();
    for seed in 0..20 {
        let h = sample_channel(&c, seed);
        let (_, best) = single_user_optimum(&h, &c);
        let (_, grid) = oracle_exhaustive(&h, &c, &o).unwrap();
        let (_, iter) = oracle_iterative(&h, &c, &o);
        assert!((grid - best).abs() <= 0.01 * best, "seed {seed}: {grid} vs {best}");
        assert!((iter - best).abs() <= 0.01 * best, "seed {seed}: {iter} vs {best}");
        // Neither route can beat the closed form by more than rounding.
        assert!(grid <= best * (1.0 + 1e-9) && iter <= best * (1.0 + 1e-9));
    }
}

#[test]
fn huge_circuit_power_pushes_power_to_budget() {
    let c = NetworkConfig { k: 1, p_circuit: 1e6, ..Default::default() };
    let h = sample_channel(&c, 3);
    let (p, _) = single_user_optimum(&h, &c);
    assert!(p > 0.999 * c.p_max, "{p}");
    let r = oracle_beamforming(&h, &c, &OracleConfig::default()).unwrap();
    assert!(r.w.total_power() > 0.999 * c.p_max);
}

#[test]
fn exhaustive_route_has_a_user_limit() {
    let c = cfg(5);
    let h = sample_channel(&c, 0);
    assert!(matches!(oracle_exhaustive(&h, &c, &OracleConfig::default()), Err(Error::OracleLimit { k: 5, limit: 4 })));
    // The iterative route still runs.
    let r = oracle_beamforming(&h, &c, &OracleConfig::default()).unwrap();
    assert!(r.exhaustive_ee.is_none() && r.ee > 0.0);
}

#[test]
fn two_user_routes_cross_validate() {
    let c = cfg(2);
    let o = OracleConfig::default();
    for seed in 0..30 {
        let h = sample_channel(&c, 1000 + seed);
        let (_, grid) = oracle_exhaustive(&h, &c, &o).unwrap();
        let (_, iter) = oracle_iterative(&h, &c, &o);
        assert!(iter >= 0.99 * grid, "seed {seed}: iterative {iter} vs grid {grid}");
    }
}

#[test]
fn oracle_beats_equal_power_mrt() {
    for k in 1..=4 {
        let c = cfg(k);
        for seed in 0..5 {
            let h = sample_channel(&c, seed);
            let r = oracle_beamforming(&h, &c, &OracleConfig::default()).unwrap();
            let base = energy_efficiency(&h, &mrt(&h, c.p_max), &c).unwrap().ee;
            assert!(r.ee >= base, "K={k} seed={seed}");
            let check = energy_efficiency(&h, &r.w, &c).unwrap().ee;
            assert!((check - r.ee).abs() <= 1e-9 * r.ee);
        }
    }
}

#[test]
fn awgn_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = SymbolFrame::new((0..1000).map(|_| rng.gen_range(-2.0..2.0)).collect()).normalize();
    assert!((x.mean_power() - 1.0).abs() < 1e-12);
    assert_eq!(awgn_channel(&x, NOISELESS, 1).unwrap().data, x.data);
    assert_eq!(awgn_channel(&x, 3.0, 9).unwrap(), awgn_channel(&x, 3.0, 9).unwrap());
    assert_ne!(awgn_channel(&x, 3.0, 9).unwrap(), awgn_channel(&x, 3.0, 10).unwrap());
}

#[test]
fn awgn_noise_power_and_independence() {
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = SymbolFrame::new((0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()).normalize();
    let y = awgn_channel(&x, 0.0, 2).unwrap();
    let noise: Vec<f64> = y.data.iter().zip(&x.data).map(|(a, b)| a - b).collect();
    let power = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
    assert!((power - 1.0).abs() < 0.01, "{power}");
    let mean_n = noise.iter().sum::<f64>() / n as f64;
    let mean_x = x.data.iter().sum::<f64>() / n as f64;
    let cov: f64 = noise.iter().zip(&x.data).map(|(a, b)| (a - mean_n) * (b - mean_x)).sum::<f64>() / n as f64;
    let var_x = x.data.iter().map(|v| (v - mean_x).powi(2)).sum::<f64>() / n as f64;
    let corr = cov / (power.sqrt() * var_x.sqrt());
    assert!(corr.abs() < 0.01, "{corr}");
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.bin");
    let hs: Vec<_> = (0..5).map(|s| sample_channel(&cfg(1 + s as usize % 3), s)).collect();
    write_channels(&path, &hs).unwrap();
    assert_eq!(read_channels(&path).unwrap(), hs);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..5], b"MWCH\x01");
    assert_eq!(u64::from_le_bytes(bytes[5..13].try_into().unwrap()), 5);
}

#[test]
fn estimation_error_is_seeded_and_optional() {
    let h = sample_channel(&cfg(2), 4);
    assert_eq!(h.with_estimation_error(0.0, 1), h);
    let a = h.with_estimation_error(0.1, 1);
    assert_eq!(a, h.with_estimation_error(0.1, 1));
    assert_ne!(a, h);
}

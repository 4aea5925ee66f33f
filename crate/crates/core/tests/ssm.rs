use std::sync::Arc;

use mamba_wireless::ssm::{
    discretize, random_scan_inputs, scan_parallel, scan_sequential, select_parameters, MambaBlock, MambaBlockConfig,
    ScanInputs, ScanState, SelectiveScan, SsmParams,
};
use mamba_wireless::tensor::gradcheck::GradCheck;
use mamba_wireless::tensor::{ParamStore, Params, Tape, Tensor};
use mamba_wireless::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300))
}

/// Scan outputs and states are signed sums that can cancel to near zero in
/// single entries, so the two executions are compared normwise.
fn norm_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.len() == b.len() && diff <= tol * scale.max(1e-300)
}

#[test]
fn zero_input_selects_ln2_steps_and_zero_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = SsmParams::init(3, 4, &mut rng);
    p.delta_bias = Tensor::zeros(&[3]);
    let tape = Tape::new();
    let s = select_parameters(&tape, &Tensor::zeros(&[5, 3]), &p).unwrap();
    assert!(s.delta.data().iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
    assert!(s.b.data().iter().chain(s.c.data()).all(|&v| v == 0.0));
    let err = select_parameters(&tape, &Tensor::zeros(&[5, 4]), &p).unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

#[test]
fn identical_steps_select_identical_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = SsmParams::init(4, 3, &mut rng);
    let row = Tensor::randn(&[1, 4], 1.0, &mut rng).to_vec();
    let x = Tensor::new(&[2, 4], row.repeat(2)).unwrap();
    let s = select_parameters(&Tape::new(), &x, &p).unwrap();
    for t in [&s.delta, &s.b, &s.c] {
        let w = t.shape()[1];
        assert_eq!(&t.data()[..w], &t.data()[w..]);
    }
}

#[test]
fn discretize_examples() {
    let a = Tensor::new(&[1, 1], vec![-1.0]).unwrap();
    let b = Tensor::new(&[1, 1], vec![0.7]).unwrap();
    let (ab, bb) = discretize(&a, &Tensor::new(&[1, 1], vec![2f64.ln()]).unwrap(), &b).unwrap();
    assert!((ab.item() - 0.5).abs() < 1e-15);
    assert!((bb.item() - 0.7 * 2f64.ln()).abs() < 1e-15);
    let (ab, bb) = discretize(&a, &Tensor::new(&[1, 1], vec![1e-300]).unwrap(), &b).unwrap();
    assert_eq!(ab.item(), 1.0);
    assert!(bb.item() < 1e-299);
    for bad in [0.0, -0.1, f64::NAN] {
        let err = discretize(&a, &Tensor::new(&[1, 1], vec![bad]).unwrap(), &b).unwrap_err();
        assert!(matches!(err, Error::NonPositiveStep(_)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn selected_steps_are_positive(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = SsmParams::init(4, 2, &mut rng);
        let x = Tensor::randn(&[3, 4], scale, &mut rng);
        let s = select_parameters(&Tape::new(), &x, &p).unwrap();
        prop_assert!(s.delta.data().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn discretized_transitions_lie_in_unit_interval(
        a in prop::collection::vec(-20.0f64..-1e-3, 6),
        dt in prop::collection::vec(1e-4f64..5.0, 4),
    ) {
        let a = Tensor::new(&[2, 3], a).unwrap();
        let delta = Tensor::new(&[2, 2], dt).unwrap();
        let (ab, _) = discretize(&a, &delta, &Tensor::zeros(&[2, 3])).unwrap();
        prop_assert!(ab.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn scan_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (l, d, n) = (6, 2, 3);
    let x = Tensor::randn(&[l, d], 1.0, &mut rng);
    let c = Tensor::randn(&[l, n], 1.0, &mut rng);
    let ab = Tensor::uniform(&[l, d, n], 0.1, 0.9, &mut rng);
    let silent = ScanInputs::from_discretized(&x, &ab, &Tensor::zeros(&[l, d, n]), &c).unwrap();
    let (y, _, _) = scan_sequential(&silent, &ScanState::zeros(d, n)).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));

    // Single step from rest: y = <C, B̄ x>.
    let x1 = Tensor::new(&[1, 1], vec![1.5]).unwrap();
    let bb = Tensor::new(&[1, 1, 2], vec![0.2, -0.4]).unwrap();
    let c1 = Tensor::new(&[1, 2], vec![3.0, 0.5]).unwrap();
    let one = ScanInputs::from_discretized(&x1, &Tensor::full(&[1, 1, 2], 0.3), &bb, &c1).unwrap();
    let (ys, hs, _) = scan_sequential(&one, &ScanState::zeros(1, 2)).unwrap();
    let (yp, hp, _) = scan_parallel(&one, &ScanState::zeros(1, 2)).unwrap();
    assert!((ys[0] - (3.0 * 0.2 * 1.5 + 0.5 * -0.4 * 1.5)).abs() < 1e-15);
    assert_eq!(ys, yp);
    assert_eq!(hs, hp);

    // Pure accumulation: h_L = h0 + L c.
    let l = 37;
    let acc = ScanInputs::from_discretized(
        &Tensor::ones(&[l, 1]),
        &Tensor::ones(&[l, 1, 1]),
        &Tensor::full(&[l, 1, 1], 0.25),
        &Tensor::ones(&[l, 1]),
    )
    .unwrap();
    let h0 = ScanState { h: vec![2.0], t: 0 };
    let (_, hl, _) = scan_parallel(&acc, &h0).unwrap();
    assert!((hl.h[0] - (2.0 + 0.25 * l as f64)).abs() < 1e-12);
    assert_eq!(hl.t, l);
}

#[test]
fn null_step_is_state_noop() {
    let inputs = random_scan_inputs(9, 2, 3, 4).unwrap();
    let h0 = ScanState::zeros(2, 3);
    let (_, base, _) = scan_sequential(&inputs, &h0).unwrap();
    let mut padded = inputs.clone();
    padded.insert_null_step(4);
    let (y, after, _) = scan_sequential(&padded, &h0).unwrap();
    assert_eq!(base.h, after.h);
    // The state going into the null step is the state coming out of it.
    let (y0, _, _) = scan_sequential(&inputs, &h0).unwrap();
    assert_eq!(&y[..4 * 2], &y0[..4 * 2]);
}

#[test]
fn parallel_matches_sequential_on_assorted_lengths() {
    for (i, &l) in [1usize, 2, 3, 7, 64, 255, 1000, 1024].iter().enumerate() {
        let inputs = random_scan_inputs(l, 3, 4, 100 + i as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let h0 = ScanState { h: (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(), t: 0 };
        let (ys, hs, cs) = scan_sequential(&inputs, &h0).unwrap();
        let (yp, hp, cp) = scan_parallel(&inputs, &h0).unwrap();
        assert!(norm_close(&ys, &yp, 1e-10), "L={l}");
        assert!(norm_close(&hs.h, &hp.h, 1e-10), "L={l}");
        assert!(cp.combines <= 3 * cs.combines, "L={l}: {cp:?} vs {cs:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parallel_scan_equivalence(l in 1usize..1025, seed in any::<u64>()) {
        let inputs = random_scan_inputs(l, 2, 3, seed).unwrap();
        let h0 = ScanState::zeros(2, 3);
        let (ys, hs, cs) = scan_sequential(&inputs, &h0).unwrap();
        let (yp, hp, cp) = scan_parallel(&inputs, &h0).unwrap();
        prop_assert!(norm_close(&ys, &yp, 1e-10));
        prop_assert!(norm_close(&hs.h, &hp.h, 1e-10));
        prop_assert!(cp.combines <= 3 * cs.combines);
    }

    #[test]
    fn null_steps_never_change_final_state(
        seed in any::<u64>(),
        l in 1usize..40,
        positions in prop::collection::vec(0usize..1000, 1..6),
    ) {
        let inputs = random_scan_inputs(l, 2, 2, seed).unwrap();
        let h0 = ScanState { h: vec![0.5, -0.25, 1.0, 0.0], t: 0 };
        let (_, base, _) = scan_sequential(&inputs, &h0).unwrap();
        let mut padded = inputs.clone();
        for p in positions {
            let at = p % (padded.len() + 1);
            padded.insert_null_step(at);
        }
        let (_, seq, _) = scan_sequential(&padded, &h0).unwrap();
        let (_, par, _) = scan_parallel(&padded, &h0).unwrap();
        prop_assert_eq!(&seq.h, &base.h);
        prop_assert!(norm_close(&par.h, &base.h, 1e-12));
    }

    #[test]
    fn state_is_bounded_by_accumulated_drive(seed in any::<u64>(), l in 1usize..200) {
        let inputs = random_scan_inputs(l, 2, 2, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h0 = ScanState { h: (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(), t: 0 };
        let (_, hl, _) = scan_sequential(&inputs, &h0).unwrap();
        prop_assert!(hl.max_abs() <= h0.max_abs() + inputs.max_drive() * l as f64 + 1e-12);
    }
}

#[test]
fn million_step_scan_stays_finite() {
    let l = 1_000_000;
    let inputs = random_scan_inputs(l, 1, 2, 9).unwrap();
    let h0 = ScanState { h: vec![1.0, -1.0], t: 0 };
    let (ys, hs, _) = scan_sequential(&inputs, &h0).unwrap();
    let (yp, hp, _) = scan_parallel(&inputs, &h0).unwrap();
    assert!(ys.iter().chain(&yp).all(|v| v.is_finite()));
    assert!(hs.max_abs() <= 1.0 + inputs.max_drive() * l as f64);
    assert!(norm_close(&hs.h, &hp.h, 1e-10));
}

fn block(cfg: MambaBlockConfig, seed: u64) -> (ParamStore, MambaBlock) {
    let mut store = ParamStore::new(seed);
    let b = MambaBlock::new(&mut store, "blk", cfg).unwrap();
    (store, b)
}

#[test]
fn block_preserves_shape() {
    for (l, d) in [(5, 8), (64, 16)] {
        let cfg = MambaBlockConfig { d_model: d, d_state: 4, ..Default::default() };
        let (store, b) = block(cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[l, d], 1.0, &mut rng);
        let y = b.forward(&Tape::new(), &store.frozen(), &x).unwrap();
        assert_eq!(y.shape(), &[l, d]);
        let xb = Tensor::randn(&[2, l, d], 1.0, &mut rng);
        assert_eq!(b.forward(&Tape::new(), &store.frozen(), &xb).unwrap().shape(), &[2, l, d]);
    }
}

#[test]
fn block_is_causal() {
    let cfg = MambaBlockConfig { d_model: 6, d_state: 5, ..Default::default() };
    let (store, b) = block(cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (l, d) = (12, 6);
    let x = Tensor::randn(&[l, d], 1.0, &mut rng);
    let y = b.forward(&Tape::new(), &store.frozen(), &x).unwrap();
    for k in [0, 5, 10] {
        let mut moved = x.to_vec();
        for v in &mut moved[(k + 1) * d..] {
            *v += rng.gen_range(-1.0..1.0);
        }
        let y2 = b.forward(&Tape::new(), &store.frozen(), &Tensor::new(&[l, d], moved).unwrap()).unwrap();
        assert_eq!(&y.data()[..(k + 1) * d], &y2.data()[..(k + 1) * d], "k={k}");
        assert_ne!(&y.data()[(k + 1) * d..], &y2.data()[(k + 1) * d..]);
    }
}

#[test]
fn zero_output_projection_gives_identity() {
    let cfg = MambaBlockConfig { d_model: 4, d_state: 3, ..Default::default() };
    let (mut store, b) = block(cfg, 5);
    let shape = store.get(b.out_proj()).shape().to_vec();
    store.set(b.out_proj(), Tensor::zeros(&shape)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::randn(&[7, 4], 1.0, &mut rng);
    let y = b.forward(&Tape::new(), &store.frozen(), &x).unwrap();
    assert!(y.bit_eq(&x));
}

#[test]
fn selective_scan_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (bsz, l, d, n) = (2, 5, 3, 4);
    let u = Tensor::randn(&[bsz, l, d], 1.0, &mut rng);
    let dt = Tensor::uniform(&[bsz, l, d], 0.05, 0.8, &mut rng);
    let a = Tensor::uniform(&[d, n], -2.0, -0.2, &mut rng);
    let bm = Tensor::randn(&[bsz, l, n], 1.0, &mut rng);
    let cm = Tensor::randn(&[bsz, l, n], 1.0, &mut rng);
    let w = Tensor::randn(&[bsz, l, d], 1.0, &mut rng);
    let report = GradCheck::default()
        .run(
            |t, x| {
                let y = t.apply_custom(Arc::new(SelectiveScan), &[&x[0], &x[1], &x[2], &x[3], &x[4]])?;
                t.sum(&t.mul(&y, &w)?)
            },
            &[u, dt, a, bm, cm],
        )
        .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn selective_scan_op_matches_reference_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (l, d, n) = (9, 2, 3);
    let u = Tensor::randn(&[l, d], 1.0, &mut rng);
    let dt = Tensor::uniform(&[l, d], 0.05, 0.8, &mut rng);
    let a = Tensor::uniform(&[d, n], -2.0, -0.2, &mut rng);
    let bm = Tensor::randn(&[l, n], 1.0, &mut rng);
    let cm = Tensor::randn(&[l, n], 1.0, &mut rng);
    let inputs = ScanInputs::new(&u, &dt, &a, &bm, &cm).unwrap();
    let (want, _, _) = scan_sequential(&inputs, &ScanState::zeros(d, n)).unwrap();
    let r = |t: &Tensor, s: &[usize]| t.reshaped(s).unwrap();
    let y = Tape::new()
        .apply_custom(
            Arc::new(SelectiveScan),
            &[&r(&u, &[1, l, d]), &r(&dt, &[1, l, d]), &a, &r(&bm, &[1, l, n]), &r(&cm, &[1, l, n])],
        )
        .unwrap();
    assert!(rel_close(y.data(), &want, 1e-13));
}

#[test]
fn block_gradients_match_finite_differences() {
    let cfg = MambaBlockConfig { d_model: 3, d_state: 2, expand: 2, conv_width: 3, ..Default::default() };
    let (store, b) = block(cfg, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::randn(&[2, 4, 3], 1.0, &mut rng);
    let w = Tensor::randn(&[2, 4, 3], 1.0, &mut rng);
    // Generic point: every weight uniform in [-1, 1], so step sizes are O(1)
    // and no gradient entry sits at the finite-difference noise floor.
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, t)| Tensor::uniform(t.shape(), -1.0, 1.0, &mut rng)));
    let report = GradCheck::default()
        .run(
            |t, xs| {
                let p = Params::from_tensors(xs[1..].to_vec());
                let y = b.forward(t, &p, &xs[0])?;
                t.sum(&t.mul(&y, &w)?)
            },
            &inputs,
        )
        .unwrap();
    assert!(report.passed(), "{report:?}");
}

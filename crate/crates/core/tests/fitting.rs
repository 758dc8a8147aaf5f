use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tchain::decompose::{
    als_fit, fit_with_ss_control, gaussian_model, init_model, masked_als_fit, InitScheme,
};
use tchain::stabilize::{rotation_correct, ssc_correct, ssc_correct_masked};
use tchain::{
    btd_to_tc, masked_relative_error, relative_error, tc_to_btd, BtdSharedModel, CorrectionConfig,
    DenseTensor, FitConfig, MaskTensor, TcModel, Termination,
};

fn model(dims: &[usize], bonds: &[usize], seed: u64) -> TcModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_model(dims, bonds, &mut rng).unwrap()
}

fn err_abs(y: &DenseTensor, m: &TcModel) -> f64 {
    y.sub(&m.reconstruct()).unwrap().frobenius_norm()
}

#[test]
fn als_from_the_exact_model_stops_at_once() {
    let truth = model(&[5, 4, 6], &[2, 3, 2], 1);
    let y = truth.reconstruct();
    let (m, report) = als_fit(&y, &truth, &FitConfig::default()).unwrap();
    assert_eq!(report.termination, Some(Termination::Converged));
    assert!(report.iterations() <= 1);
    assert!(relative_error(&y, &m.reconstruct()).unwrap() <= 1e-10);
}

#[test]
fn als_error_never_increases() {
    let y = model(&[5, 5, 5], &[3, 3, 3], 2).reconstruct();
    let m0 = init_model(&[5, 5, 5], &[2, 2, 2], 3, InitScheme::Gaussian, None).unwrap();
    let cfg = FitConfig { max_iters: 60, ..FitConfig::default() };
    let (_, report) = als_fit(&y, &m0, &cfg).unwrap();
    for w in report.relative_error.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-10), "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn full_mask_matches_plain_als() {
    let y = model(&[4, 5, 3], &[2, 2, 2], 4).reconstruct();
    let m0 = init_model(&[4, 5, 3], &[2, 2, 2], 5, InitScheme::Gaussian, None).unwrap();
    let cfg = FitConfig { max_iters: 15, ..FitConfig::default() };
    let mask = MaskTensor::full(y.dims().to_vec()).unwrap();
    let (a, _) = als_fit(&y, &m0, &cfg).unwrap();
    let (b, _) = masked_als_fit(&y, &mask, &m0, &cfg).unwrap();
    let gap = a.reconstruct().sub(&b.reconstruct()).unwrap().frobenius_norm();
    assert!(gap <= 1e-8 * y.frobenius_norm());
}

#[test]
fn masked_fit_ignores_missing_values() {
    let truth = model(&[5, 5, 5], &[2, 2, 2], 6);
    let y = truth.reconstruct();
    let keep: Vec<bool> = (0..y.len()).map(|k| k % 3 != 0).collect();
    let mask = MaskTensor::new(y.dims().to_vec(), keep.clone()).unwrap();
    let mut garbage = y.clone();
    for (v, &k) in garbage.data_mut().iter_mut().zip(&keep) {
        if !k {
            *v = 1e6;
        }
    }
    let m0 = truth.scaled(&[1.01, 0.99, 1.0]).unwrap();
    let (m, _) = masked_als_fit(&garbage, &mask, &m0, &FitConfig::default()).unwrap();
    assert!(masked_relative_error(&garbage, &m.reconstruct(), &mask).unwrap() <= 1e-6);
}

#[test]
fn ss_control_corrections_lower_ss_within_the_slack() {
    let y = model(&[6, 6, 6], &[3, 3, 3], 7).reconstruct();
    let m0 = init_model(&[6, 6, 6], &[3, 3, 3], 8, InitScheme::Gaussian, None).unwrap();
    let cfg = FitConfig { max_iters: 300, ss_max: 50.0 * m0.sensitivity().sensitivity, ..FitConfig::default() };
    let corr = CorrectionConfig { delta_factor: 1.5, ..CorrectionConfig::default() };
    let (m, report) = fit_with_ss_control(&y, &m0, &cfg, &corr).unwrap();
    for ev in &report.correction_events {
        assert!(ev.ss_after <= ev.ss_before * (1.0 + 1e-9));
        assert!(ev.error_after <= ev.error_before * corr.delta_factor * (1.0 + 1e-6));
    }
    assert!(m.sensitivity().sensitivity.is_finite());
}

#[test]
fn btd_and_chain_describe_the_same_tensor() {
    let t = 3;
    let a: Vec<DMatrix<f64>> = (0..t).map(|k| DMatrix::from_fn(4, 2, |i, j| (i + 2 * j + k) as f64 * 0.3 - 1.0)).collect();
    let c: Vec<DMatrix<f64>> = (0..t).map(|k| DMatrix::from_fn(5, 3, |i, j| ((i * j + k) % 4) as f64 - 1.5)).collect();
    let b = DenseTensor::from_fn(vec![2, 6, 3], |i| (i[0] + i[1] * i[2]) as f64 / 7.0 - 0.4).unwrap();
    let btd = BtdSharedModel::new(a, b, c).unwrap();
    let tc = btd_to_tc(&btd).unwrap();
    assert_eq!(tc.bond_dims(), vec![t, 2, 3]);
    let gap = btd.reconstruct().sub(&tc.reconstruct()).unwrap().frobenius_norm();
    assert!(gap <= 1e-12 * btd.reconstruct().frobenius_norm());
    assert_eq!(tc_to_btd(&tc).unwrap(), btd);
    assert!(tc_to_btd(&model(&[2, 2, 2, 2], &[1, 1, 1, 1], 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rotation_keeps_tensor_and_lowers_ss(seed in any::<u64>(), r in 2usize..=3) {
        let m = model(&[4, 5, 4], &[r, r, 2], seed);
        let Ok((out, hist)) = rotation_correct(&m, &CorrectionConfig::default()) else {
            return Ok(());
        };
        let y = m.reconstruct();
        prop_assert!(err_abs(&y, &out) <= 1e-9 * y.frobenius_norm());
        prop_assert!(hist.last().unwrap() <= &(hist[0] * (1.0 + 1e-9)));
    }

    #[test]
    fn ssc_respects_the_error_bound(seed in any::<u64>(), slack in 1e-4f64..1e-1) {
        let truth = model(&[4, 4, 5], &[2, 2, 2], seed);
        let y = truth.reconstruct();
        let start = truth.scaled(&[20.0, 0.05, 1.0]).unwrap();
        let delta = slack * y.frobenius_norm();
        let (out, report) = ssc_correct(&y, &start, Some(delta), &CorrectionConfig::default()).unwrap();
        prop_assert!(err_abs(&y, &out) <= delta * (1.0 + 1e-8));
        prop_assert!(out.sensitivity().sensitivity <= start.sensitivity().sensitivity * (1.0 + 1e-9));
        prop_assert!(report.sensitivity.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    }

    #[test]
    fn masked_ssc_bounds_only_observed_entries(seed in any::<u64>()) {
        let truth = model(&[4, 4, 4], &[2, 2, 2], seed);
        let y = truth.reconstruct();
        let keep: Vec<bool> = (0..y.len()).map(|k| (k as u64 ^ seed).is_multiple_of(2)).collect();
        let mask = MaskTensor::new(y.dims().to_vec(), keep).unwrap();
        let start = truth.scaled(&[0.1, 10.0, 1.0]).unwrap();
        let delta = 1e-2 * y.frobenius_norm();
        let (out, _) = ssc_correct_masked(&y, &mask, &start, Some(delta), &CorrectionConfig::default()).unwrap();
        let diff = y.sub(&out.reconstruct()).unwrap();
        let observed: f64 = diff.data().iter().zip(mask.data()).filter(|(_, &k)| k).map(|(v, _)| v * v).sum();
        prop_assert!(observed.sqrt() <= delta * (1.0 + 1e-8));
    }
}

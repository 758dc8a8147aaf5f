use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tchain::decompose::gaussian_model;
use tchain::{cyclic_shift, refold, train_contract, unfold, DenseTensor, SubchainNorm, TcModel};

fn model(dims: &[usize], bonds: &[usize], seed: u64) -> TcModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_model(dims, bonds, &mut rng).unwrap()
}

fn slice(core: &DenseTensor, i: usize) -> DMatrix<f64> {
    let d = core.dims();
    DMatrix::from_fn(d[0], d[2], |a, b| core.get(&[a, i, b]))
}

/// Entry of the chain as the trace of its slice product.
fn entry_by_trace(m: &TcModel, idx: &[usize]) -> f64 {
    let mut p = slice(m.core(0), idx[0]);
    for (n, &i) in idx.iter().enumerate().skip(1) {
        p *= slice(m.core(n), i);
    }
    p.trace()
}

fn multi_index(mut lin: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let i = lin % d;
            lin /= d;
            i
        })
        .collect()
}

fn shape() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, u64)> {
    (3usize..=4)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(1usize..=4, n),
                proptest::collection::vec(1usize..=3, n),
                any::<u64>(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unfold_then_refold_is_identity((dims, _, seed) in shape(), split in 0usize..5) {
        let t = model(&dims, &vec![1; dims.len()], seed).reconstruct();
        let n = dims.len();
        let mut modes: Vec<usize> = (0..n).collect();
        modes.rotate_left(seed as usize % n);
        let k = split.min(n);
        let u = unfold(&t, &modes[..k], &modes[k..]).unwrap();
        prop_assert_eq!(u.rows * u.cols, t.len());
        prop_assert_eq!(refold(&u).unwrap(), t);
    }

    #[test]
    fn reconstruction_matches_slice_traces((dims, bonds, seed) in shape()) {
        let m = model(&dims, &bonds, seed);
        let y = m.reconstruct();
        for lin in 0..y.len() {
            let idx = multi_index(lin, &dims);
            let want = entry_by_trace(&m, &idx);
            prop_assert!((y.get(&idx) - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn rotating_cores_shifts_modes((dims, bonds, seed) in shape()) {
        let m = model(&dims, &bonds, seed);
        let mut cores = m.cores().to_vec();
        cores.rotate_left(1);
        let rotated = TcModel::new(cores).unwrap().reconstruct();
        let shifted = cyclic_shift(&m.reconstruct());
        prop_assert_eq!(rotated.dims(), shifted.dims());
        let diff = rotated.sub(&shifted).unwrap().frobenius_norm();
        prop_assert!(diff <= 1e-12 * (1.0 + shifted.frobenius_norm()));
    }

    #[test]
    fn scaling_keeps_tensor_and_balancing_is_canonical((dims, bonds, seed) in shape(), f in 0.1f64..10.0) {
        let m = model(&dims, &bonds, seed);
        let n = m.order();
        let mut factors = vec![1.0; n];
        factors[0] = f;
        factors[n - 1] /= f;
        let s = m.scaled(&factors).unwrap();
        let y = m.reconstruct();
        prop_assert!(y.sub(&s.reconstruct()).unwrap().frobenius_norm() <= 1e-12 * y.frobenius_norm());
        let (ba, bb) = (m.balanced_normalize().unwrap(), s.balanced_normalize().unwrap());
        let (ssa, ssb) = (ba.sensitivity().sensitivity, bb.sensitivity().sensitivity);
        prop_assert!((ssa - ssb).abs() <= 1e-9 * ssa);
        prop_assert!(ssa <= m.sensitivity().sensitivity * (1.0 + 1e-12));
    }

    #[test]
    fn intensity_bound_dominates_sensitivity((dims, bonds, seed) in shape()) {
        let m = model(&dims, &bonds, seed);
        let ss = m.sensitivity().sensitivity;
        prop_assert!(ss <= m.intensity_bound() * (1.0 + 1e-12));
    }

    #[test]
    fn subchain_norm_methods_agree((dims, bonds, seed) in shape()) {
        let m = model(&dims, &bonds, seed);
        let dense = m.sensitivity_with(SubchainNorm::Dense).sensitivity;
        let auto = m.sensitivity().sensitivity;
        prop_assert!((dense - auto).abs() <= 1e-10 * dense);
    }
}

#[test]
fn train_contract_matches_loops() {
    let a = DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] + 2 * i[1]) as f64 - 0.5 * i[2] as f64).unwrap();
    let b = DenseTensor::from_fn(vec![4, 2], |i| (i[0] * i[1]) as f64 + 1.0).unwrap();
    let c = train_contract(&a, &b).unwrap();
    assert_eq!(c.dims(), &[2, 3, 2]);
    for p in 0..2 {
        for q in 0..3 {
            for r in 0..2 {
                let want: f64 = (0..4).map(|k| a.get(&[p, q, k]) * b.get(&[k, r])).sum();
                assert_eq!(c.get(&[p, q, r]), want);
            }
        }
    }
    assert!(train_contract(&a, &a).is_err());
}

#[test]
fn model_and_tensor_files_round_trip() {
    let m = model(&[3, 4, 2], &[2, 1, 3], 9);
    let mut buf = Vec::new();
    tchain::io::write_model(&mut buf, &m).unwrap();
    let back = tchain::io::read_model(&mut buf.as_slice()).unwrap();
    assert_eq!(back, m);

    let y = m.reconstruct();
    let mut buf = Vec::new();
    tchain::io::write_tensor(&mut buf, &y).unwrap();
    assert_eq!(tchain::io::read_tensor(&mut buf.as_slice()).unwrap(), y);
    assert!(tchain::io::read_tensor(&mut &buf[..buf.len() - 1]).is_err());
}

#[test]
fn rejects_mismatched_bonds() {
    let a = DenseTensor::zeros(vec![2, 3, 2]).unwrap();
    let b = DenseTensor::zeros(vec![3, 3, 2]).unwrap();
    assert!(TcModel::new(vec![a.clone(), b, a.clone()]).is_err());
    assert!(TcModel::new(vec![a.clone(), a]).is_err());
}

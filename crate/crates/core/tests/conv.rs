use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tchain::conv::{
    block_flops, block_params, build_tc_block, conv2d_reference, kernel_to_order3, order3_to_kernel,
    rank_grid_search, tc_block_forward, ConvKernel, GridSearchConfig, RankGrid,
};
use tchain::decompose::gaussian_model;
use tchain::{DenseTensor, FitConfig, TcModel};

fn kernel_chain(co: usize, ci: usize, d: usize, bonds: [usize; 3], seed: u64) -> TcModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_model(&[co, ci, d * d], &bonds, &mut rng).unwrap()
}

fn image(c: usize, h: usize, w: usize, seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_model(&[c, h, w], &[1, 1, 1], &mut rng)
        .map(|m| m.reconstruct())
        .unwrap()
}

/// Cross-correlation with zero padding, written out directly.
fn naive_conv(x: &DenseTensor, k: &DenseTensor, stride: usize, pad: usize) -> DenseTensor {
    let (co, ci, d) = (k.dims()[0], k.dims()[1], k.dims()[2]);
    let (h, w) = (x.dims()[1], x.dims()[2]);
    let ho = (h + 2 * pad - d) / stride + 1;
    let wo = (w + 2 * pad - d) / stride + 1;
    let mut out = DenseTensor::zeros(vec![co, ho, wo]).unwrap();
    for o in 0..co {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for a in 0..d {
                        for b in 0..d {
                            let (y, z) = ((i * stride + a) as isize - pad as isize, (j * stride + b) as isize - pad as isize);
                            if y >= 0 && z >= 0 && (y as usize) < h && (z as usize) < w {
                                acc += k.get(&[o, c, a, b]) * x.get(&[c, y as usize, z as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, i, j], acc);
            }
        }
    }
    out
}

fn rel_gap(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(1e-300)
}

fn check_block(m: &TcModel, stride: usize, pad: usize, seed: u64) -> f64 {
    let d = (m.mode_dims()[2] as f64).sqrt() as usize;
    let k = order3_to_kernel(&m.reconstruct(), stride, pad).unwrap();
    // Sized so the strided output is integral: 5 x 6 output positions.
    let (h, w) = (4 * stride + d - 2 * pad, 5 * stride + d - 2 * pad);
    let x = image(m.mode_dims()[1], h, w, seed);
    let f = build_tc_block(m).unwrap();
    let block = tc_block_forward(&x, &f, stride, pad).unwrap();
    let want = naive_conv(&x, &k.weights, stride, pad);
    assert_eq!(block.dims(), want.dims());
    assert!(rel_gap(&conv2d_reference(&x, &k).unwrap(), &want) <= 1e-12);
    assert!(rel_gap(&f.compose_kernel(), &k.weights) <= 1e-12);
    assert_eq!(f.w2.dims(), &[m.bond_dims()[2], m.bond_dims()[0], d, d]);
    rel_gap(&block, &want)
}

#[test]
fn separable_unit_ranks() {
    let m = kernel_chain(3, 2, 3, [1, 1, 1], 1);
    assert!(check_block(&m, 1, 1, 2) <= 1e-12);
}

#[test]
fn stride_two_and_padding() {
    let m = kernel_chain(5, 4, 3, [2, 3, 2], 3);
    assert!(check_block(&m, 1, 1, 4) <= 1e-12);
    assert!(check_block(&m, 2, 0, 5) <= 1e-12);
    assert!(check_block(&m, 2, 1, 6) <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn block_equals_dense_convolution(
        co in 1usize..=4, ci in 1usize..=4, d in 1usize..=3,
        b0 in 1usize..=3, b1 in 1usize..=3, b2 in 1usize..=3,
        stride in 1usize..=2, pad in 0usize..=2, seed in any::<u64>(),
    ) {
        let m = kernel_chain(co, ci, d, [b0, b1, b2], seed);
        prop_assert!(check_block(&m, stride, pad, seed ^ 1) <= 1e-10);
    }

    #[test]
    fn block_params_match_the_chain(co in 1usize..=6, ci in 1usize..=6, d in 1usize..=3, b in proptest::array::uniform3(1usize..=4)) {
        let m = kernel_chain(co, ci, d, b, 0);
        let f = build_tc_block(&m).unwrap();
        prop_assert_eq!(f.num_params(), m.num_params());
        prop_assert_eq!(block_params(ci, co, d, f.ranks), m.num_params());
    }

    #[test]
    fn flops_grow_with_every_rank(ci in 1usize..=8, co in 1usize..=8, d in 1usize..=5, r in proptest::array::uniform3(1usize..=6)) {
        let base = block_flops(ci, co, d, (r[0], r[1], r[2]));
        prop_assert!(block_flops(ci, co, d, (r[0] + 1, r[1], r[2])) > base);
        prop_assert!(block_flops(ci, co, d, (r[0], r[1] + 1, r[2])) > base);
        prop_assert!(block_flops(ci, co, d, (r[0], r[1], r[2] + 1)) > base);
    }
}

#[test]
fn kernel_layout_round_trips() {
    let k = kernel_chain(3, 2, 3, [2, 2, 2], 9).reconstruct();
    let kernel = order3_to_kernel(&k, 1, 0).unwrap();
    assert_eq!(kernel.weights.dims(), &[3, 2, 3, 3]);
    assert_eq!(kernel_to_order3(&kernel), k);
    assert!(order3_to_kernel(&DenseTensor::zeros(vec![2, 2, 5]).unwrap(), 1, 0).is_err());
    assert!(ConvKernel::new(DenseTensor::zeros(vec![2, 2, 3, 3]).unwrap(), 0, 0).is_err());
}

#[test]
fn unbounded_search_returns_the_whole_sorted_grid() {
    let k = order3_to_kernel(&kernel_chain(4, 3, 3, [2, 2, 2], 11).reconstruct(), 1, 1).unwrap();
    let grid = RankGrid { r1: vec![1, 2], r2: vec![1, 2], r3: vec![1, 2] };
    let cfg = GridSearchConfig { fit: FitConfig { max_iters: 40, ..FitConfig::default() }, ..GridSearchConfig::default() };
    let res = rank_grid_search(&k, &grid, &cfg).unwrap();
    assert_eq!(res.entries.len(), 8);
    assert_eq!((res.over_budget, res.above_threshold), (0, 0));
    assert!(res.entries.windows(2).all(|w| w[0].rel_err <= w[1].rel_err));
    for e in &res.entries {
        assert_eq!(e.flops, block_flops(3, 4, 3, (e.r1, e.r2, e.r3)));
    }

    let tight = GridSearchConfig { flops_budget: block_flops(3, 4, 3, (1, 1, 1)) as f64, ..cfg.clone() };
    let res = rank_grid_search(&k, &grid, &tight).unwrap();
    assert_eq!((res.entries.len(), res.over_budget), (1, 7));
    assert!(rank_grid_search(&k, &grid, &GridSearchConfig { flops_budget: 0.0, ..cfg }).is_err());
}

#[test]
fn planted_low_rank_kernel_is_recovered() {
    let truth = kernel_chain(8, 6, 3, [4, 4, 4], 21);
    let k = order3_to_kernel(&truth.reconstruct(), 1, 1).unwrap();
    let grid = RankGrid { r1: vec![4], r2: vec![4], r3: vec![4] };
    let cfg = GridSearchConfig { restarts: 4, ..GridSearchConfig::default() };
    let res = rank_grid_search(&k, &grid, &cfg).unwrap();
    assert!(res.entries[0].rel_err <= 1e-6, "{}", res.entries[0].rel_err);
}

mod common;

use proptest::prelude::*;

use common::*;
use tucker_stream::isvd::IsvdState;
use tucker_stream::{DenseTensor, TuckerError};

fn dims_strategy(max_modes: usize, max_extent: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_extent, 1..=max_modes)
}

fn case(r: Result<(), String>) -> Result<(), TestCaseError> {
    r.map_err(TestCaseError::fail)
}

proptest! {
    #[test]
    fn fold_unfold_round_trips(dims in dims_strategy(4, 6), seed in any::<u64>()) {
        case(check_fold_round_trip(&gaussian_tensor(&dims, seed)))?;
    }

    #[test]
    fn ttm_matches_naive_product(dims in dims_strategy(4, 5), seed in any::<u64>()) {
        case(check_ttm(&gaussian_tensor(&dims, seed), seed))?;
    }

    #[test]
    fn ttm_along_different_modes_commutes(dims in dims_strategy(4, 6), seed in any::<u64>()) {
        case(check_commutativity(&gaussian_tensor(&dims, seed), seed))?;
    }

    #[test]
    fn energy_adds_over_slices(dims in dims_strategy(4, 6), seed in any::<u64>()) {
        case(check_slice_additivity(&gaussian_tensor(&dims, seed)))?;
    }

    #[test]
    fn padding_and_concatenation_preserve_energy(
        dims in dims_strategy(3, 5),
        extra in 0usize..4,
        seed in any::<u64>(),
    ) {
        let t = gaussian_tensor(&dims, seed);
        let k = (seed % dims.len() as u64) as usize;
        let padded = t.pad_with_zeros(k, extra).unwrap();
        prop_assert_eq!(padded.dims()[k], dims[k] + extra);
        prop_assert_eq!(padded.squared_norm(), t.squared_norm());
        let cat = DenseTensor::concat_along_mode(k, &t, &t).unwrap();
        let want = 2.0 * t.squared_norm();
        prop_assert!((cat.squared_norm() - want).abs() <= 1e-12 * want.max(1e-300));
    }

    #[test]
    fn truncation_rank_is_monotone(
        mut values in prop::collection::vec(0.0f64..10.0, 1..12),
        d1 in 0.0f64..5.0,
        d2 in 0.0f64..5.0,
    ) {
        values.sort_by(|a, b| b.total_cmp(a));
        case(check_truncation_monotone(&values, d1, d2))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_route_matches_direct_svd(
        dims in prop::collection::vec(2usize..=7, 3),
        tau in prop::sample::select(vec![0.05, 0.2, 0.5]),
        seed in any::<u64>(),
    ) {
        let t = gaussian_tensor(&dims, seed);
        let delta = tau * t.frobenius_norm() / 3f64.sqrt();
        case(check_gram_vs_svd(&t, delta))?;
    }

    #[test]
    fn batch_meets_bound(
        dims in prop::collection::vec(2usize..=8, 2..=4),
        tau in prop::sample::select(vec![1e-1, 1e-2, 1e-3, 1e-8]),
        eta in prop::sample::select(vec![0.0, 1e-3, 1e-1, 1.0]),
        seed in any::<u64>(),
    ) {
        let ranks: Vec<usize> = dims.iter().map(|&n| 1 + (seed as usize + n) % n).collect();
        let x = low_rank_tensor(&dims, &ranks, eta, seed);
        case(check_sthosvd(&x, tau))?;
    }

    #[test]
    fn isvd_ledger_matches_materialized_error(
        m in 1usize..=30,
        n in 1usize..=16,
        rel_tol in prop::sample::select(vec![0.0, 1e-3, 1e-2, 0.1, 0.5]),
        seed in any::<u64>(),
    ) {
        case(check_isvd_identity(m, n, rel_tol, seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn streaming_meets_bound_and_keeps_coupling(
        dims in prop::collection::vec(2usize..=9, 2),
        slices in 4usize..=25,
        init in 1usize..=3,
        tau in prop::sample::select(vec![1e-1, 1e-2, 1e-3]),
        eta in prop::sample::select(vec![1e-4, 1e-2, 0.3]),
        seed in any::<u64>(),
    ) {
        let mut full = dims.clone();
        full.push(slices);
        let ranks = [1 + seed as usize % 3, 1 + (seed >> 8) as usize % 3, 2];
        let ranks: Vec<usize> = ranks.iter().zip(&full).map(|(&r, &n)| r.min(n)).collect();
        let x = low_rank_tensor(&full, &ranks, eta, seed);
        case(check_stream(&x, init, tau))?;
    }
}

#[test]
fn orthogonality_survives_a_thousand_inserts() {
    let n = 64;
    let rows = gaussian_matrix(1000, n, 7);
    let mut s = IsvdState::empty(n);
    for i in 0..1000 {
        let row = rows.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        s.add_row(&row, 0.3 * norm).unwrap();
    }
    assert!(s.right().orthonormality_error() <= 1e-6);
    assert!(s.left().orthonormality_error() <= 1e-6);
}

#[test]
fn exact_rank_batch_is_exact() {
    let x = low_rank_tensor(&[5, 6, 7], &[1, 1, 1], 0.0, 3);
    let out = tucker_stream::sthosvd(&x, 0.5, None).unwrap();
    assert_eq!(out.model.ranks(), vec![1, 1, 1]);
    assert!(out.model.relative_error(&x).unwrap() <= 1e-12);
    let x = gaussian_tensor(&[6, 7, 8], 4);
    let out = tucker_stream::sthosvd(&x, 1e-8, None).unwrap();
    assert!(out.model.relative_error(&x).unwrap() <= 1e-8);
}

#[test]
fn relative_error_rejects_shape_mismatch() {
    let x = gaussian_tensor(&[3, 3, 3], 1);
    let model = tucker_stream::sthosvd(&x, 0.1, None).unwrap().model;
    let y = gaussian_tensor(&[3, 3, 4], 1);
    assert!(matches!(model.relative_error(&y), Err(TuckerError::ShapeMismatch(_))));
}

//! Oracles and generators shared by the integration suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tucker_stream::isvd::error_identity_trace;
use tucker_stream::linalg::{sym_eig_desc, thin_svd, truncation_rank};
use tucker_stream::streaming::COUPLING_TOL;
use tucker_stream::{sthosvd, DenseTensor, Matrix, StreamingState};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_tensor(dims: &[usize], seed: u64) -> DenseTensor {
    let mut r = rng(seed);
    let len = dims.iter().product();
    DenseTensor::from_vec(dims, (0..len).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_col_major(rows, cols, (0..rows * cols).map(|_| r.sample(StandardNormal)).collect()).unwrap()
}

/// Gaussian Tucker tensor with the given ranks plus relative noise `eta`.
pub fn low_rank_tensor(dims: &[usize], ranks: &[usize], eta: f64, seed: u64) -> DenseTensor {
    let mut t = gaussian_tensor(ranks, seed);
    for (k, (&n, &r)) in dims.iter().zip(ranks).enumerate() {
        t = t.ttm(k, &gaussian_matrix(n, r, seed.wrapping_add(k as u64 + 1)), false).unwrap();
    }
    if eta > 0.0 {
        let noise = gaussian_tensor(dims, seed ^ 0x5eed);
        let scale = eta * t.frobenius_norm() / noise.frobenius_norm();
        for (x, n) in t.as_mut_slice().iter_mut().zip(noise.as_slice()) {
            *x += scale * n;
        }
    }
    t
}

/// Leading `count` last-mode slices stacked back into a tensor.
pub fn leading_slices(x: &DenseTensor, count: usize) -> DenseTensor {
    let slices: Vec<_> = (0..count).map(|i| x.last_mode_slice(i).unwrap()).collect();
    DenseTensor::stack(&slices).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a
    } else {
        a / b
    }
}

/// Naive `A * unfold(t, k)` through explicit index arithmetic.
pub fn naive_ttm(t: &DenseTensor, k: usize, a: &Matrix) -> DenseTensor {
    let mut dims = t.dims().to_vec();
    dims[k] = a.rows();
    DenseTensor::from_fn(&dims, |idx| {
        let mut src = idx.to_vec();
        (0..a.cols())
            .map(|i| {
                src[k] = i;
                a.get(idx[k], i) * t.get(&src)
            })
            .sum()
    })
    .unwrap()
}

pub fn check_fold_round_trip(t: &DenseTensor) -> Check {
    for k in 0..t.ndims() {
        let m = t.unfold(k).unwrap();
        let back = DenseTensor::fold(&m, k, t.dims()).unwrap();
        if &back != t {
            return Err(format!("fold(unfold(t, {k})) differs for dims {:?}", t.dims()));
        }
        if back.unfold(k).unwrap() != m {
            return Err(format!("unfold(fold(m, {k})) differs"));
        }
    }
    Ok(())
}

pub fn check_ttm(t: &DenseTensor, seed: u64) -> Check {
    for k in 0..t.ndims() {
        let a = gaussian_matrix(3, t.dims()[k], seed + k as u64);
        let fast = t.ttm(k, &a, false).unwrap();
        let slow = naive_ttm(t, k, &a);
        let err = rel(fast.sub(&slow).unwrap().frobenius_norm(), slow.frobenius_norm());
        if err > 1e-13 {
            return Err(format!("mode-{k} product off by {err:e}"));
        }
        let at = a.transpose();
        if t.ttm(k, &at, true).unwrap() != fast {
            return Err(format!("transposed mode-{k} product differs"));
        }
        if t.ttm(k, &Matrix::identity(t.dims()[k]), false).unwrap() != *t {
            return Err(format!("identity mode-{k} product is not exact"));
        }
    }
    Ok(())
}

pub fn check_commutativity(t: &DenseTensor, seed: u64) -> Check {
    let d = t.ndims();
    for k1 in 0..d {
        for k2 in k1 + 1..d {
            let a = gaussian_matrix(4, t.dims()[k1], seed + 1);
            let b = gaussian_matrix(2, t.dims()[k2], seed + 2);
            let ab = t.ttm(k1, &a, false).unwrap().ttm(k2, &b, false).unwrap();
            let ba = t.ttm(k2, &b, false).unwrap().ttm(k1, &a, false).unwrap();
            let err = rel(ab.sub(&ba).unwrap().frobenius_norm(), ab.frobenius_norm());
            if err > 1e-12 {
                return Err(format!("modes {k1},{k2} do not commute: {err:e}"));
            }
        }
    }
    Ok(())
}

pub fn check_slice_additivity(t: &DenseTensor) -> Check {
    let total = t.squared_norm();
    let parts: f64 = (0..t.dims()[t.ndims() - 1]).map(|i| t.last_mode_slice(i).unwrap().squared_norm()).sum();
    if (total - parts).abs() > 1e-12 * total.max(1e-300) {
        return Err(format!("slice energies {parts} vs total {total}"));
    }
    Ok(())
}

/// `‖(I - P Pᵀ) Q‖_F`, an upper bound on the sine of the largest
/// principal angle between the column spaces.
pub fn subspace_gap(p: &Matrix, q: &Matrix) -> f64 {
    let proj = p.matmul(&p.matmul_t(true, q, false).unwrap()).unwrap();
    let mut s = 0.0;
    for (a, b) in q.as_slice().iter().zip(proj.as_slice()) {
        s += (a - b) * (a - b);
    }
    s.sqrt()
}

/// Compares the Gram-eigenvector subspaces against a direct SVD of each
/// unfolding, using the same truncation budget.
pub fn check_gram_vs_svd(t: &DenseTensor, delta: f64) -> Check {
    for k in 0..t.ndims() {
        let m = t.unfold(k).unwrap();
        let eig = sym_eig_desc(&tucker_stream::linalg::gram(&m)).unwrap();
        let r_gram = truncation_rank(&eig.values, delta).unwrap();
        let svd = thin_svd(&m.transpose());
        let mut energies: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
        energies.resize(m.rows(), 0.0);
        let r_svd = truncation_rank(&energies, delta).unwrap();
        if r_gram != r_svd {
            return Err(format!("mode {k}: gram rank {r_gram}, svd rank {r_svd}"));
        }
        let r = r_gram.min(svd.singular_values.len());
        // The right factor of the SVD of the transposed unfolding spans the
        // column space of the unfolding.
        let gap = subspace_gap(&eig.vectors.leading_cols(r), &svd.right.leading_cols(r));
        if gap > 1e-6 {
            return Err(format!("mode {k}: subspace gap {gap:e}"));
        }
    }
    Ok(())
}

pub fn check_truncation_monotone(values: &[f64], d1: f64, d2: f64) -> Check {
    let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
    let (r_lo, r_hi) = (truncation_rank(values, lo).unwrap(), truncation_rank(values, hi).unwrap());
    if r_lo < r_hi {
        return Err(format!("rank {r_lo} at delta {lo} below rank {r_hi} at delta {hi}"));
    }
    Ok(())
}

/// Batch bound, partial-core bounds and rank monotonicity in `tau`.
pub fn check_sthosvd(x: &DenseTensor, tau: f64) -> Check {
    let out = sthosvd(x, tau, None).map_err(|e| e.to_string())?;
    let model = &out.model;
    let err = model.relative_error(x).unwrap();
    if err > tau {
        return Err(format!("relative error {err:e} exceeds tau {tau}"));
    }
    let delta = tau * x.frobenius_norm() / (x.ndims() as f64).sqrt();
    let mut prev = x.clone();
    for &k in &model.mode_order {
        let u = &model.factors[k];
        let next = prev.ttm(k, u, true).unwrap();
        let gap = prev.sub(&next.ttm(k, u, false).unwrap()).unwrap().frobenius_norm();
        if gap > delta * (1.0 + 1e-10) + 1e-300 {
            return Err(format!("partial core at mode {k} off by {gap:e} > {delta:e}"));
        }
        prev = next;
    }
    let tighter = sthosvd(x, tau / 4.0, None).unwrap().model.ranks();
    if tighter.iter().zip(model.ranks()).any(|(a, b)| *a < b) {
        return Err(format!("ranks {tighter:?} at tau/4 below {:?}", model.ranks()));
    }
    Ok(())
}

/// Streams `x` from `init` leading slices, checking after every insert the
/// materialized error bound, the ledger estimate, factor orthonormality,
/// the core coupling and rank monotonicity.
pub fn check_stream(x: &DenseTensor, init: usize, tau: f64) -> Check {
    let d = x.ndims();
    let n = x.dims()[d - 1];
    let mut state = StreamingState::init(&leading_slices(x, init), tau).map_err(|e| e.to_string())?;
    let mut ranks = state.ranks();
    for i in init..n {
        state.update(&x.last_mode_slice(i).unwrap()).map_err(|e| format!("slice {i}: {e}"))?;
        let seen = leading_slices(x, i + 1);
        let truth = state.model().reconstruct().sub(&seen).unwrap().frobenius_norm();
        let norm = seen.frobenius_norm();
        if truth > tau * norm {
            return Err(format!("slice {i}: error {:e} exceeds tau {tau}", truth / norm));
        }
        let bound = state.relative_error_bound();
        if bound < truth / norm - 1e-10 {
            return Err(format!("slice {i}: bound {bound:e} below true {:e}", truth / norm));
        }
        let coupling = state.coupling_error();
        if coupling > COUPLING_TOL {
            return Err(format!("slice {i}: coupling {coupling:e}"));
        }
        for (k, f) in state.model().factors.iter().enumerate() {
            let o = f.orthonormality_error();
            if o > 1e-6 {
                return Err(format!("slice {i}: factor {k} orthonormality {o:e}"));
            }
        }
        let now = state.ranks();
        if now[..d - 1].iter().zip(&ranks[..d - 1]).any(|(a, b)| a < b) {
            return Err(format!("slice {i}: ranks shrank from {ranks:?} to {now:?}"));
        }
        ranks = now;
    }
    Ok(())
}

/// Ledger identity on a random row stream: the materialized error
/// equals the ledger at every step.
pub fn check_isvd_identity(m: usize, n: usize, rel_tol: f64, seed: u64) -> Check {
    let mut r = rng(seed);
    // Mix a low-rank part with noise so truncation actually happens.
    let rank = r.random_range(1..=n.min(4));
    let basis = gaussian_matrix(rank, n, seed ^ 0xb45e);
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let w: Vec<f64> = (0..rank).map(|_| r.sample(StandardNormal)).collect();
            (0..n)
                .map(|j| {
                    let signal: f64 = (0..rank).map(|l| w[l] * basis.get(l, j)).sum();
                    signal + 0.05 * r.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    for (step, (lhs, rhs)) in error_identity_trace(&rows, rel_tol).unwrap().into_iter().enumerate() {
        if (lhs - rhs).abs() > 1e-9 * (1.0 + lhs) {
            return Err(format!("step {step}: materialized {lhs:e} vs ledger {rhs:e}"));
        }
    }
    Ok(())
}

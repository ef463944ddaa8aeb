//! Incremental truncated SVD under row appends.
//!
//! The state holds `A ≈ P diag(S) Qᵀ` for a matrix `A` that is never formed.
//! Each appended row is split into its component in `span(Q)` and an
//! orthogonal remainder, a small `(r+1) x (r+1)` middle matrix is
//! decomposed and truncated, and the energy thrown away is added to a
//! running ledger. In exact arithmetic that ledger equals
//! `‖A - P diag(S) Qᵀ‖_F²`, which [`error_identity_trace`] verifies by
//! materializing `A`.

use log::trace;

use crate::error::{Result, TuckerError};
use crate::linalg::{thin_svd, truncation_rank};
use crate::tensor::Matrix;

/// Orthonormality tolerance enforced on construction.
pub const ORTHO_TOL: f64 = 1e-6;

/// A residual shorter than this fraction of the row norm is not turned into
/// a new basis direction.
pub const ORTH_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct IsvdState {
    left: Matrix,
    singular_values: Vec<f64>,
    right: Matrix,
    squared_error: f64,
    reorth_every: Option<usize>,
    inserts: u64,
}

/// Outcome of one [`IsvdState::add_row`].
#[derive(Clone, Debug, PartialEq)]
pub struct AddRowReport {
    /// `‖b - Q Qᵀ b‖`.
    pub residual_norm: f64,
    /// Whether the residual was too small to extend `Q`.
    pub residual_dropped: bool,
    /// Squared error added to the ledger by this call.
    pub added_error: f64,
    pub rank: usize,
}

fn check_orthonormal(m: &Matrix) -> Result<()> {
    let err = m.orthonormality_error();
    if err > ORTHO_TOL {
        return Err(TuckerError::NotOrthonormal(err));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Modified Gram-Schmidt, two passes. Columns that collapse are left as is.
pub(crate) fn reorthonormalize(m: &mut Matrix) {
    for _ in 0..2 {
        for j in 0..m.cols() {
            let rows = m.rows();
            let (done, rest) = m.as_mut_slice().split_at_mut(j * rows);
            let cj = &mut rest[..rows];
            for qi in done.chunks_exact(rows) {
                let proj = dot(qi, cj);
                for (x, q) in cj.iter_mut().zip(qi) {
                    *x -= proj * q;
                }
            }
            let norm = dot(m.col(j), m.col(j)).sqrt();
            if norm > 0.0 {
                m.col_mut(j).iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

impl IsvdState {
    /// Wraps an existing factorization `left * diag(s) * rightᵀ` whose
    /// approximation error is `squared_error`.
    pub fn new(left: Matrix, singular_values: Vec<f64>, right: Matrix, squared_error: f64) -> Result<Self> {
        let r = singular_values.len();
        if left.cols() != r || right.cols() != r {
            return Err(TuckerError::shape(format!(
                "left is {}x{}, right is {}x{}, but {r} singular values",
                left.rows(),
                left.cols(),
                right.rows(),
                right.cols()
            )));
        }
        if singular_values.iter().any(|s| s.is_nan() || *s <= 0.0) || singular_values.windows(2).any(|w| w[1] > w[0]) {
            return Err(TuckerError::InvalidArgument("singular values must be positive and non-increasing".into()));
        }
        if squared_error.is_nan() || squared_error < 0.0 {
            return Err(TuckerError::InvalidArgument(format!("negative squared error {squared_error}")));
        }
        check_orthonormal(&left)?;
        check_orthonormal(&right)?;
        Ok(IsvdState { left, singular_values, right, squared_error, reorth_every: None, inserts: 0 })
    }

    /// Rank-0 state for rows of length `n`.
    pub fn empty(n: usize) -> Self {
        IsvdState {
            left: Matrix::zeros(0, 0),
            singular_values: Vec::new(),
            right: Matrix::zeros(n, 0),
            squared_error: 0.0,
            reorth_every: None,
            inserts: 0,
        }
    }

    /// Re-orthonormalize both bases every `k` inserts. `None` disables it.
    pub fn with_reorthogonalization(mut self, every: Option<usize>) -> Self {
        self.reorth_every = every.filter(|&k| k > 0);
        self
    }

    pub fn reorth_every(&self) -> Option<usize> {
        self.reorth_every
    }

    pub fn left(&self) -> &Matrix {
        &self.left
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn right(&self) -> &Matrix {
        &self.right
    }

    pub fn squared_error(&self) -> f64 {
        self.squared_error
    }

    pub fn inserts(&self) -> u64 {
        self.inserts
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Number of rows seen.
    pub fn rows(&self) -> usize {
        self.left.rows()
    }

    /// Row length.
    pub fn row_len(&self) -> usize {
        self.right.rows()
    }

    pub(crate) fn restore(
        left: Matrix,
        singular_values: Vec<f64>,
        right: Matrix,
        squared_error: f64,
        reorth_every: Option<usize>,
        inserts: u64,
    ) -> Result<Self> {
        let mut s = Self::new(left, singular_values, right, squared_error)?;
        s.reorth_every = reorth_every;
        s.inserts = inserts;
        Ok(s)
    }

    /// Replaces the right basis. It must keep the same number of columns,
    /// but may change its row count (used when the row space is re-indexed).
    pub fn set_right(&mut self, right: Matrix) -> Result<()> {
        if right.cols() != self.rank() {
            return Err(TuckerError::shape(format!("right basis needs {} columns, got {}", self.rank(), right.cols())));
        }
        self.right = right;
        Ok(())
    }

    /// Records an all-zero row without touching the factorization.
    pub fn append_zero_row(&mut self) {
        let (m, r) = (self.left.rows(), self.left.cols());
        self.left.resize(m + 1, r);
        self.inserts += 1;
    }

    /// Appends row `b`. The inner truncation keeps the added squared error
    /// at most `abs_tol^2`.
    pub fn add_row(&mut self, b: &[f64], abs_tol: f64) -> Result<AddRowReport> {
        let n = self.row_len();
        if b.len() != n {
            return Err(TuckerError::shape(format!("row has length {}, expected {n}", b.len())));
        }
        if abs_tol.is_nan() || abs_tol < 0.0 {
            return Err(TuckerError::InvalidArgument(format!("negative tolerance {abs_tol}")));
        }
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            self.append_zero_row();
            return Ok(AddRowReport {
                residual_norm: 0.0,
                residual_dropped: true,
                added_error: 0.0,
                rank: self.rank(),
            });
        }

        let r = self.rank();
        let q = &self.right;
        let mut p: Vec<f64> = (0..r).map(|j| dot(q.col(j), b)).collect();
        let mut e = b.to_vec();
        for (j, &pj) in p.iter().enumerate() {
            for (x, qv) in e.iter_mut().zip(q.col(j)) {
                *x -= pj * qv;
            }
        }
        // A second projection pass recovers orthogonality lost to cancellation.
        for (j, pj) in p.iter_mut().enumerate() {
            let c = dot(q.col(j), &e);
            *pj += c;
            for (x, qv) in e.iter_mut().zip(q.col(j)) {
                *x -= c * qv;
            }
        }
        let k = dot(&e, &e).sqrt();
        let dropped = k <= ORTH_EPS * b_norm || r == n;
        let extra = if dropped { 0 } else { 1 };
        let forced_error = if dropped { k * k } else { 0.0 };

        let mut middle = Matrix::zeros(r + 1, r + extra);
        for (j, &s) in self.singular_values.iter().enumerate() {
            middle.set(j, j, s);
            middle.set(r, j, p[j]);
        }
        if !dropped {
            middle.set(r, r, k);
        }

        let svd = thin_svd(&middle);
        let energies: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
        let budget = (abs_tol * abs_tol - forced_error).max(0.0).sqrt();
        let keep = if energies.is_empty() { 0 } else { truncation_rank(&energies, budget)? };
        let discarded: f64 = energies[keep..].iter().sum::<f64>() + svd.discarded_energy;

        let p_mid = svd.left.leading_cols(keep);
        let q_mid = svd.right.leading_cols(keep);

        // [Q, e/k] * Q'
        let mut right = self.right.matmul(&q_mid.row_range(0, r))?;
        if !dropped {
            for j in 0..keep {
                let w = q_mid.get(r, j) / k;
                for (x, ev) in right.col_mut(j).iter_mut().zip(&e) {
                    *x += w * ev;
                }
            }
        }

        // [[P, 0], [0, 1]] * P', in place: the left factor is the one piece
        // that grows with the number of rows.
        self.left.append_row_times(&p_mid)?;
        self.right = right;
        self.singular_values = svd.singular_values[..keep].to_vec();
        let added_error = discarded + forced_error;
        self.squared_error += added_error;
        self.inserts += 1;
        if let Some(every) = self.reorth_every {
            if self.inserts.is_multiple_of(every as u64) {
                reorthonormalize(&mut self.left);
                reorthonormalize(&mut self.right);
            }
        }
        trace!("isvd insert {}: rank {keep}, residual {k:e}, added error {added_error:e}", self.inserts);
        Ok(AddRowReport { residual_norm: k, residual_dropped: dropped, added_error, rank: keep })
    }

    /// `left * diag(s) * rightᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut ls = self.left.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            ls.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        ls.matmul_t(false, &self.right, true).expect("factor shapes agree")
    }
}

/// Streams `rows` into an empty state, each with tolerance
/// `rel_tol * ‖row‖`, and after every insert returns
/// `(‖A - reconstruct‖², ledger)` with `A` materialized from the rows seen
/// so far.
pub fn error_identity_trace(rows: &[Vec<f64>], rel_tol: f64) -> Result<Vec<(f64, f64)>> {
    let n = rows.first().map_or(0, Vec::len);
    let mut state = IsvdState::empty(n);
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let norm = dot(row, row).sqrt();
        state.add_row(row, rel_tol * norm)?;
        let approx = state.reconstruct();
        let mut lhs = 0.0;
        for (t, seen) in rows[..=i].iter().enumerate() {
            for (j, &v) in seen.iter().enumerate() {
                let d = v - approx.get(t, j);
                lhs += d * d;
            }
        }
        out.push((lhs, state.squared_error()));
    }
    Ok(out)
}

/// Final `(lhs, rhs)` pair of [`error_identity_trace`].
pub fn error_identity_check(rows: &[Vec<f64>], rel_tol: f64) -> Result<(f64, f64)> {
    Ok(error_identity_trace(rows, rel_tol)?.last().copied().unwrap_or((0.0, 0.0)))
}

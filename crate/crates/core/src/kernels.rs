//! Dense data-parallel kernels on column-major (mode-1-fastest) buffers.
//!
//! Each kernel takes an [`Exec`] selecting rayon or plain iteration. Work is
//! always split along boundaries that depend only on the operand shapes,
//! and every output element is produced by the same sequence of floating
//! point operations under both strategies, so results are bit-identical
//! regardless of the strategy or the number of worker threads.
//!
//! Without the `parallel` feature, [`Exec::Parallel`] silently runs the
//! sequential path.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::memtrack::Buffer;

/// Execution strategy for the kernels in this module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Below this many multiply-adds a kernel never forks.
const PAR_MIN_WORK: usize = 1 << 16;

/// Column block width used when reducing Gram partial sums.
const GRAM_BLOCK_COLS: usize = 2048;
const GRAM_MAX_PARTS: usize = 16;

/// Block length for partial sums of squares.
const SUMSQ_BLOCK: usize = 1 << 14;

impl Exec {
    fn for_work(self, work: usize) -> Exec {
        if work < PAR_MIN_WORK {
            Exec::Sequential
        } else {
            self
        }
    }
}

/// Calls `f(index, chunk)` for every `chunk`-sized piece of `out`.
pub(crate) fn for_each_chunk<F>(exec: Exec, out: &mut [f64], chunk: usize, min_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if out.is_empty() || chunk == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => out.par_chunks_mut(chunk).with_min_len(min_len.max(1)).enumerate().for_each(|(i, c)| f(i, c)),
        _ => {
            let _ = min_len;
            out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c))
        }
    }
}

/// Maps `f` over `0..n` and returns the results in index order.
fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Sum of squared entries, reduced in fixed-size blocks.
pub fn sum_squares(exec: Exec, data: &[f64]) -> f64 {
    let blocks = data.len().div_ceil(SUMSQ_BLOCK);
    let partial = map_indexed(exec.for_work(data.len()), blocks, |b| {
        let lo = b * SUMSQ_BLOCK;
        let hi = (lo + SUMSQ_BLOCK).min(data.len());
        data[lo..hi].iter().map(|v| v * v).sum::<f64>()
    });
    partial.into_iter().sum()
}

/// Mode-`k` tensor-times-matrix product.
///
/// `x` has dimensions `dims`; `a` is an `m x dims[k]` column-major matrix.
/// `out` must have the length of `x` with `dims[k]` replaced by `m` and is
/// overwritten.
pub fn ttm_into(exec: Exec, dims: &[usize], x: &[f64], k: usize, a: &[f64], m: usize, out: &mut [f64]) {
    let left: usize = dims[..k].iter().product();
    let n = dims[k];
    let right: usize = dims[k + 1..].iter().product();
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(x.len(), left * n * right);
    debug_assert_eq!(out.len(), left * m * right);
    let exec = exec.for_work(left * m * n * right);

    if left == 1 {
        // Output column b is A times input column b.
        let min_len = (4096 / (m * n).max(1)).max(1);
        for_each_chunk(exec, out, m, min_len, |b, col| {
            col.fill(0.0);
            let xc = &x[b * n..(b + 1) * n];
            for (i, &xi) in xc.iter().enumerate() {
                if xi != 0.0 {
                    axpy(col, xi, &a[i * m..(i + 1) * m]);
                }
            }
        });
    } else {
        // Output block (j, b) of length `left` is sum_i A(j, i) * X(:, i, b).
        let min_len = (4096 / (left * n).max(1)).max(1);
        for_each_chunk(exec, out, left, min_len, |idx, blk| {
            blk.fill(0.0);
            let j = idx % m;
            let b = idx / m;
            for i in 0..n {
                let aji = a[j + i * m];
                if aji != 0.0 {
                    let src = &x[(i + b * n) * left..(i + b * n + 1) * left];
                    axpy(blk, aji, src);
                }
            }
        });
    }
}

fn gram_lower_accumulate(rows: usize, cols: std::ops::Range<usize>, data: &[f64], part: &mut [f64]) {
    for c in cols {
        let col = &data[c * rows..(c + 1) * rows];
        for j in 0..rows {
            let cj = col[j];
            if cj != 0.0 {
                axpy(&mut part[j * rows + j..(j + 1) * rows], cj, &col[j..]);
            }
        }
    }
}

/// `out = M Mᵀ` for a `rows x cols` column-major `M`. The lower triangle is
/// accumulated and mirrored, so `out` is exactly symmetric.
pub fn gram_into(exec: Exec, rows: usize, cols: usize, data: &[f64], out: &mut [f64]) {
    debug_assert_eq!(data.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * rows);
    out.fill(0.0);
    if rows == 0 || cols == 0 {
        return;
    }
    let parts = cols.div_ceil(GRAM_BLOCK_COLS).clamp(1, GRAM_MAX_PARTS);
    let width = cols.div_ceil(parts);
    let ranges: Vec<_> = (0..parts).map(|p| (p * width).min(cols)..((p + 1) * width).min(cols)).collect();
    let exec = exec.for_work(rows * rows * cols / 2);

    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel if parts > 1 => {
            let partials: Vec<Buffer> = ranges
                .into_par_iter()
                .map(|r| {
                    let mut part = vec![0.0; rows * rows];
                    gram_lower_accumulate(rows, r, data, &mut part);
                    part
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(Buffer::new)
                .collect();
            for part in &partials {
                for (o, p) in out.iter_mut().zip(part.iter()) {
                    *o += p;
                }
            }
        }
        _ => {
            let mut part = Buffer::zeros(rows * rows);
            for r in ranges {
                part.fill(0.0);
                gram_lower_accumulate(rows, r, data, &mut part);
                for (o, p) in out.iter_mut().zip(part.iter()) {
                    *o += p;
                }
            }
        }
    }
    for j in 0..rows {
        for i in j + 1..rows {
            out[j + i * rows] = out[i + j * rows];
        }
    }
}

/// General product `out = op(A) op(B)` on column-major operands, where
/// `op(A)` is `m x p` and `op(B)` is `p x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm_into(
    exec: Exec,
    a: &[f64],
    a_rows: usize,
    transpose_a: bool,
    b: &[f64],
    b_rows: usize,
    transpose_b: bool,
    out: &mut [f64],
    m: usize,
    n: usize,
    p: usize,
) {
    debug_assert_eq!(out.len(), m * n);
    let exec = exec.for_work(m * n * p);
    let b_at = |l: usize, j: usize| if transpose_b { b[j + l * b_rows] } else { b[l + j * b_rows] };
    let min_len = (4096 / (m * p).max(1)).max(1);
    if transpose_a {
        // op(A)(i, l) = A(l, i): dot products against contiguous columns of A.
        for_each_chunk(exec, out, m, min_len, |j, col| {
            for (i, o) in col.iter_mut().enumerate() {
                let ai = &a[i * a_rows..i * a_rows + p];
                let mut s = 0.0;
                for (l, &av) in ai.iter().enumerate() {
                    s += av * b_at(l, j);
                }
                *o = s;
            }
        });
    } else {
        for_each_chunk(exec, out, m, min_len, |j, col| {
            col.fill(0.0);
            for l in 0..p {
                let blj = b_at(l, j);
                if blj != 0.0 {
                    axpy(col, blj, &a[l * a_rows..l * a_rows + m]);
                }
            }
        });
    }
}

//! Symmetric eigendecomposition, Gram matrices, the trailing-energy rank
//! rule and a small dense SVD.

use log::debug;

use crate::error::{Result, TuckerError};
use crate::kernels::{self, Exec};
use crate::tensor::Matrix;

/// Relative level below which negative eigenvalues are counted as noise.
pub const EIG_CLAMP_EPS: f64 = 1e-12;

/// Largest order handled by cyclic Jacobi; bigger matrices go through
/// Householder tridiagonalization and implicit QL.
pub const JACOBI_MAX_DIM: usize = 64;

const JACOBI_OFF_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 30;

/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_ZERO_REL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Non-increasing, negatives clamped to zero.
    pub values: Vec<f64>,
    /// Column `j` pairs with `values[j]`.
    pub vectors: Matrix,
    /// Sum of eigenvalues before clamping.
    pub raw_sum: f64,
    /// How many eigenvalues fell below `-EIG_CLAMP_EPS * max`.
    pub noise_clamped: usize,
}

#[derive(Clone, Debug)]
pub struct SmallSvd {
    pub left: Matrix,
    pub singular_values: Vec<f64>,
    pub right: Matrix,
    /// Sum of squares of the singular values that were dropped.
    pub discarded_energy: f64,
}

impl SmallSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `left * diag(s) * rightᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut ls = self.left.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            ls.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        ls.matmul_t(false, &self.right, true).expect("consistent factor shapes")
    }
}

/// `m mᵀ`, exactly symmetric.
pub fn gram(m: &Matrix) -> Matrix {
    gram_with(Exec::default(), m)
}

pub fn gram_with(exec: Exec, m: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(m.rows(), m.rows());
    kernels::gram_into(exec, m.rows(), m.cols(), m.as_slice(), g.as_mut_slice());
    g
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in
/// non-increasing order. Each eigenvector is signed so that its
/// largest-magnitude entry (first one on ties) is positive.
pub fn sym_eig_desc(g: &Matrix) -> Result<EigenResult> {
    let n = g.rows();
    if g.cols() != n {
        return Err(TuckerError::NotSquare { rows: n, cols: g.cols() });
    }
    let scale = g.frobenius_norm();
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in j + 1..n {
            asym = asym.max((g.get(i, j) - g.get(j, i)).abs());
        }
    }
    if asym > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(TuckerError::InvalidArgument(format!("matrix is not symmetric (max asymmetry {asym:e})")));
    }
    let (values, vectors) = if n <= JACOBI_MAX_DIM { jacobi_eig(g) } else { tridiagonal_ql_eig(g) };
    Ok(finish_eigen(values, vectors))
}

fn finish_eigen(values: Vec<f64>, vectors: Vec<f64>) -> EigenResult {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let raw_sum: f64 = values.iter().sum();
    let lambda_max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut noise_clamped = 0;
    let mut sorted = Vec::with_capacity(n);
    let mut vecs = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = values[src];
        if v < 0.0 {
            if v < -EIG_CLAMP_EPS * lambda_max {
                noise_clamped += 1;
            }
            v = 0.0;
        }
        sorted.push(v);
        let col = &vectors[src * n..(src + 1) * n];
        let mut pivot = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (o, x) in vecs.col_mut(dst).iter_mut().zip(col) {
            *o = sign * x;
        }
    }
    if noise_clamped > 0 {
        debug!("clamped {noise_clamped} significantly negative eigenvalues");
    }
    EigenResult { values: sorted, vectors: vecs, raw_sum, noise_clamped }
}

/// Cyclic Jacobi. Returns unsorted eigenvalues and column-major eigenvectors.
pub(crate) fn jacobi_eig(g: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = g.rows();
    let mut a = g.as_slice().to_vec();
    // Symmetrize so the rotations see an exactly symmetric operand.
    for j in 0..n {
        for i in j + 1..n {
            let avg = 0.5 * (a[i + j * n] + a[j + i * n]);
            a[i + j * n] = avg;
            a[j + i * n] = avg;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i + i * n] = 1.0;
    }
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for j in 0..n {
            for i in 0..n {
                if i != j {
                    off += a[i + j * n] * a[i + j * n];
                }
            }
        }
        if off.sqrt() <= JACOBI_OFF_TOL * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p + q * n];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p + p * n];
                let aqq = a[q + q * n];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k + p * n];
                    let akq = a[k + q * n];
                    a[k + p * n] = c * akp - s * akq;
                    a[k + q * n] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p + k * n];
                    let aqk = a[q + k * n];
                    a[p + k * n] = c * apk - s * aqk;
                    a[q + k * n] = s * apk + c * aqk;
                }
                a[p + q * n] = 0.0;
                a[q + p * n] = 0.0;
                for k in 0..n {
                    let vkp = v[k + p * n];
                    let vkq = v[k + q * n];
                    v[k + p * n] = c * vkp - s * vkq;
                    v[k + q * n] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i + i * n]).collect();
    (values, v)
}

/// Householder tridiagonalization followed by the implicit QL algorithm
/// (the EISPACK `tred2`/`tql2` pair). Returns unsorted eigenvalues and
/// column-major eigenvectors.
pub(crate) fn tridiagonal_ql_eig(g: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = g.rows();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut v = g.as_slice().to_vec();
    let idx = |r: usize, c: usize| r + c * n;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    // tred2
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                for k in j + 1..i {
                    let vkj = v[idx(k, j)];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[idx(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[idx(k, i + 1)] * v[idx(k, j)];
                }
                for k in 0..=i {
                    v[idx(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;

    // tql2
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = v.split_at_mut((i + 1) * n);
                    let vi = &mut lo[i * n..];
                    let vi1 = &mut hi[..n];
                    for (a, b) in vi.iter_mut().zip(vi1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 || iter >= 100 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    (d, v)
}

/// Smallest `R` whose discarded tail `values[R..]` sums to at most
/// `delta^2`, clamped to at least 1 for non-empty input.
pub fn truncation_rank(values: &[f64], delta: f64) -> Result<usize> {
    if values.windows(2).any(|w| w[1] > w[0]) {
        return Err(TuckerError::UnsortedEigenvalues);
    }
    if delta < 0.0 || delta.is_nan() {
        return Err(TuckerError::InvalidArgument(format!("negative truncation budget {delta}")));
    }
    let budget = delta * delta;
    let mut rank = values.len();
    let mut tail = 0.0;
    while rank > 0 {
        let next = tail + values[rank - 1].max(0.0);
        if next > budget {
            break;
        }
        tail = next;
        rank -= 1;
    }
    Ok(rank.max(1).min(values.len()))
}

/// One-sided Jacobi on the columns of a `p x q` matrix with `p >= q`.
/// Returns `(w, v)` with `w = a v`, `w` having mutually orthogonal columns.
fn one_sided_jacobi(rows: usize, cols: usize, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut w = a.to_vec();
    let mut v = vec![0.0; cols * cols];
    for i in 0..cols {
        v[i + i * cols] = 1.0;
    }
    let tol = f64::EPSILON;
    for _ in 0..80 {
        let mut rotated = false;
        for i in 0..cols {
            for j in i + 1..cols {
                let (wi, wj) = (&w[i * rows..(i + 1) * rows], &w[j * rows..(j + 1) * rows]);
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for (x, y) in wi.iter().zip(wj) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, rows, i, j, c, s);
                rotate_cols(&mut v, cols, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

fn rotate_cols(m: &mut [f64], rows: usize, i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = m.split_at_mut(j * rows);
    let ci = &mut lo[i * rows..(i + 1) * rows];
    let cj = &mut hi[..rows];
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi - s * yj;
        *y = s * xi + c * yj;
    }
}

/// Full-accuracy thin SVD, `m = U diag(s) Vᵀ`, with `s` non-increasing and
/// numerically zero singular values removed.
pub fn thin_svd(m: &Matrix) -> SmallSvd {
    small_svd_truncated(m, 0.0)
}

/// Truncated SVD of a small matrix: keeps the fewest leading singular
/// triplets such that the squared singular values dropped sum to at most
/// `abs_threshold^2`. Singular values below `SVD_ZERO_REL * s_max` are
/// always dropped.
pub fn small_svd_truncated(m: &Matrix, abs_threshold: f64) -> SmallSvd {
    let (p, q) = (m.rows(), m.cols());
    let transposed = p < q;
    let work = if transposed { m.transpose() } else { m.clone() };
    let (rows, cols) = (work.rows(), work.cols());
    let (w, v) = one_sided_jacobi(rows, cols, work.as_slice());

    let norms: Vec<f64> =
        (0..cols).map(|j| w[j * rows..(j + 1) * rows].iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let s_max = order.first().map_or(0.0, |&j| norms[j]);
    let nonzero = order.iter().take_while(|&&j| norms[j] > SVD_ZERO_REL * s_max && norms[j] > 0.0).count();

    let budget = abs_threshold * abs_threshold;
    let mut keep = cols;
    let mut tail = 0.0;
    while keep > 0 {
        let next = tail + norms[order[keep - 1]].powi(2);
        if next > budget && keep <= nonzero {
            break;
        }
        tail = next;
        keep -= 1;
    }

    let mut u = Matrix::zeros(rows, keep);
    let mut vv = Matrix::zeros(cols, keep);
    let mut s = Vec::with_capacity(keep);
    for (dst, &src) in order.iter().take(keep).enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        for (o, x) in u.col_mut(dst).iter_mut().zip(&w[src * rows..(src + 1) * rows]) {
            *o = x / sigma;
        }
        vv.col_mut(dst).copy_from_slice(&v[src * cols..(src + 1) * cols]);
    }
    let (left, right) = if transposed { (vv, u) } else { (u, vv) };
    SmallSvd { left, singular_values: s, right, discarded_energy: tail }
}

//! Dense tensors and matrices in mode-1-fastest (colexicographic) layout.
//!
//! Modes are indexed from zero in this API. Element `(i_0, .., i_{d-1})` of a
//! tensor with dimensions `(N_0, .., N_{d-1})` lives at linear offset
//! `i_0 + N_0 * (i_1 + N_1 * (i_2 + ..))`. A matrix is the `d = 2` case, i.e.
//! column-major storage. Under this layout the mode-0 unfolding is the
//! buffer itself; unfoldings along other modes are materialized copies.

use std::fmt;

use crate::error::{Result, TuckerError};
use crate::kernels::{self, Exec};
use crate::memtrack::Buffer;

/// Column-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Buffer,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.5e} ", self.get(i, j))?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: Buffer::zeros(rows * cols) }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TuckerError::shape(format!(
                "buffer of length {} cannot hold a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data: Buffer::new(data) })
    }

    /// Builds a matrix from row slices; convenient for small literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(TuckerError::shape("ragged rows"));
        }
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn from_diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + j * self.rows] = v;
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data.into_vec()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `op(self) * op(other)`.
    pub fn matmul_t(&self, transpose_self: bool, other: &Matrix, transpose_other: bool) -> Result<Matrix> {
        let (m, p) = if transpose_self { (self.cols, self.rows) } else { (self.rows, self.cols) };
        let (p2, n) = if transpose_other { (other.cols, other.rows) } else { (other.rows, other.cols) };
        if p != p2 {
            return Err(TuckerError::shape(format!("cannot multiply {m}x{p} by {p2}x{n}")));
        }
        let mut out = Matrix::zeros(m, n);
        kernels::gemm_into(
            Exec::default(),
            &self.data,
            self.rows,
            transpose_self,
            &other.data,
            other.rows,
            transpose_other,
            &mut out.data,
            m,
            n,
            p,
        );
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_t(false, other, false)
    }

    pub fn frobenius_norm(&self) -> f64 {
        kernels::sum_squares(Exec::default(), &self.data).sqrt()
    }

    /// First `n` columns.
    pub fn leading_cols(&self, n: usize) -> Matrix {
        let n = n.min(self.cols);
        Matrix { rows: self.rows, cols: n, data: Buffer::new(self.data[..self.rows * n].to_vec()) }
    }

    /// Rows `lo..hi`.
    pub fn row_range(&self, lo: usize, hi: usize) -> Matrix {
        let mut out = Matrix::zeros(hi - lo, self.cols);
        for j in 0..self.cols {
            out.col_mut(j).copy_from_slice(&self.col(j)[lo..hi]);
        }
        out
    }

    /// Reshapes to `rows x cols` in place, keeping the overlapping top-left
    /// block and zeroing everything else.
    pub fn resize(&mut self, rows: usize, cols: usize) {
        let (old_rows, old_cols) = (self.rows, self.cols);
        let keep_cols = cols.min(old_cols);
        let keep_rows = rows.min(old_rows);
        let len = rows * cols;
        if rows >= old_rows {
            self.data.resize(len.max(old_rows * old_cols));
            // Destinations sit at or after their sources, so go back to front.
            for j in (0..keep_cols).rev() {
                self.data.copy_within(j * old_rows..j * old_rows + old_rows, j * rows);
                self.data[j * rows + old_rows..(j + 1) * rows].fill(0.0);
            }
        } else {
            for j in 0..keep_cols {
                self.data.copy_within(j * old_rows..j * old_rows + keep_rows, j * rows);
            }
        }
        self.data.resize(len);
        self.data[keep_cols * rows..].fill(0.0);
        self.rows = rows;
        self.cols = cols;
    }

    /// Overwrites `self` with a copy of `other`, reusing the allocation.
    pub fn assign(&mut self, other: &Matrix) {
        self.data.resize(other.data.len());
        self.data.copy_from_slice(&other.data);
        self.rows = other.rows;
        self.cols = other.cols;
    }

    /// Replaces `self` (`m x r`) with `[[self, 0], [0, 1]] * p` for an
    /// `(r + 1) x c` matrix `p`, working row by row inside the existing
    /// buffer.
    pub fn append_row_times(&mut self, p: &Matrix) -> Result<()> {
        let (m, r) = (self.rows, self.cols);
        if p.rows != r + 1 {
            return Err(TuckerError::shape(format!("cannot extend a {m}x{r} matrix by a {}x{} one", p.rows, p.cols)));
        }
        let c = p.cols;
        self.resize(m + 1, r.max(c));
        let ld = m + 1;
        let mut row = vec![0.0; r];
        for i in 0..m {
            for (l, v) in row.iter_mut().enumerate() {
                *v = self.data[i + l * ld];
            }
            for j in 0..c {
                let pj = p.col(j);
                let mut s = 0.0;
                for (&a, &b) in row.iter().zip(pj) {
                    s += a * b;
                }
                self.data[i + j * ld] = s;
            }
        }
        for j in 0..c {
            self.data[m + j * ld] = p.get(r, j);
        }
        self.resize(m + 1, c);
        Ok(())
    }

    /// `self(0..rows, :)ᵀ * other(0..rows, :)` without copying the row
    /// blocks out.
    pub fn leading_rows_t_matmul(&self, rows: usize, other: &Matrix) -> Result<Matrix> {
        if rows > self.rows || rows > other.rows {
            return Err(TuckerError::shape(format!(
                "{rows} leading rows requested from {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        kernels::gemm_into(
            Exec::default(),
            &self.data,
            self.rows,
            true,
            &other.data,
            other.rows,
            false,
            &mut out.data,
            self.cols,
            other.cols,
            rows,
        );
        Ok(out)
    }

    /// `[self other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(TuckerError::shape("hcat needs equal row counts"));
        }
        let mut v = Vec::with_capacity(self.data.len() + other.data.len());
        v.extend_from_slice(&self.data);
        v.extend_from_slice(&other.data);
        Matrix::from_col_major(self.rows, self.cols + other.cols, v)
    }

    /// `max |selfᵀ self - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.cols {
            for b in a..self.cols {
                let dot: f64 = self.col(a).iter().zip(self.col(b)).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Dense d-way array of `f64` in mode-1-fastest layout.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Buffer,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor").field("dims", &self.dims).field("norm", &self.frobenius_norm()).finish()
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(TuckerError::shape("a tensor needs at least one mode"));
    }
    Ok(())
}

impl DenseTensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let len = dims.iter().product();
        Ok(DenseTensor { dims: dims.to_vec(), data: Buffer::zeros(len) })
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(TuckerError::shape(format!("buffer of length {} does not match dims {:?}", data.len(), dims)));
        }
        Ok(DenseTensor { dims: dims.to_vec(), data: Buffer::new(data) })
    }

    /// Fills the tensor by evaluating `f` at every multi-index, in layout order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        let mut idx = vec![0usize; dims.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            for (i, n) in idx.iter_mut().zip(dims) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data.into_vec()
    }

    /// The data buffer in layout order. For a (d-1)-way slice this is the
    /// row it contributes to the mode-d unfolding of the stacked tensor.
    pub fn vectorize(&self) -> &[f64] {
        &self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut lin = 0;
        let mut stride = 1;
        for (i, n) in idx.iter().zip(&self.dims) {
            debug_assert!(i < n);
            lin += i * stride;
            stride *= n;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let lin = self.linear_index(idx);
        self.data[lin] = v;
    }

    /// Same data viewed under new dimensions with the same element count.
    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let len: usize = dims.iter().product();
        check_dims(dims)?;
        if len != self.data.len() {
            return Err(TuckerError::shape(format!("cannot reshape {:?} to {:?}", self.dims, dims)));
        }
        Ok(DenseTensor { dims: dims.to_vec(), data: self.data })
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.dims.len() {
            return Err(TuckerError::ModeOutOfRange { mode: k, ndims: self.dims.len() });
        }
        Ok(())
    }

    fn split_at_mode(dims: &[usize], k: usize) -> (usize, usize, usize) {
        let left = dims[..k].iter().product();
        let right = dims[k + 1..].iter().product();
        (left, dims[k], right)
    }

    /// Mode-`k` unfolding: an `N_k x prod(N_l, l != k)` matrix whose column
    /// index enumerates the remaining modes with the lowest mode fastest.
    pub fn unfold(&self, k: usize) -> Result<Matrix> {
        self.check_mode(k)?;
        let (left, n, right) = Self::split_at_mode(&self.dims, k);
        if k == 0 {
            return Matrix::from_col_major(n, right, self.data.to_vec());
        }
        let mut m = Matrix::zeros(n, left * right);
        let out = m.as_mut_slice();
        for b in 0..right {
            for i in 0..n {
                let src = &self.data[(i + b * n) * left..(i + b * n + 1) * left];
                for (a, &v) in src.iter().enumerate() {
                    out[i + (a + b * left) * n] = v;
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`unfold`](Self::unfold).
    pub fn fold(m: &Matrix, k: usize, dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        if k >= dims.len() {
            return Err(TuckerError::ModeOutOfRange { mode: k, ndims: dims.len() });
        }
        let (left, n, right) = Self::split_at_mode(dims, k);
        if m.rows() != n || m.cols() != left * right {
            return Err(TuckerError::shape(format!(
                "{}x{} matrix is not a mode-{k} unfolding of {:?}",
                m.rows(),
                m.cols(),
                dims
            )));
        }
        if k == 0 {
            return Self::from_vec(dims, m.as_slice().to_vec());
        }
        let mut t = Self::zeros(dims)?;
        let src = m.as_slice();
        for b in 0..right {
            for i in 0..n {
                let dst = &mut t.data[(i + b * n) * left..(i + b * n + 1) * left];
                for (a, v) in dst.iter_mut().enumerate() {
                    *v = src[i + (a + b * left) * n];
                }
            }
        }
        Ok(t)
    }

    /// Mode-`k` product with `op(a)`, where `op(a)` is `a` or `aᵀ`.
    pub fn ttm(&self, k: usize, a: &Matrix, transpose_a: bool) -> Result<Self> {
        self.ttm_with(Exec::default(), k, a, transpose_a)
    }

    pub fn ttm_with(&self, exec: Exec, k: usize, a: &Matrix, transpose_a: bool) -> Result<Self> {
        self.check_mode(k)?;
        let (m, inner) = if transpose_a { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
        if inner != self.dims[k] {
            return Err(TuckerError::shape(format!(
                "mode-{k} product needs a matrix with {} columns, got {m}x{inner}",
                self.dims[k]
            )));
        }
        let op_a = if transpose_a { a.transpose() } else { a.clone() };
        let mut dims = self.dims.clone();
        dims[k] = m;
        let mut out = Self::zeros(&dims)?;
        kernels::ttm_into(exec, &self.dims, &self.data, k, op_a.as_slice(), m, &mut out.data);
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        kernels::sum_squares(Exec::default(), &self.data)
    }

    /// Appends `extra` zero hyperslices along mode `k`.
    pub fn pad_with_zeros(&self, k: usize, extra: usize) -> Result<Self> {
        self.check_mode(k)?;
        let mut dims = self.dims.clone();
        dims[k] = extra;
        let zeros = Self::zeros(&dims)?;
        Self::concat_along_mode(k, self, &zeros)
    }

    /// Stacks `a` then `b` along mode `k`.
    pub fn concat_along_mode(k: usize, a: &Self, b: &Self) -> Result<Self> {
        a.check_mode(k)?;
        if a.ndims() != b.ndims() || a.dims.iter().zip(&b.dims).enumerate().any(|(l, (x, y))| l != k && x != y) {
            return Err(TuckerError::shape(format!("cannot concatenate {:?} and {:?} along mode {k}", a.dims, b.dims)));
        }
        let (left, na, right) = Self::split_at_mode(&a.dims, k);
        let nb = b.dims[k];
        let mut dims = a.dims.clone();
        dims[k] = na + nb;
        let mut out = Self::zeros(&dims)?;
        let (sa, sb) = (left * na, left * nb);
        for r in 0..right {
            let dst = &mut out.data[r * (sa + sb)..(r + 1) * (sa + sb)];
            dst[..sa].copy_from_slice(&a.data[r * sa..(r + 1) * sa]);
            dst[sa..].copy_from_slice(&b.data[r * sb..(r + 1) * sb]);
        }
        Ok(out)
    }

    /// Hyperslice `i` along the last mode as a (d-1)-way tensor. A 1-way
    /// tensor yields a single-element 1-way tensor.
    pub fn last_mode_slice(&self, i: usize) -> Result<Self> {
        let d = self.ndims();
        let last = self.dims[d - 1];
        if i >= last {
            return Err(TuckerError::InvalidArgument(format!("slice {i} out of range 0..{last}")));
        }
        let slice_dims: Vec<usize> = if d == 1 { vec![1] } else { self.dims[..d - 1].to_vec() };
        let len: usize = self.dims[..d - 1].iter().product();
        Self::from_vec(&slice_dims, self.data[i * len..(i + 1) * len].to_vec())
    }

    /// Stacks equally shaped slices along a new trailing mode.
    pub fn stack(slices: &[Self]) -> Result<Self> {
        let first = slices.first().ok_or_else(|| TuckerError::InvalidArgument("cannot stack zero slices".into()))?;
        let mut dims = first.dims.clone();
        if slices.iter().any(|s| s.dims != dims) {
            return Err(TuckerError::shape("slices to stack must share dimensions"));
        }
        let len = first.len();
        dims.push(slices.len());
        let mut out = Self::zeros(&dims)?;
        for (i, s) in slices.iter().enumerate() {
            out.data[i * len..(i + 1) * len].copy_from_slice(&s.data);
        }
        Ok(out)
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(TuckerError::shape(format!("cannot subtract {:?} from {:?}", other.dims, self.dims)));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(other.data.iter()) {
            *o -= v;
        }
        Ok(out)
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.dims != other.dims {
            return Err(TuckerError::shape(format!("cannot add {:?} to {:?}", other.dims, self.dims)));
        }
        for (o, v) in self.data.iter_mut().zip(other.data.iter()) {
            *o += v;
        }
        Ok(())
    }
}

//! Streaming ST-HOSVD: absorbs a tensor one last-mode slice at a time.
//!
//! The state keeps a Tucker model of everything seen so far together with
//! an incremental SVD of the core's last-mode unfolding, `C_(d) = S Vᵀ`.
//! For every new slice `Y` each leading mode is checked against its
//! current basis. If the part of `Y` outside the basis exceeds the per-slice
//! budget the basis is extended with the dominant directions of that
//! remainder and the core is zero padded to match. The projected slice is
//! then appended as a row of the last-mode matrix through the incremental
//! SVD, and the core is rotated into the new last-mode basis.

use std::time::Instant;

use log::{debug, warn};

use crate::error::{Result, TuckerError};
use crate::isvd::{reorthonormalize, IsvdState};
use crate::linalg::{gram, sym_eig_desc, thin_svd, truncation_rank};
use crate::memtrack;
use crate::sthosvd::{check_tau, sthosvd, validate_mode_order, TuckerModel};
use crate::tensor::{DenseTensor, Matrix};

/// Largest tolerated relative gap between the core and `V x_d diag(S)`.
pub const COUPLING_TOL: f64 = 1e-8;

/// One record per absorbed slice.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    /// 1-based count of slices absorbed since initialization.
    pub step: u64,
    /// Last-mode extent after this slice.
    pub n_d: usize,
    pub ranks: Vec<usize>,
    /// Peak tracked bytes allocated during the update.
    pub peak_bytes: usize,
    pub wall_ms: f64,
    pub slice_norm: f64,
    /// Norm of the fully projected slice handed to the incremental SVD.
    pub projected_norm: f64,
    /// `‖Y - Y x_k U_k U_kᵀ‖` per leading mode, in processing order.
    pub residual_norms: Vec<f64>,
    pub rel_error_estimate: f64,
}

#[derive(Clone, Debug)]
pub struct StreamingState {
    model: TuckerModel,
    isvd: IsvdState,
    energy: f64,
    nonstreaming_sq_error: f64,
    error_bound: f64,
    steps: u64,
    metrics: Vec<StepMetrics>,
}

/// Everything needed to rebuild a [`StreamingState`].
#[derive(Clone, Debug)]
pub struct StreamingParts {
    pub model: TuckerModel,
    pub isvd: IsvdState,
    pub energy: f64,
    pub nonstreaming_sq_error: f64,
    /// Running triangle-inequality bound on `‖X - reconstruct‖`.
    pub error_bound: f64,
    pub steps: u64,
}

fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Rows of `C_(d)` are mutually orthogonal after a last-mode truncation, so
/// their norms are the singular values. Returns `None` if that factorization
/// is not clean enough to seed the incremental SVD.
fn split_by_row_norms(cd: &Matrix) -> Option<(Vec<f64>, Matrix)> {
    let (r, n) = (cd.rows(), cd.cols());
    let s: Vec<f64> = (0..r).map(|i| cd.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    if s.iter().any(|&v| v.is_nan() || v <= 1e-14 * smax) || s.windows(2).any(|w| w[1] > w[0]) {
        return None;
    }
    let mut v = Matrix::zeros(n, r);
    for (j, &sj) in s.iter().enumerate() {
        for (i, o) in v.col_mut(j).iter_mut().enumerate() {
            *o = cd.get(j, i) / sj;
        }
    }
    (v.orthonormality_error() <= 1e-8).then_some((s, v))
}

impl StreamingState {
    /// Batch compression of the initial block followed by the split
    /// `C_(d) = S Vᵀ`. Modes are processed in natural order.
    pub fn init(x_init: &DenseTensor, tau: f64) -> Result<Self> {
        let order: Vec<usize> = (0..x_init.ndims()).collect();
        Self::init_with_order(x_init, tau, &order)
    }

    /// Like [`init`](Self::init) with an explicit mode order whose last
    /// entry must be the streaming (last) mode.
    pub fn init_with_order(x_init: &DenseTensor, tau: f64, order: &[usize]) -> Result<Self> {
        check_tau(tau)?;
        let d = x_init.ndims();
        validate_mode_order(order, d)?;
        if order[d - 1] != d - 1 {
            return Err(TuckerError::InvalidArgument(format!(
                "the streaming mode {} must be processed last, got order {order:?}",
                d - 1
            )));
        }
        let energy = x_init.squared_norm();
        if energy == 0.0 {
            return Err(TuckerError::ZeroNorm);
        }
        let out = sthosvd(x_init, tau, Some(order))?;
        let initial_error = out.squared_error();
        let mut model = out.model;

        let cd = model.core.unfold(d - 1)?;
        let (s, v, extra_error) = match split_by_row_norms(&cd) {
            Some((s, v)) => (s, v, 0.0),
            None => {
                // Fall back to an explicit SVD and rotate the last factor.
                debug!("last-mode core rows not cleanly orthogonal; rotating");
                let svd = thin_svd(&cd.transpose());
                let rot = svd.right;
                model.factors[d - 1] = model.factors[d - 1].matmul(&rot)?;
                model.core = model.core.ttm(d - 1, &rot, true)?;
                (svd.singular_values, svd.left, svd.discarded_energy)
            }
        };
        let isvd = IsvdState::new(model.factors[d - 1].clone(), s, v, initial_error + extra_error)?;
        let state = StreamingState {
            model,
            isvd,
            energy,
            nonstreaming_sq_error: 0.0,
            error_bound: (initial_error + extra_error).sqrt(),
            steps: 0,
            metrics: Vec::new(),
        };
        let gap = state.coupling_error();
        if gap > COUPLING_TOL {
            return Err(TuckerError::CouplingViolation(gap));
        }
        Ok(state)
    }

    pub fn from_parts(parts: StreamingParts) -> Result<Self> {
        let StreamingParts { model, isvd, energy, nonstreaming_sq_error, error_bound, steps } = parts;
        model.validate()?;
        let d = model.ndims();
        if model.mode_order[d - 1] != d - 1 {
            return Err(TuckerError::Corrupt("streaming mode is not processed last".into()));
        }
        let n: usize = model.ranks()[..d - 1].iter().product();
        if isvd.left() != &model.factors[d - 1] || isvd.rank() != model.ranks()[d - 1] || isvd.row_len() != n {
            return Err(TuckerError::Corrupt("incremental SVD does not match the model".into()));
        }
        let state =
            StreamingState { model, isvd, energy, nonstreaming_sq_error, error_bound, steps, metrics: Vec::new() };
        let gap = state.coupling_error();
        if gap > COUPLING_TOL {
            return Err(TuckerError::CouplingViolation(gap));
        }
        Ok(state)
    }

    pub fn to_parts(&self) -> StreamingParts {
        StreamingParts {
            model: self.model.clone(),
            isvd: self.isvd.clone(),
            energy: self.energy,
            nonstreaming_sq_error: self.nonstreaming_sq_error,
            error_bound: self.error_bound,
            steps: self.steps,
        }
    }

    pub fn model(&self) -> &TuckerModel {
        &self.model
    }

    pub fn into_model(self) -> TuckerModel {
        self.model
    }

    pub fn isvd(&self) -> &IsvdState {
        &self.isvd
    }

    pub fn tau(&self) -> f64 {
        self.model.tau
    }

    pub fn ndims(&self) -> usize {
        self.model.ndims()
    }

    /// Slices absorbed, including the initial block.
    pub fn n_d(&self) -> usize {
        self.model.factors[self.ndims() - 1].rows()
    }

    /// Slices absorbed after initialization.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.model.ranks()
    }

    pub fn metrics(&self) -> &[StepMetrics] {
        &self.metrics
    }

    /// Accumulated `‖X‖²` over all data seen.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Dimensions of the slices this state accepts.
    pub fn slice_dims(&self) -> Vec<usize> {
        let dims = self.model.dims();
        let d = dims.len();
        if d == 1 {
            vec![1]
        } else {
            dims[..d - 1].to_vec()
        }
    }

    /// The right singular vectors reshaped to `R_1 x .. x R_{d-1} x R_d`.
    pub fn v_tensor(&self) -> DenseTensor {
        DenseTensor::from_vec(&self.model.ranks(), self.isvd.right().as_slice().to_vec())
            .expect("right basis matches the core shape")
    }

    /// Relative gap between the core and `V x_d diag(S)`.
    pub fn coupling_error(&self) -> f64 {
        let mut vs = self.isvd.right().clone();
        for (j, &s) in self.isvd.singular_values().iter().enumerate() {
            vs.col_mut(j).iter_mut().for_each(|x| *x *= s);
        }
        rel_gap(self.model.core.as_slice(), vs.as_slice())
    }

    /// `‖X - reconstruct‖ / ‖X‖` estimated by summing the squared error
    /// budgets spent so far. Usually tight, but not a strict bound: once a
    /// leading-mode basis grows, the last-mode rotation can move earlier
    /// slices toward directions their own discarded remainders point in.
    pub fn estimate_relative_error(&self) -> f64 {
        ((self.isvd.squared_error() + self.nonstreaming_sq_error) / self.energy).sqrt()
    }

    /// Guaranteed upper bound on `‖X - reconstruct‖ / ‖X‖`. Per slice the
    /// leading-mode remainders add in quadrature to the previous error, and
    /// the last-mode truncation is added by the triangle inequality.
    pub fn relative_error_bound(&self) -> f64 {
        self.error_bound / self.energy.sqrt()
    }

    /// Absorbs one slice along the streaming mode.
    pub fn update(&mut self, y: &DenseTensor) -> Result<&StepMetrics> {
        let want = self.slice_dims();
        if y.dims() != want.as_slice() {
            return Err(TuckerError::shape(format!("slice has dims {:?}, expected {want:?}", y.dims())));
        }
        let start = Instant::now();
        let (res, peak_bytes) = memtrack::measure(|| self.absorb(y));
        let (slice_norm, projected_norm, residual_norms) = res?;
        self.steps += 1;
        let record = StepMetrics {
            step: self.steps,
            n_d: self.n_d(),
            ranks: self.ranks(),
            peak_bytes,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            slice_norm,
            projected_norm,
            residual_norms,
            rel_error_estimate: self.estimate_relative_error(),
        };
        self.metrics.push(record);
        Ok(self.metrics.last().expect("just pushed"))
    }

    fn absorb(&mut self, y: &DenseTensor) -> Result<(f64, f64, Vec<f64>)> {
        let d = self.ndims();
        let y_sq = y.squared_norm();
        self.energy += y_sq;
        if y_sq == 0.0 {
            self.isvd.append_zero_row();
            self.model.factors[d - 1].assign(self.isvd.left());
            return Ok((0.0, 0.0, vec![0.0; d - 1]));
        }
        let slice_norm = y_sq.sqrt();
        let delta = self.tau() * slice_norm / (d as f64).sqrt();

        let order: Vec<usize> = self.model.mode_order[..d - 1].to_vec();
        let spent_before = self.nonstreaming_sq_error;
        let mut y = y.clone();
        let mut residual_norms = Vec::with_capacity(d - 1);
        for k in order {
            let (next, residual) = self.project_mode(&y, k, delta)?;
            y = next;
            residual_norms.push(residual);
        }

        let projected_norm = y.frobenius_norm();
        let m = self.n_d();
        let report = self.isvd.add_row(y.as_slice(), delta)?;
        let spent = self.nonstreaming_sq_error - spent_before;
        self.error_bound = (self.error_bound.powi(2) + spent).sqrt() + report.added_error.sqrt();
        let u_new = self.isvd.left();
        let r_new = u_new.cols();

        // C <- C x_d (U~(0..m, :)ᵀ U_d) + Y x_d U~(m, :)ᵀ, where the model
        // still holds the old U_d.
        let rotation = u_new.leading_rows_t_matmul(m, &self.model.factors[d - 1])?;
        let mut core = self.model.core.ttm(d - 1, &rotation, false)?;
        let last_row = u_new.row(m);
        let n = y.len();
        {
            let c = core.as_mut_slice();
            for (j, &w) in last_row.iter().enumerate() {
                for (o, &v) in c[j * n..(j + 1) * n].iter_mut().zip(y.as_slice()) {
                    *o += w * v;
                }
            }
        }
        debug_assert_eq!(core.len(), n * r_new);
        self.model.core = core;
        self.model.factors[d - 1].assign(u_new);

        let gap = self.coupling_error();
        if gap > COUPLING_TOL {
            return Err(TuckerError::CouplingViolation(gap));
        }
        Ok((slice_norm, projected_norm, residual_norms))
    }

    /// Projects `y` onto the mode-`k` basis, extending the basis first if
    /// the remainder exceeds `delta`. Returns the projected slice and the
    /// remainder norm.
    fn project_mode(&mut self, y: &DenseTensor, k: usize, delta: f64) -> Result<(DenseTensor, f64)> {
        let u = &self.model.factors[k];
        let (n_k, r_k) = (u.rows(), u.cols());
        let p = y.ttm(k, u, true)?;
        let e = y.sub(&p.ttm(k, u, false)?)?;
        let e_sq = e.squared_norm();
        let e_norm = e_sq.sqrt();
        if e_norm <= delta || r_k == n_k {
            self.nonstreaming_sq_error += e_sq;
            return Ok((p, e_norm));
        }

        let eig = sym_eig_desc(&gram(&e.unfold(k)?))?;
        let extra = truncation_rank(&eig.values, delta)?.min(n_k - r_k);
        let w = orthogonal_extension(u, &eig.vectors.leading_cols(extra))?;
        let kt = e.ttm(k, &w, true)?;
        self.nonstreaming_sq_error += (e_sq - kt.squared_norm()).max(0.0);
        debug!("mode {k}: rank {r_k} -> {} (remainder {e_norm:e} > {delta:e})", r_k + extra);

        let v = self.v_tensor().pad_with_zeros(k, extra)?;
        self.model.core = self.model.core.pad_with_zeros(k, extra)?;
        let rows: usize = v.dims()[..self.ndims() - 1].iter().product();
        let r = self.isvd.rank();
        self.isvd.set_right(Matrix::from_col_major(rows, r, v.into_vec())?)?;
        self.model.factors[k] = self.model.factors[k].hcat(&w)?;
        if self.model.factors[k].orthonormality_error() > 1e-10 {
            warn!("mode {k} basis drifted: orthonormality error {:e}", self.model.factors[k].orthonormality_error());
        }
        Ok((DenseTensor::concat_along_mode(k, &p, &kt)?, e_norm))
    }
}

/// Makes the columns of `w` orthonormal and orthogonal to those of `u`.
fn orthogonal_extension(u: &Matrix, w: &Matrix) -> Result<Matrix> {
    let mut w = w.clone();
    for _ in 0..2 {
        let coeff = u.matmul_t(true, &w, false)?;
        let proj = u.matmul(&coeff)?;
        for (x, p) in w.as_mut_slice().iter_mut().zip(proj.as_slice()) {
            *x -= p;
        }
        reorthonormalize(&mut w);
    }
    Ok(w)
}

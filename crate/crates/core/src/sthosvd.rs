//! Batch sequentially truncated HOSVD and the Tucker model container.

use log::{debug, warn};

use crate::error::{Result, TuckerError};
use crate::kernels::{self, Exec};
use crate::linalg::{gram, sym_eig_desc, truncation_rank};
use crate::tensor::{DenseTensor, Matrix};

/// Tolerance on `UᵀU = I` accepted when validating a model.
pub const FACTOR_ORTHO_TOL: f64 = 1e-8;

/// Core tensor plus one orthonormal factor per mode.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerModel {
    pub core: DenseTensor,
    /// Factor `k` is `N_k x R_k`.
    pub factors: Vec<Matrix>,
    /// Relative error tolerance the model was built for.
    pub tau: f64,
    /// Order in which modes were truncated.
    pub mode_order: Vec<usize>,
}

impl TuckerModel {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>, tau: f64, mode_order: Vec<usize>) -> Result<Self> {
        let model = TuckerModel { core, factors, tau, mode_order };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.core.ndims();
        if self.factors.len() != d {
            return Err(TuckerError::shape(format!("{} factors for a {d}-way core", self.factors.len())));
        }
        for (k, (f, &r)) in self.factors.iter().zip(self.core.dims()).enumerate() {
            if f.cols() != r || r > f.rows() {
                return Err(TuckerError::shape(format!(
                    "factor {k} is {}x{} but core rank is {r}",
                    f.rows(),
                    f.cols()
                )));
            }
        }
        validate_mode_order(&self.mode_order, d)
    }

    /// Shape checks plus factor orthonormality.
    pub fn validate(&self) -> Result<()> {
        self.check_shapes()?;
        for f in &self.factors {
            let err = f.orthonormality_error();
            if err > FACTOR_ORTHO_TOL {
                return Err(TuckerError::NotOrthonormal(err));
            }
        }
        Ok(())
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.dims().to_vec()
    }

    /// Dimensions of the approximated tensor.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    /// `core x_1 U_1 ... x_d U_d`.
    pub fn reconstruct(&self) -> DenseTensor {
        let order: Vec<usize> = (0..self.ndims()).collect();
        self.reconstruct_in_order(&order).expect("model shapes are validated on construction")
    }

    /// Same as [`reconstruct`](Self::reconstruct) but applying the factors
    /// in the given mode order.
    pub fn reconstruct_in_order(&self, order: &[usize]) -> Result<DenseTensor> {
        validate_mode_order(order, self.ndims())?;
        let mut t = self.core.clone();
        for &k in order {
            t = t.ttm(k, &self.factors[k], false)?;
        }
        Ok(t)
    }

    /// `‖x - reconstruct‖ / ‖x‖`. Zero for a zero `x` reproduced exactly.
    pub fn relative_error(&self, x: &DenseTensor) -> Result<f64> {
        if x.dims() != self.dims().as_slice() {
            return Err(TuckerError::shape(format!("model approximates {:?}, tensor is {:?}", self.dims(), x.dims())));
        }
        let diff = x.sub(&self.reconstruct())?.frobenius_norm();
        let norm = x.frobenius_norm();
        if norm == 0.0 {
            return if diff == 0.0 { Ok(0.0) } else { Err(TuckerError::ZeroNorm) };
        }
        Ok(diff / norm)
    }

    /// Raw element count over stored element count.
    pub fn compression_ratio(&self) -> f64 {
        let dims = self.dims();
        let ranks = self.ranks();
        let raw: f64 = dims.iter().map(|&n| n as f64).product();
        let core: f64 = ranks.iter().map(|&r| r as f64).product();
        let factors: f64 = dims.iter().zip(&ranks).map(|(&n, &r)| (n * r) as f64).sum();
        raw / (core + factors)
    }
}

pub(crate) fn validate_mode_order(order: &[usize], d: usize) -> Result<()> {
    let mut seen = vec![false; d];
    if order.len() != d {
        return Err(TuckerError::InvalidArgument(format!("mode order {order:?} is not a permutation of 0..{d}")));
    }
    for &k in order {
        if k >= d || seen[k] {
            return Err(TuckerError::InvalidArgument(format!("mode order {order:?} is not a permutation of 0..{d}")));
        }
        seen[k] = true;
    }
    Ok(())
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(TuckerError::InvalidTolerance(tau));
    }
    Ok(())
}

/// Gram matrix of the mode-`k` unfolding. Mode 0 reads the buffer in place.
fn mode_gram(t: &DenseTensor, k: usize) -> Result<Matrix> {
    if k != 0 {
        return Ok(gram(&t.unfold(k)?));
    }
    let n = t.dims()[0];
    let mut g = Matrix::zeros(n, n);
    kernels::gram_into(Exec::default(), n, t.len() / n.max(1), t.as_slice(), g.as_mut_slice());
    Ok(g)
}

/// What happened while truncating one mode.
#[derive(Clone, Debug)]
pub struct ModeStep {
    pub mode: usize,
    pub rank: usize,
    /// Clamped eigenvalues of the partial-core Gram matrix.
    pub eigenvalues: Vec<f64>,
    /// Energy removed at this step, `sum(eigenvalues[rank..])`.
    pub discarded_energy: f64,
}

#[derive(Clone, Debug)]
pub struct SthosvdOutput {
    pub model: TuckerModel,
    pub steps: Vec<ModeStep>,
    /// `‖x‖²` of the input.
    pub input_energy: f64,
}

impl SthosvdOutput {
    /// Squared approximation error, i.e. the energy discarded over all modes.
    pub fn squared_error(&self) -> f64 {
        self.steps.iter().map(|s| s.discarded_energy).sum()
    }
}

/// Sequentially truncated HOSVD with Gram eigendecompositions.
///
/// Each mode keeps the fewest leading eigenvectors whose discarded tail is
/// at most `delta^2`, `delta = tau * ‖x‖ / sqrt(d)`, so the result satisfies
/// `‖x - reconstruct‖ ≤ tau ‖x‖`. `mode_order` defaults to `0..d`.
pub fn sthosvd(x: &DenseTensor, tau: f64, mode_order: Option<&[usize]>) -> Result<SthosvdOutput> {
    check_tau(tau)?;
    let d = x.ndims();
    let order: Vec<usize> = match mode_order {
        Some(o) => o.to_vec(),
        None => (0..d).collect(),
    };
    validate_mode_order(&order, d)?;

    let input_energy = x.squared_norm();
    if input_energy == 0.0 {
        warn!("sthosvd called on a zero tensor; returning a rank-1 zero model");
        let core = DenseTensor::zeros(&vec![1; d])?;
        let factors = x
            .dims()
            .iter()
            .map(|&n| {
                let mut f = Matrix::zeros(n, 1);
                if n > 0 {
                    f.set(0, 0, 1.0);
                }
                f
            })
            .collect();
        let steps = order
            .iter()
            .map(|&mode| ModeStep { mode, rank: 1, eigenvalues: vec![0.0; x.dims()[mode]], discarded_energy: 0.0 })
            .collect();
        return Ok(SthosvdOutput { model: TuckerModel::new(core, factors, tau, order)?, steps, input_energy });
    }

    let delta = tau * input_energy.sqrt() / (d as f64).sqrt();
    let mut factors: Vec<Option<Matrix>> = vec![None; d];
    let mut steps = Vec::with_capacity(d);
    let mut partial: Option<DenseTensor> = None;

    for &k in &order {
        let current = partial.as_ref().unwrap_or(x);
        let g = mode_gram(current, k)?;
        let eig = sym_eig_desc(&g)?;
        drop(g);
        let rank = truncation_rank(&eig.values, delta)?;
        let discarded_energy: f64 = eig.values[rank..].iter().sum();
        debug!("mode {k}: rank {rank} of {}, discarded {discarded_energy:e}", eig.values.len());
        let u = eig.vectors.leading_cols(rank);
        let next = current.ttm(k, &u, true)?;
        partial = Some(next);
        factors[k] = Some(u);
        steps.push(ModeStep { mode: k, rank, eigenvalues: eig.values, discarded_energy });
    }

    let core = partial.expect("at least one mode");
    let factors = factors.into_iter().map(|f| f.expect("every mode visited")).collect();
    Ok(SthosvdOutput { model: TuckerModel::new(core, factors, tau, order)?, steps, input_energy })
}

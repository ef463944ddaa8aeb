//! Synthetic sums of multidimensional sine waves with known Tucker ranks,
//! and per-slice scaled Gaussian noise.
//!
//! Entry `i` of the clean tensor is `sum_j c_j sin(sum_k j_k x_k(i_k))` over
//! the frequency box `j_k in -J_k..=J_k`, sampled at `x_k(i) = 2 pi i / N_k`.
//! Because `sin(a + b + ..)` is the imaginary part of a product of complex
//! exponentials, the tensor is evaluated as a complex Tucker product with
//! the coefficient box as core and Fourier matrices as factors, which makes
//! the mode-k rank `2 J_k + 1` for generic coefficients.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TuckerError};
use crate::kernels::{for_each_chunk, Exec};
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SineSpec {
    pub dims: Vec<usize>,
    pub bandwidths: Vec<usize>,
    /// Coefficient box of dims `2 J_k + 1`, lowest frequency first, mode-1
    /// fastest.
    pub coefficients: Vec<f64>,
    /// Seeds both the default coefficients and the noise.
    pub seed: u64,
}

impl SineSpec {
    /// Coefficients drawn as `±uniform(0.5, 1.5)` from `seed`.
    pub fn new(dims: &[usize], bandwidths: &[usize], seed: u64) -> Result<Self> {
        let len = box_len(dims, bandwidths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let coefficients = (0..len)
            .map(|_| {
                let mag: f64 = rng.random_range(0.5..1.5);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        Ok(SineSpec { dims: dims.to_vec(), bandwidths: bandwidths.to_vec(), coefficients, seed })
    }

    pub fn with_coefficients(dims: &[usize], bandwidths: &[usize], coefficients: Vec<f64>, seed: u64) -> Result<Self> {
        let len = box_len(dims, bandwidths)?;
        if coefficients.len() != len {
            return Err(TuckerError::shape(format!(
                "{} coefficients for a frequency box of {len}",
                coefficients.len()
            )));
        }
        Ok(SineSpec { dims: dims.to_vec(), bandwidths: bandwidths.to_vec(), coefficients, seed })
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    /// `2 J_k + 1` per mode.
    pub fn box_dims(&self) -> Vec<usize> {
        self.bandwidths.iter().map(|&j| 2 * j + 1).collect()
    }

    /// Dimensions of one trailing-mode slice.
    pub fn slice_dims(&self) -> Vec<usize> {
        let d = self.ndims();
        if d == 1 {
            vec![1]
        } else {
            self.dims[..d - 1].to_vec()
        }
    }

    fn slice_len(&self) -> usize {
        self.dims[..self.ndims() - 1].iter().product()
    }
}

fn box_len(dims: &[usize], bandwidths: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() != bandwidths.len() {
        return Err(TuckerError::InvalidArgument(format!(
            "need one bandwidth per mode, got dims {dims:?} and bandwidths {bandwidths:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(TuckerError::InvalidArgument(format!("zero extent in dims {dims:?}")));
    }
    Ok(bandwidths.iter().map(|&j| 2 * j + 1).product())
}

/// Row `i` of the mode-`k` Fourier factor: `exp(1j * f * x_k(i))` for
/// `f = -J_k..=J_k`.
fn fourier_row(n: usize, bandwidth: usize, i: usize) -> Vec<Complex64> {
    let x = TAU * i as f64 / n as f64;
    (0..2 * bandwidth + 1).map(|j| Complex64::from_polar(1.0, (j as f64 - bandwidth as f64) * x)).collect()
}

/// `N x (2J + 1)` Fourier factor, column-major.
fn fourier_factor(n: usize, bandwidth: usize) -> Vec<Complex64> {
    let w = 2 * bandwidth + 1;
    let mut f = vec![Complex64::default(); n * w];
    for i in 0..n {
        for (j, v) in fourier_row(n, bandwidth, i).into_iter().enumerate() {
            f[i + j * n] = v;
        }
    }
    f
}

/// Complex mode-`k` product with an `m x dims[k]` matrix.
fn complex_ttm(dims: &mut [usize], x: &[Complex64], k: usize, a: &[Complex64], m: usize) -> Vec<Complex64> {
    let left: usize = dims[..k].iter().product();
    let n = dims[k];
    let right: usize = dims[k + 1..].iter().product();
    let mut out = vec![Complex64::default(); left * m * right];
    for b in 0..right {
        for i in 0..n {
            let src = &x[(i + b * n) * left..(i + b * n + 1) * left];
            for j in 0..m {
                let aji = a[j + i * m];
                let dst = &mut out[(j + b * m) * left..(j + b * m + 1) * left];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += aji * s;
                }
            }
        }
    }
    dims[k] = m;
    out
}

/// Precomputed factors for the leading modes.
struct Evaluator<'a> {
    spec: &'a SineSpec,
    factors: Vec<Vec<Complex64>>,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a SineSpec) -> Self {
        let d = spec.ndims();
        let factors = (0..d - 1).map(|k| fourier_factor(spec.dims[k], spec.bandwidths[k])).collect();
        Evaluator { spec, factors }
    }

    fn slice_into(&self, i: usize, out: &mut [f64]) {
        let spec = self.spec;
        let d = spec.ndims();
        let mut dims = spec.box_dims();
        let core: Vec<Complex64> = spec.coefficients.iter().map(|&c| Complex64::new(c, 0.0)).collect();
        let row = fourier_row(spec.dims[d - 1], spec.bandwidths[d - 1], i);
        let mut t = complex_ttm(&mut dims, &core, d - 1, &row, 1);
        for k in 0..d - 1 {
            t = complex_ttm(&mut dims, &t, k, &self.factors[k], spec.dims[k]);
        }
        for (o, v) in out.iter_mut().zip(&t) {
            *o = v.im;
        }
    }
}

fn check_slice(spec: &SineSpec, i: usize) -> Result<()> {
    let last = spec.dims[spec.ndims() - 1];
    if i >= last {
        return Err(TuckerError::InvalidArgument(format!("slice {i} out of range 0..{last}")));
    }
    Ok(())
}

/// Clean slice `i` along the last mode.
pub fn sine_slice(spec: &SineSpec, i: usize) -> Result<DenseTensor> {
    check_slice(spec, i)?;
    let mut out = DenseTensor::zeros(&spec.slice_dims())?;
    Evaluator::new(spec).slice_into(i, out.as_mut_slice());
    Ok(out)
}

/// The full clean tensor. Equal, bit for bit, to stacking every
/// [`sine_slice`].
pub fn sine_tensor(spec: &SineSpec) -> DenseTensor {
    sine_tensor_with(Exec::default(), spec)
}

pub fn sine_tensor_with(exec: Exec, spec: &SineSpec) -> DenseTensor {
    let mut out = DenseTensor::zeros(&spec.dims).expect("dims validated by SineSpec");
    let eval = Evaluator::new(spec);
    for_each_chunk(exec, out.as_mut_slice(), spec.slice_len(), 1, |i, chunk| eval.slice_into(i, chunk));
    out
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eta) {
        return Err(TuckerError::InvalidArgument(format!("noise ratio {eta} outside [0, 1)")));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Adds Gaussian noise scaled so its norm is `eta * ‖slice‖` to one slice.
/// Slice `i` draws from its own stream, so slices are independent of the
/// order they are generated in.
fn perturb_slice(slice: &mut [f64], eta: f64, seed: u64, i: usize) {
    if eta == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    let noise: Vec<f64> = (0..slice.len()).map(|_| rng.sample(StandardNormal)).collect();
    let (clean, raw) = (norm(slice), norm(&noise));
    if clean == 0.0 || raw == 0.0 {
        return;
    }
    let scale = eta * clean / raw;
    for (x, n) in slice.iter_mut().zip(&noise) {
        *x += scale * n;
    }
}

/// `x + N` where each last-mode slice of `N` has norm `eta` times the norm
/// of the matching slice of `x`. `eta = 0` returns `x` unchanged.
pub fn add_noise(x: &DenseTensor, eta: f64, seed: u64) -> Result<DenseTensor> {
    check_eta(eta)?;
    let mut out = x.clone();
    let d = x.ndims();
    let slice_len: usize = x.dims()[..d - 1].iter().product();
    for_each_chunk(Exec::default(), out.as_mut_slice(), slice_len, 1, |i, chunk| perturb_slice(chunk, eta, seed, i));
    Ok(out)
}

/// Noisy slice `i`, seeded by `spec.seed`.
pub fn noisy_slice(spec: &SineSpec, eta: f64, i: usize) -> Result<DenseTensor> {
    check_eta(eta)?;
    let mut s = sine_slice(spec, i)?;
    perturb_slice(s.as_mut_slice(), eta, spec.seed, i);
    Ok(s)
}

/// Same as `add_noise(sine_tensor(spec), eta, spec.seed)` without the
/// intermediate copy.
pub fn noisy_sine_tensor(spec: &SineSpec, eta: f64) -> Result<DenseTensor> {
    check_eta(eta)?;
    let mut out = DenseTensor::zeros(&spec.dims)?;
    let eval = Evaluator::new(spec);
    for_each_chunk(Exec::default(), out.as_mut_slice(), spec.slice_len(), 1, |i, chunk| {
        eval.slice_into(i, chunk);
        perturb_slice(chunk, eta, spec.seed, i);
    });
    Ok(out)
}

/// The first `count` noisy slices as one tensor, built in place. Equal to
/// stacking [`noisy_slice`] for `0..count`.
pub fn noisy_leading_slices(spec: &SineSpec, eta: f64, count: usize) -> Result<DenseTensor> {
    check_eta(eta)?;
    if count == 0 {
        return Err(TuckerError::InvalidArgument("need at least one slice".into()));
    }
    check_slice(spec, count - 1)?;
    let mut dims = spec.slice_dims();
    if spec.ndims() == 1 {
        dims.clear();
    }
    dims.push(count);
    let mut out = DenseTensor::zeros(&dims)?;
    let eval = Evaluator::new(spec);
    for_each_chunk(Exec::default(), out.as_mut_slice(), spec.slice_len(), 1, |i, chunk| {
        eval.slice_into(i, chunk);
        perturb_slice(chunk, eta, spec.seed, i);
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::thin_svd;

    /// Direct evaluation of the defining sum.
    fn brute_force(spec: &SineSpec) -> DenseTensor {
        let box_dims = spec.box_dims();
        DenseTensor::from_fn(&spec.dims, |idx| {
            let mut total = 0.0;
            for (lin, &c) in spec.coefficients.iter().enumerate() {
                let mut rem = lin;
                let mut phase = 0.0;
                for (k, &w) in box_dims.iter().enumerate() {
                    let f = (rem % w) as f64 - spec.bandwidths[k] as f64;
                    rem /= w;
                    phase += f * TAU * idx[k] as f64 / spec.dims[k] as f64;
                }
                total += c * phase.sin();
            }
            total
        })
        .unwrap()
    }

    #[test]
    fn matches_defining_sum() {
        let spec = SineSpec::new(&[6, 5, 7], &[1, 2, 1], 3).unwrap();
        let fast = sine_tensor(&spec);
        let slow = brute_force(&spec);
        let err = fast.sub(&slow).unwrap().frobenius_norm() / slow.frobenius_norm();
        assert!(err < 1e-13, "{err}");
    }

    #[test]
    fn zero_bandwidth_is_zero() {
        let spec = SineSpec::with_coefficients(&[3, 4], &[0, 0], vec![1.0], 0).unwrap();
        assert!(sine_tensor(&spec).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unfolding_ranks_are_two_j_plus_one() {
        let spec = SineSpec::new(&[20, 18, 24], &[2, 1, 3], 11).unwrap();
        let x = sine_tensor(&spec);
        for k in 0..3 {
            let svd = thin_svd(&x.unfold(k).unwrap().transpose());
            let smax = svd.singular_values[0];
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
            assert_eq!(rank, 2 * spec.bandwidths[k] + 1, "mode {k}");
        }
    }

    #[test]
    fn slices_agree_with_full_tensor() {
        let spec = SineSpec::new(&[4, 5, 6], &[1, 1, 2], 8).unwrap();
        let full = noisy_sine_tensor(&spec, 0.1).unwrap();
        let via_noise = add_noise(&sine_tensor(&spec), 0.1, spec.seed).unwrap();
        assert_eq!(full, via_noise);
        for i in 0..6 {
            assert_eq!(noisy_slice(&spec, 0.1, i).unwrap(), full.last_mode_slice(i).unwrap());
            assert_eq!(sine_slice(&spec, i).unwrap(), sine_tensor(&spec).last_mode_slice(i).unwrap());
        }
        assert!(sine_slice(&spec, 6).is_err());
    }

    #[test]
    fn noise_ratio_is_exact_per_slice() {
        let spec = SineSpec::new(&[9, 8, 5], &[2, 2, 1], 4).unwrap();
        let clean = sine_tensor(&spec);
        let noisy = add_noise(&clean, 0.05, 99).unwrap();
        let noise = noisy.sub(&clean).unwrap();
        for i in 0..5 {
            let n = noise.last_mode_slice(i).unwrap().frobenius_norm();
            let c = clean.last_mode_slice(i).unwrap().frobenius_norm();
            assert!((n / c - 0.05).abs() < 1e-12 * 0.05 + 1e-15);
        }
    }

    #[test]
    fn zero_eta_is_identity_and_large_eta_rejected() {
        let spec = SineSpec::new(&[3, 3, 3], &[1, 1, 1], 1).unwrap();
        let clean = sine_tensor(&spec);
        assert_eq!(add_noise(&clean, 0.0, 5).unwrap(), clean);
        assert!(add_noise(&clean, 1.0, 5).is_err());
        assert!(add_noise(&clean, -0.1, 5).is_err());
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let a = noisy_sine_tensor(&SineSpec::new(&[5, 5, 5], &[1, 1, 1], 42).unwrap(), 0.01).unwrap();
        let b = noisy_sine_tensor(&SineSpec::new(&[5, 5, 5], &[1, 1, 1], 42).unwrap(), 0.01).unwrap();
        assert_eq!(a, b);
        let c = noisy_sine_tensor(&SineSpec::new(&[5, 5, 5], &[1, 1, 1], 43).unwrap(), 0.01).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn leading_slices_match_individual_slices() {
        let spec = SineSpec::new(&[6, 5, 9], &[1, 2, 1], 8).unwrap();
        let lead = noisy_leading_slices(&spec, 0.02, 4).unwrap();
        let parts: Vec<_> = (0..4).map(|i| noisy_slice(&spec, 0.02, i).unwrap()).collect();
        assert_eq!(lead, DenseTensor::stack(&parts).unwrap());
        assert!(noisy_leading_slices(&spec, 0.02, 10).is_err());
        assert!(noisy_leading_slices(&spec, 0.02, 0).is_err());
    }

    #[test]
    fn strategies_agree() {
        let spec = SineSpec::new(&[30, 20, 40], &[2, 2, 2], 6).unwrap();
        assert_eq!(sine_tensor_with(Exec::Sequential, &spec), sine_tensor_with(Exec::Parallel, &spec));
    }
}

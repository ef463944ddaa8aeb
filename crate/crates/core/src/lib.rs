//! Batch and streaming sequentially truncated HOSVD for error-bounded
//! compression of dense tensors.
//!
//! A d-way tensor is approximated as `core x_1 U_1 ... x_d U_d` with
//! orthonormal factors, the ranks chosen so that the relative Frobenius
//! error stays below a tolerance `tau`. [`sthosvd`] compresses a tensor held
//! in memory; [`StreamingState`] absorbs the tensor one trailing-mode slice
//! at a time without ever materializing it.

pub mod datagen;
pub mod error;
pub mod io;
pub mod isvd;
pub mod kernels;
pub mod linalg;
pub mod memtrack;
pub mod sthosvd;
pub mod streaming;
pub mod tensor;

pub use error::{Result, TuckerError};
pub use isvd::IsvdState;
pub use kernels::Exec;
pub use sthosvd::{sthosvd, SthosvdOutput, TuckerModel};
pub use streaming::{StepMetrics, StreamingState};
pub use tensor::{DenseTensor, Matrix};

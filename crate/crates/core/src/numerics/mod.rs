//! Minimal dense-tensor arithmetic, kernels, and deterministic randomness
//! shared by the supervision pipeline and the trainer. All operations are
//! pure f64 with documented summation order so runs are bit-reproducible.

mod rng;
mod tensor;

pub use rng::RngState;
pub use tensor::{
    bilinear_sample, finite_diff_gradient, gaussian_kernel_2d, matmul, normalize_nonneg,
    softmax_rows, Tensor,
};

//! Small deterministic tensor library: dense `f32` storage, a reverse-mode
//! tape, the 3D/1D convolution stack needed by the input-function network,
//! and the ADAM optimizer.
//!
//! Reductions (sums, means, normalization statistics, kernel gradients)
//! accumulate in `f64`; storage is `f32`. Everything runs on the calling
//! thread in a fixed order, so repeated runs are bit-identical.

pub mod adam;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use graph::{Graph, Padding1d, Var, NORM_EPS};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

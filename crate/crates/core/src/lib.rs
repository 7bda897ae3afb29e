//! Shared-activation Kolmogorov–Arnold layers, grad-free spline training and
//! fully KA-based U-shaped segmentation networks on a small reverse-mode
//! tensor engine with saved-activation accounting.

pub mod autograd;
pub mod error;
pub mod layers;
pub mod model;
pub mod spline;
pub mod tensor;
pub mod training;

pub use autograd::{Graph, Param, Var};
pub use error::{Error, Result};
pub use spline::SplineSpec;
pub use tensor::{DType, Element, Tensor};

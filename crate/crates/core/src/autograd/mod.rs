//! Tape-based reverse-mode differentiation with explicit detaching and
//! accounting of the bytes each operation keeps alive for backward.

mod graph;
pub mod kernels;
mod ops;
mod param;

pub use graph::{Graph, Var};
pub use kernels::ConvGeometry;
pub use param::{Param, ParamId};

//! Reverse-mode differentiation over dense real tensors.
//!
//! Values live on a [`Tape`]; each operation appends a node and returns a
//! [`Var`] handle. Complex quantities are carried as [`ComplexVar`] pairs of
//! real variables. Everything is generic over [`Real`] so gradient checks can
//! run in `f64` while training runs in `f32`.

mod complex;
mod conv;
mod error;
pub mod gradcheck;
mod real;
mod tape;
mod tensor;

pub use complex::ComplexVar;
pub use error::{AutodiffError, Result};
pub use gradcheck::{gradcheck, gradcheck_report, GradcheckReport};
pub use real::Real;
pub use tape::{BatchNormMode, Tape, Var, MAGNITUDE_EPS};
pub use tensor::{ComplexTensor, Tensor};

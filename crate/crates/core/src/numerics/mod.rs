//! Dense matrix substrate with a small reverse-mode tape.
//!
//! Every value is a row-major [`Tensor`]; the ops used by the trainable
//! stages are plain functions in [`ops`] so that eager code paths and the
//! [`Tape`] evaluate bit-for-bit the same arithmetic. Vectors are `[1, d]`
//! matrices and scalars are `[1, 1]`.

mod adam;
mod fdcheck;
pub mod ops;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, GradAccumulator, Parameters};
pub use fdcheck::{finite_diff_check, finite_diff_errors, FdErrors};
pub use tape::{AdjointRule, Gradients, Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type. Training runs in `f32`; gradient checks in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("float conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

//! Differentiable array computation: tensors, the autodiff graph, parameter
//! storage, and the finite-difference gradient verification harness.
//!
//! Forward evaluation is pure. A [`Graph`] owns every intermediate value of
//! one computation, so callers may build independent graphs for disjoint
//! inputs in parallel; a single training step builds one graph, runs
//! [`Graph::backward`], and drops it.

mod conv;
mod gradcheck;
mod graph;
mod params;
mod sample;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{conv_out_extent, Grads, Graph, VarId};
pub(crate) use params::mix_seed;
pub use params::{scoped, Binding, Init, ParamId, ParamStore};
pub use sample::SampleBox;
pub use tensor::Tensor;

use crate::error::Result;

/// Bilinear sampling of a normalized box, outside any graph. Same kernel as
/// [`Graph::crop_bilinear`], shared so inference and training cannot drift.
pub fn sample_box<T: Scalar>(
    x: &Tensor<T>,
    bx: &SampleBox,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    sample::sample_box_forward(x, bx, out_h, out_w)
}

/// Scalar type the numeric core is generic over.
///
/// `f32` carries the pipeline and all persisted artifacts; `f64` backs the
/// gradient checks, where central differences need the extra precision to
/// resolve a 1e-4 relative tolerance.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lossy conversion of an `f64` literal into the scalar type.
#[inline]
pub fn fl<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 representable in scalar type")
}

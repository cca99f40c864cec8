//! Dense `f64` arrays, reverse-mode differentiation and the finite-difference
//! oracle.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod param;
mod tape;

pub use array::Array;
pub use gradcheck::{check_gradients, finite_difference_grad, max_relative_error, GradCheckReport};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{softmax_in_place, Gradients, Tape, Var};

#[cfg(test)]
mod tests;

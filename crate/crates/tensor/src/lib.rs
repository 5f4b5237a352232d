//! Reverse-mode automatic differentiation over dense arrays, with exactly the
//! layer operations the audio-visual separation networks need.
//!
//! A forward pass records onto a [`Graph`]; [`Graph::backward`] returns
//! [`Gradients`] for every leaf. Parameters live in a [`ParamStore`] that the
//! graph borrows immutably, so updates only happen between passes.

mod array;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod layers;
mod ops;
pub mod optim;
mod params;
mod real;

pub use array::Array;
pub use error::{Result, TensorError};
pub use graph::{BatchNormArgs, Diagnostic, Gradients, Graph, Mode, Reduction, StatUpdate, Var};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use real::{gemm, Real};

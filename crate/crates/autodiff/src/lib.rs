//! Reverse-mode automatic differentiation over dense `f64` matrices, sized for
//! small models trained on a CPU.
//!
//! A [`Tape`] records one forward pass; parameters are bound from a
//! [`ParamStore`] by name so their gradients can be read back by name after
//! [`Tape::backward`].

pub mod optim;
pub mod params;
pub mod tape;

pub use params::{GradStore, ParamStore};
pub use tape::{sigmoid, Gradients, Tape, Var};

pub type Matrix = ndarray::Array2<f64>;

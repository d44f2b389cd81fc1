//! Complexity measures for small convolutional networks and the machinery to
//! test how well they predict generalization across a hyperparameter grid.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod measures;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

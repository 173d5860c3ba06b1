//! Unanimous prediction: learning semantic mappings that abstain unless every
//! mapping consistent with the training data agrees on the output.

pub mod bag;
pub mod data;
pub mod error;
pub mod eval;
pub mod extensions;
pub mod ilp;
pub mod linalg;
pub mod lp;
pub mod semparse;
pub mod unanimity;

pub use bag::{CountVector, Dataset, Example, Mapping, Prediction, Vocabulary};
pub use error::{Error, Result};

//! Uniform matrix product states over strings, with regex-constrained
//! normalization, sampling and completion.

// `!(x > y)` is used deliberately so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grammars;
pub mod linalg;
pub mod model;
pub mod regex;
pub mod sampler;
pub mod training;
pub mod transfer;

pub use error::{Result, UmpsError};
pub use linalg::{ChainMode, Matrix, PsdMatrix, Vector};
pub use model::{Alphabet, Umps};
pub use regex::Regex;
pub use transfer::{ClosureCache, Side, Symbol};

// negated comparisons also reject NaN; index loops mirror the matrix formulas
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod bundle;
pub mod designs;
pub mod ensemble;
pub mod fkh;
pub mod homogeneous;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod measures;
pub mod report;
pub mod rng;
pub mod runner;
pub mod stats;

pub use error::{Error, Result};

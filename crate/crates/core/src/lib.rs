mod ascent;
pub mod catalog;
pub mod cli;
pub mod coupling;
pub mod datum;
pub mod decompose;
pub mod error;
pub mod finiteness;
pub mod geometric;
pub mod linalg;
pub mod operator;
pub mod rational;
pub mod solver;

pub use datum::Datum;
pub use error::{FrblError, Result};

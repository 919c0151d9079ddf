pub mod cli;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod grad;
pub(crate) mod io;
pub mod linalg;
pub mod linear;
pub mod model;
pub mod plan;
pub mod train;

pub use error::{Error, Result};

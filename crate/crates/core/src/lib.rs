pub mod autodiff;
pub mod cli;
pub mod error;
pub mod fd;
pub mod eval;
pub mod field;
pub mod kernel_learn;
pub mod model;
pub mod stencil;
pub mod trainer;
pub mod warmstart;

pub use error::{Error, Result};

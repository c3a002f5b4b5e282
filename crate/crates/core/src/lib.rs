pub mod analysis;
pub mod error;
pub mod fockspace;
pub mod lindblad;
pub mod model;
pub mod scenarios;
pub mod sparse;

pub use error::{QsimError, Result};

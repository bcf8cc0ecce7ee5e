pub mod bench;
pub mod error;
pub mod estimators;
pub mod gfpoly;
pub mod numeric;
pub mod pde;
pub mod points;

pub use error::{Error, Result};

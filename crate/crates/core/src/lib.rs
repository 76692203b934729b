pub mod corrector;
pub mod error;
pub mod grid;
pub mod harness;
pub mod homog;
pub mod material;
pub mod randomfield;
pub mod twoscale;

pub use error::{Error, Result};

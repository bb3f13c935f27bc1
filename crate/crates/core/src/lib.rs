pub mod backend;
pub mod batchsplit;
pub mod error;
pub mod kernels;
pub mod memplan;
pub mod qtensor;
pub mod rescale;
pub mod runtime;
pub mod scheduler;
pub mod translator;

pub use error::{Error, Result};

pub mod error;
pub mod baselines;
pub mod chanscene;
pub mod numkernel;
pub mod simnet;
pub mod train;

pub use error::{Error, Result};

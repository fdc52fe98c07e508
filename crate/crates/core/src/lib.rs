pub mod error;
pub mod eval;
pub mod nets;
pub mod rng;
pub mod seqvol;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

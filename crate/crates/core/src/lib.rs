pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod privacy;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};

/// Vocabulary index.
pub type Token = u32;

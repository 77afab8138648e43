pub mod autodiff;
pub mod error;
pub mod rng;

pub use error::{Error, Result};
pub mod distributions;
pub mod objectives;
pub mod oracle;
pub mod data;
pub mod diagnostics;
pub mod models;
pub mod samplers;
pub mod runner;

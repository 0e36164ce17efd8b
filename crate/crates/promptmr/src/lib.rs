//! Data containers, configuration, training, evaluation and the command
//! line for two-stage prompt-conditioned MRI reconstruction.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod train;

pub use error::{AppError, AppResult};

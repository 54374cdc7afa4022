//! Dataset generation and experiment drivers around `ris-core`.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod table;

pub use config::ExperimentConfig;
pub use dataset::{generate, Dataset, Manifest};
pub use error::{HarnessError, Result};
pub use table::ResultTable;

//! Multiscale persistent sheaf Laplacian features for image classification.

pub mod complex;
pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod io;
pub mod matrix;
pub mod par;
pub mod pipeline;
pub mod report;
pub mod sheaf;
pub mod spectral;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use matrix::RowMatrix;
pub use par::Execution;

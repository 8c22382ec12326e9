pub mod error;
pub mod experiment;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod panel;
pub mod stgnn;

pub use error::{Error, Result};

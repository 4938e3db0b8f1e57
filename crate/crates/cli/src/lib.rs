//! Command-line pipeline and JSON service over the `corrnet` library.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod server;

//! Command-line interface and HTTP service for the biasloom engine.

pub mod cli;
pub mod server;

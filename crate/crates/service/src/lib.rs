//! Batch CLI and HTTP review service for session bundles.

pub mod api;
pub mod cli;

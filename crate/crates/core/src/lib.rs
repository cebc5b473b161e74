//! Reconstruction and annotation of reverse-engineering work sessions.
//!
//! A session bundle holds differential screenshots, input events and the
//! structure of the binary under analysis. The pipeline recognizes on-screen
//! text, matches it against symbol indices derived from the binary, and emits
//! a timestamped stream of activity annotations (function and block views,
//! navigation, renames, feature use) that can be evaluated against manually
//! labeled ground truth.

pub mod annotate;
pub mod artifacts;
pub mod codec;
pub mod demo;
pub mod error;
pub mod evaluate;
pub mod image;
pub mod input;
pub mod matchers;
pub mod ocr;
pub mod pipeline;
pub mod session;

pub use error::{Error, Result};
pub use image::Image;
pub use session::{SessionBundle, Timestamp};

/// Tool version recorded in the provenance of automatically created annotations.
pub const TOOL_VERSION: &str = concat!("retrace/", env!("CARGO_PKG_VERSION"));

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

//! Matching of recognized screen text against the binary's artifacts.

mod blocks;
mod distance;
mod function;
mod rects;

pub use blocks::{match_blocks, BlockMatch, DEFAULT_ACCEPT_RATIO};
pub use distance::{levenshtein, similarity_score};
pub use function::{match_function, FunctionLabel, FunctionMatch, MatchConfig, DEFAULT_THRESHOLD};
pub use rects::{detect_block_rects, ColorClass, FillClass, FilterTable, RectFilters, RectRegion};

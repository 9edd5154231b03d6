//! Config-driven pipeline around `misc_uq_core`: external oracles, the
//! evaluation log, artifact formats and the stage commands.
// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache_file;
pub mod config;
pub mod error;
pub mod external;
pub mod formats;
pub mod pipeline;

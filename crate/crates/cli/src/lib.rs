//! Library half of the `vstsae` command-line tool: configuration loading,
//! CSV ingestion, output writers, plotting, and command implementations.
//! The binary in `main.rs` only parses arguments and dispatches here.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;
pub mod plot;

//! Batch front end: `simulate`, `fit`, `predict`, `summarize` and `bench`,
//! each driven by a single JSON config.

pub mod alloc;
pub mod bench;
pub mod commands;
pub mod config;
pub mod graph;

pub use commands::{exit_code, Invocation};
pub use graph::{connection_graph, ConnectionGraph};

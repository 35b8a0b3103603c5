//! Host-side tooling around the docking simulator: scenario and layout
//! files, JSONL trial logs, replay, parallel batches and SVG plots.

pub mod batch;
pub mod config;
pub mod error;
pub mod layout_doc;
pub mod log;
pub mod plot;
pub mod replay;

pub use error::{HarnessError, Result};

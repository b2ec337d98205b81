//! File formats, checkpoint loading and analysis workflows for the `afn` CLI.

pub mod error;
pub mod fixtures;
pub mod load;
pub mod pipeline;
pub mod report;

pub use error::{AfnError, Result};

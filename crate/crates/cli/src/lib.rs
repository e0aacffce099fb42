//! File formats, exports and command implementations behind the `hetplan`
//! binary.

pub mod commands;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod formats;

pub use error::{CliError, Result};

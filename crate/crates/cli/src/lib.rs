//! Library side of the CLI: config parsing, dump file formats, and
//! report rendering, kept separate so integration tests can drive them
//! directly.

pub mod config;
pub mod dump;
pub mod report;

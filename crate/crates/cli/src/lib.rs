//! Command-line pipeline around the `scarab` reconstruction library.

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod meshfile;
pub mod pipeline;
pub mod project;
pub mod simulate;

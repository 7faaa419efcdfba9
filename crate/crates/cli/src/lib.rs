//! Command line and local HTTP service for the gridstab analysis library.

pub mod api;
pub mod cli;
pub mod jobs;
pub mod server;

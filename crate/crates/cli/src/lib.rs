//! Pipeline stages, run configuration and manifests behind the `evdecode` binary.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;

//! Command-line driver for the tip-force workbench: manifests, artifacts, the
//! end-to-end pipeline and the WebSocket server used by the UI.

pub mod analyze;
pub mod args;
pub mod artifacts;
pub mod commands;
pub mod manifest;
pub mod pipeline;
pub mod protocol;
pub mod runs;
pub mod serve;

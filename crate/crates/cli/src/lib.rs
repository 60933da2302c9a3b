//! Batch CLI and HTTP service for the furniture eraser.

pub mod commands;
pub mod outline;
pub mod server;
pub mod session;

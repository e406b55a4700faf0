//! Configuration, orchestration, classification and export.

pub mod classify;
pub mod config;
pub mod export;
pub mod pipeline;

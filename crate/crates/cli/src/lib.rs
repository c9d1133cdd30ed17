//! Pipeline driver for terminology-constrained translation: configuration,
//! response cache, stage manifests and the eight stages.

pub mod cache;
pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

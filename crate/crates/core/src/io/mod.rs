//! Data formats, checkpoints, configuration and run manifests.

pub mod checkpoint;
pub mod config;
pub mod conll;
pub mod manifest;
pub mod vectors;
pub mod vocab;

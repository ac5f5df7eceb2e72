//! Standard-library companion to `tstnet-core`: tensor record files,
//! dataset manifests, the synthetic episode generator, training
//! orchestration, checkpoints, and report rendering. The `tstnet` binary
//! wires these into a CLI.

pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod predictions;
pub mod record;
pub mod report;
pub mod synth;
pub mod trainer;

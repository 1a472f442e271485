//! IO companion to `gem-core`: table and pair-file loading in the three
//! supported formats, seeded synthetic benchmark generation, the
//! vocabulary/verbalizer/checkpoint/log file formats, and the pipeline
//! wiring shared by the `gem` command-line driver.

pub mod config;
pub mod formats;
pub mod ingest;
pub mod pipeline;
pub mod synth;

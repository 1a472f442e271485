//! Core library for low-resource generalized entity matching.
//!
//! Everything in this crate is pure and in-memory: domain types for
//! entities and candidate pairs, token-level record serialization,
//! cloze-style prompt templates with verbalizer scoring, a small
//! trainable masked-token model with seeded dropout, the lightweight
//! self-training loop (uncertainty-aware pseudo-labeling plus dynamic
//! data pruning), and the matching metrics.
//!
//! File formats, dataset loading, and the command-line driver live in
//! the companion `gem-cli` crate. This crate is `no_std`-compatible
//! (with `alloc`); disable the default `std` feature to use it in
//! environments without the standard library.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod eval;
mod fmath;
pub mod model;
pub mod prompt;
pub mod seeds;
pub mod selftrain;
pub mod serialize;

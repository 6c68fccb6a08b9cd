//! Early action prediction on per-progress-level video features.
//!
//! A clip observed up to progress level `n` of `N` is summarized by one
//! feature row per level; a teacher graph sees all levels while a student
//! graph is restricted to past-and-present ones and learns to match the
//! teacher through feature distillation. This crate implements the model,
//! its training and evaluation loops, a deterministic synthetic data
//! generator, and the binary container formats for features and
//! checkpoints.

mod bytes;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::AscError;

pub type Result<T> = std::result::Result<T, AscError>;

//! Transition-level strategy recommendation over match logs.
//!
//! The pipeline answers three questions for every candidate switch point:
//! who should be advised at all (behavioral subtype gate), when a switch is
//! worth it (timing gate), and what to switch to (transition quality
//! prediction fused with player adoptability).

pub mod archetype;
pub mod cluster;
pub mod encoder;
pub mod error;
pub mod flatfile;
pub mod fusion;
pub mod heads;
pub mod matchlog;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod policyeval;
pub mod seed;
pub mod service;
pub mod stages;
pub mod subtype;
pub mod synthgen;
pub mod transition;
pub mod window;

pub use error::{Error, Result};

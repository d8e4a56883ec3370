//! Personalized reward modeling with a vector-quantized persona space.
//!
//! Each user's feedback history is encoded into rationale vectors, pooled in
//! windows, projected into a shared persona space and snapped to a learned
//! codebook. A Bradley-Terry reward head conditioned on the persona, the
//! episode and the response scores candidate responses.

pub mod binio;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod persona;
pub mod reward;
pub mod simulator;

pub use error::{Error, Result};

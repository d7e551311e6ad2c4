//! Quantum-inspired multimodal sentiment fusion.
//!
//! Words are complex product states over a textual, visual and acoustic
//! Hilbert space, sentences are mixtures of those states, and sentiment is
//! read out by measuring against learned eigenstates.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod error;
pub mod fusion;
pub mod interpret;
pub mod measurement;
pub mod model;
pub mod qcore;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};

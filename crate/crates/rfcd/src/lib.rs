//! Numerical laboratory for one-step consistency distillation of a
//! random-feature diffusion teacher.
//!
//! The library builds the teacher's Gaussian-equivalent curvature matrix U,
//! the closed-form one-step distillation curvature U_cd = Δt²·a1²·A + β·I
//! with its exact kernel atom, per-eigenmode memorization/generalization
//! diagnostics (visibility a_i, resolvent term b_i, signed response α_i,
//! fracBmem leakage, ridge selection), the closed-form student gradient
//! flow, and independent Monte Carlo oracles that validate every closed form
//! by brute force. All randomness flows through seeded, purpose-keyed
//! substreams so runs reproduce byte for byte at any thread count.

pub mod activation;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod flow;
pub mod forward;
pub mod linalg;
pub mod moments;
pub mod operators;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod teacher;

pub use activation::Activation;
pub use config::{BetaConvention, ExperimentConfig, SigmaSpec};
pub use error::{Error, Result};

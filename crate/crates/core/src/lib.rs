//! Training-free retrieval-augmented nowcasting of ordinal flood property
//! damage extent (PDE) from tabular grid records.
//!
//! The pipeline runs in stages: [`divergence`] profiles the predictors,
//! [`prompt`] renders the prompt of each LLM stage and
//! validates every response, [`kb`] builds free-shot libraries from the
//! knowledge base, [`retrieval`] finds spatial neighbors and plans free-shot
//! injection, [`gateway`] talks to the LLM backend, [`downgrade`] applies the
//! rule-based post-check and [`eval`] scores predictions and rationales.
//! [`pipeline`] strings the stages together over a run directory.

pub mod config;
pub mod divergence;
pub mod downgrade;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gateway;
pub mod kb;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod retrieval;
pub mod synthetic;

pub use error::{Error, Result};
pub use exec::Execution;

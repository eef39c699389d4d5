//! Force analysis of gradient-descent learning dynamics.
//!
//! The crate decomposes one-step changes of a model's predictions into a
//! centering term, an empirical NTK term and a gap term, and builds a set of
//! desk-scale experiments on top of that view: distillation with filtered
//! soft labels, preference finetuning dynamics, feature adaptation in an
//! overparameterized linear model, and simplicity bias on the Toy256 family.

pub mod akg;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod feature_adapt;
pub mod filterkd;
pub mod finetune_dyn;
pub mod mathcore;
pub mod report;
pub mod simplicity;
pub mod training;

pub use error::{LabError, Result};
pub use mathcore::{Matrix, MlpModel, ProbVector, Vector};

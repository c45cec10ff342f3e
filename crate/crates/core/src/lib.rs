//! Differentially private synthetic data for categorical tables that
//! enforces a conditional-independence constraint `X ⊥ Y | Z` through the
//! structure of a tree-shaped graphical model.
//!
//! The pipeline measures noisy one-way marginals, privately grows a
//! spanning tree in which `Z` separates `X` from `Y`, measures the tree's
//! two-way marginals, reconciles them into a tree model and samples from it.

pub mod cli;
pub mod data;
pub mod dp;
pub mod error;
pub mod eval;
pub mod marginals;
pub mod model;
pub mod pipeline;
pub mod structure;

pub use error::{Error, Result};

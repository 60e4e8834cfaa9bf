//! Question answering over a triple store.
//!
//! Questions are linked to a topic entity, candidate answers are collected
//! within two hops, each candidate is described by its type, relation path and
//! question-overlapping neighbours, and a CNN + multi-head self-attention
//! encoder with trilinear cross-attention scores every candidate against the
//! question.

pub mod aspects;
pub mod candidates;
pub mod cli;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod evaluation;
mod io_util;
pub mod kb;
pub mod neural;
pub mod scoring;
pub mod text;
pub mod toy;
pub mod training;

pub use error::{Error, Result};

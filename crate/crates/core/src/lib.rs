//! Building blocks for generating and scoring behavioral test suites for
//! binary sentiment classifiers.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod http;
pub mod io;
pub mod llm;
pub mod mft_gen;
pub mod mock;
pub mod pipeline;
pub mod qc;
pub mod suite;
pub mod topics;

pub use error::{Error, Result};

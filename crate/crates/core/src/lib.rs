//! Cross-lingual language-model pretraining toolkit.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod sampling;
pub mod streams;
pub mod subword;
pub mod synthetic;
pub mod training;

pub use error::{Result, XlmError};

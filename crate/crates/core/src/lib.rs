//! Premise-contrast reasoning for implicit aspect sentiment with large
//! language models: prompt pipelines, backends, parsing, datasets and
//! evaluation.

pub mod backend;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod domain;
pub mod eval;
pub mod parser;
pub mod pipelines;
pub mod prompts;

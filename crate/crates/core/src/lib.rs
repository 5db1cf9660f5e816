//! Text-to-SQL prompting and evaluation harness.
//!
//! The pipeline turns a benchmark of question/query pairs into prompts,
//! obtains completions from a backend, and scores the resulting SQL by
//! validity, execution accuracy and test-suite accuracy.

pub mod artifact;
pub mod backend;
pub mod dataset;
pub mod eval;
pub mod fixtures;
pub mod prompt;
pub mod report;
pub mod schema;
pub mod sqltext;
pub mod triage;
pub mod value;

//! Alignment loop, evaluation metrics and report tables on top of
//! `fragforge-core` and `fragforge-lm`.

pub mod cli;
pub mod evaluate;
pub mod rae;

//! Command line, file formats and built-in problems around
//! [`stresseq_core`].

pub mod backend;
pub mod config;
pub mod harness;
pub mod meshio;
pub mod output;
pub mod problems;

//! Command-line front end for artiskit: instrument, run, corpus and bench.

pub mod bench;
pub mod cmd;
pub mod corpus;
pub mod error;
pub mod load;

//! Compiler-based application instrumentation at desk scale.
//!
//! MEX bytecode ([`mexfmt`]) is compiled per method into an SSA graph IR
//! ([`irgraph`]), transformed by an ordered pass pipeline ([`passes`]) that
//! hosts the instrumentation modules ([`taintmod`], [`permmod`] and the
//! tracer), and executed by the bundled interpreter ([`runtime`]).

pub mod mexfmt;
pub mod irgraph;
pub mod passes;
pub mod taintmod;
pub mod permmod;
pub mod bundle;
pub mod runtime;

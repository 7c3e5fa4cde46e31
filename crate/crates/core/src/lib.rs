//! Bounded viewer runtime and benchmark harness for full-study imaging
//! agents: study packages, a synthetic study generator, a deterministic
//! viewer, expert tools, the tool bridge, hash-chained audit traces, the
//! episode runtime and scoring.

pub mod bridge;
pub mod canonical;
pub mod runtime;
pub mod scoring;
pub mod study;
pub mod synth;
pub mod tools;
pub mod trace;
pub mod viewer;

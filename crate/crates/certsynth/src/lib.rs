//! Synthesis of feedforward and feedback controllers for switched stochastic
//! linear systems under metric temporal logic specifications, with
//! certificate-backed probability bounds and Monte Carlo verification.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`sysmodel`] describes the switched system and its schedule;
//!    [`powergrid`] builds the shipped frequency-regulation case studies.
//! 2. [`bisim`] constructs quadratic divergence certificates per mode and
//!    derives the guarantee offsets that tighten MTL predicate bounds.
//! 3. [`synth`] encodes the tightened fragment formula as a linear program
//!    over the discretized nominal trajectory ([`lp`] solves it).
//! 4. [`feedback`] turns a library of nominal solutions into a lookup
//!    feedback law.
//! 5. [`mcsim`] verifies controllers by stochastic simulation; [`mtl`]
//!    scores every trace.

pub mod bisim;
pub mod cli;
pub mod feedback;
pub mod lp;
pub mod mcsim;
pub mod mtl;
pub mod numkernel;
pub mod powergrid;
pub mod synth;
pub mod sysmodel;

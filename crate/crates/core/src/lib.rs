//! Local quantum annealing (LQA) for dense Ising problems, with a
//! deep-unfolding trainer for per-step step sizes and coupling strengths,
//! baseline tuners and an experiment harness.

pub mod adam;
pub mod bench;
pub mod error;
pub mod io;
pub mod ising;
pub mod lqa;
pub mod rng;
pub mod search;
pub mod selftest;
pub mod train;

pub use error::{Error, Result};

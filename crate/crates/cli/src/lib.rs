//! `rowtag` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 security fault,
//! 3 result differs from the workload's `expected` section, 4 the verifier
//! found a failing trial.

mod app;
pub mod bundled;

pub use app::{run, EXIT_COUNTEREXAMPLE, EXIT_MISMATCH, EXIT_OK, EXIT_SECURITY, EXIT_USAGE};

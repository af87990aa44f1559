//! Library surface of the `ule` command-line tool.
//!
//! The binary in `main.rs` is a thin argument parser; everything it does is
//! reachable from here so integration tests (and other tools) can drive the
//! same pipelines in-process:
//!
//! * [`config`] — the experiment TOML, flag overrides, and validation.
//! * [`ops`] — one function per subcommand (craft / train / eval / matrix /
//!   mix-study).
//! * [`report`] — aggregation across finished runs.
//! * [`suite`] — the canned experiment grids.
//! * [`plot`] — dependency-free PNG charts and perturbation sheets.

pub mod config;
pub mod ops;
pub mod plot;
pub mod report;
pub mod suite;

/// Process exit codes, stable across releases so scripts can branch on them.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const MISSING_ARTIFACT: i32 = 3;
    pub const NO_CONVERGENCE: i32 = 4;
    pub const DIVERGED: i32 = 5;
}

/// Map an error to its documented exit code.
pub fn exit_code(err: &ule_core::Error) -> i32 {
    use ule_core::Error;
    match err {
        Error::Config(_) => exit::CONFIG,
        Error::Load { .. }
        | Error::MissingDeltas(_)
        | Error::Integrity { .. }
        | Error::Version { .. } => exit::MISSING_ARTIFACT,
        Error::Diverged { .. } => exit::DIVERGED,
        _ => exit::OTHER,
    }
}

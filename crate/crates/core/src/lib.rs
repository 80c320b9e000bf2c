//! Compressible viscous fluid under a periodic elastic beam that may touch the
//! floor: a Lie-splitting penalty scheme on an extended rectangle, with
//! diagnostics for the energy inequality, the contact inequality, detachment
//! bounds and a randomized check of the supporting functional inequalities.

// `!(x > 0.0)` is used on purpose so that NaN fails parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beam;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod fluid;
pub mod grid;
pub mod io;
pub mod lemmas;
pub mod scenarios;

pub use error::{Error, Result};

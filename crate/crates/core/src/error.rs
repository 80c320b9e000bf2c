//! Error type shared by solvers, diagnostics and IO.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A graph or sample point left the extended rectangle.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// A parameter bundle violated one of its invariants.
    #[error("invalid parameter `{name}`: {msg}")]
    InvalidParam { name: &'static str, msg: String },

    /// Non-finite values appeared during stepping.
    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("CFL violation: {0}")]
    Cfl(String),

    /// The beam left the admissible band below M/2.
    #[error(
        "max |eta| = {max_eta:.6} exceeds M/2 = {half:.6} at t = {t:.6}; \
         the a-priori bound ||eta||_inf <= C(1+T) needs more headroom, enlarge height_M"
    )]
    EtaExceedsHeadroom { max_eta: f64, half: f64, t: f64 },

    #[error("bound vacuous for these parameters (denominator {0:e} <= 0)")]
    BoundVacuous(f64),

    #[error("[{section}] {key}: {msg}")]
    Config { section: String, key: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn param(name: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidParam { name, msg: msg.into() }
    }
}

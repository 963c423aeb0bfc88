use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter set violates its own invariants (bounds, ranges, counts).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numeric input lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("nodes {0} and {1} are not linked")]
    NoLink(usize, usize),

    #[error("node id {0} out of range")]
    NodeOutOfRange(usize),

    #[error("attack schedule targets protected node {0}")]
    ProtectedTarget(usize),

    #[error("no connected topology after {0} attempts; check area against o_min/o_max")]
    Connectivity(usize),

    #[error("destination {dest} unreachable from source {origin}")]
    Unreachable { origin: usize, dest: usize },

    #[error("illegal action: {from} -> {to} is not a live link")]
    IllegalAction { from: usize, to: usize },

    #[error("no valid actions at node {0}")]
    DeadEnd(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid codec parameter: {0}")]
    InvalidParameter(String),
    #[error("field GF(2^{bits}) too small for code length {n} (max {max})")]
    FieldTooSmall { n: usize, bits: u32, max: usize },
    #[error("cannot invert zero")]
    ZeroInverse,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("insufficient symbols: have {have}, need {need}")]
    InsufficientSymbols { have: usize, need: usize },
    #[error("singular decoding system (generator is not MDS)")]
    Singular,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LtError {
    #[error("invalid degree distribution parameter: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("missing intermediates {0:?}")]
    MissingIntermediates(BTreeSet<u32>),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("pool holds {have} blocks, need {need}")]
    NotReady { have: usize, need: usize },
    #[error("group member {0} is not in the pool")]
    NotInPool(u64),
    #[error("invalid chain config: {0}")]
    Config(String),
    #[error("missing original block at height {0}")]
    MissingBlock(u64),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SizingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no group size meets target failure probability {zeta:e} at N={nodes}")]
    Infeasible { zeta: f64, nodes: usize },
    #[error("failure table does not cover N={0} or below")]
    Uncovered(usize),
    #[error("failure table parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Lt(#[from] LtError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}: {msg}")]
    Syntax {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("invalid value for `{key}`: {msg}")]
    InvalidValue { key: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("network died at epoch {epoch}: no alive nodes left")]
    NetworkDeath { epoch: u64 },
    #[error("sizing infeasible for {epochs} consecutive epochs (last at epoch {epoch})")]
    SizingStalled { epoch: u64, epochs: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Lt(#[from] LtError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

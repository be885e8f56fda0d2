// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} elements, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("offsets not strictly increasing at index {index}")]
    NonMonotoneOffsets { index: usize },

    #[error("invalid activation file: {0}")]
    InvalidFile(String),

    #[error("expected a {expected} file, got {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("example {index} has no tokens")]
    EmptyExample { index: usize },

    #[error("question span [{start}, {end}) of example {index} outside 0..{n_tokens}")]
    SpanOutOfRange {
        index: usize,
        start: usize,
        end: usize,
        n_tokens: usize,
    },

    #[error("metadata lists {meta} examples but the activation file has {file}")]
    CountMismatch { meta: usize, file: usize },

    #[error("unknown split {0:?}")]
    UnknownSplit(String),

    #[error("invalid metadata: {0}")]
    InvalidMeta(String),

    #[error("labels contain a single class")]
    SingleClass,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("k = {k} exceeds the maximum {max} for this data")]
    KTooLarge { k: usize, max: usize },

    #[error("direction space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("zero vector")]
    ZeroVector,

    #[error("constant score vector: rank correlation undefined")]
    ConstantScores,

    #[error("tail fraction {p} of {n} examples selects nothing")]
    EmptyTail { p: f64, n: usize },

    #[error("score vectors do not cover the same ids: {0}")]
    IdMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("join failure: {0}")]
    Join(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),
}

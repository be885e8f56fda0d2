// SPDX-License-Identifier: MIT OR Apache-2.0

//! # probekit-core
//!
//! Numerical core for probing sequence representations of language models
//! with linear directions: pooling of token-level hidden states, PCA
//! subspaces, class-mean and trained linear probes, rank-agreement metrics,
//! subspace alignment, and steering-vector arithmetic.
//!
//! The crate is `no_std` and needs only `alloc`. Reading and writing the
//! on-disk formats, the CLI and threading live in the `probekit` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod activation;
pub mod alignment;
pub mod direction;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pca;
pub mod pipeline;
pub mod pooling;
pub mod probes;
pub mod steering;

pub use activation::{
    join, ActivationFile, ActivationKind, DatasetMeta, ExampleMeta, Label, LabeledMatrix, Split,
};
pub use direction::{DirectionSpace, ProbeDirection, ProbeKind};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use pca::{fit_pca, map_back, PcaFit, PcaModel};
pub use pooling::{pool, PoolingSpec};
pub use probes::{ScoreVector, TrainConfig};

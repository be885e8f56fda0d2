// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats, synthetic data, experiment orchestration and the
//! `probekit` command line, on top of `probekit-core`.

pub use probekit_core as core;

pub mod cli;
pub mod error;
pub mod experiment;
pub mod model_io;
pub mod report;
pub mod store;
pub mod synth;
pub mod workspace;

pub use error::{Error, Result};

// SPDX-License-Identifier: MIT OR Apache-2.0

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ProbeKind {
    DiffMean,
    Logistic,
    Hinge,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 3] = [ProbeKind::DiffMean, ProbeKind::Logistic, ProbeKind::Hinge];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::DiffMean => "diffmean",
            ProbeKind::Logistic => "logistic",
            ProbeKind::Hinge => "hinge",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffmean" => Ok(ProbeKind::DiffMean),
            "logistic" => Ok(ProbeKind::Logistic),
            "hinge" => Ok(ProbeKind::Hinge),
            other => Err(Error::InvalidConfig(format!(
                "unknown probe kind {other:?}"
            ))),
        }
    }
}

/// The coordinate system a direction's weights live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "space", content = "dim", rename_all = "lowercase")
)]
pub enum DirectionSpace {
    /// `k` PCA coordinates.
    Pca(usize),
    /// The full `d`-dimensional hidden space.
    Embedding(usize),
}

impl DirectionSpace {
    pub fn dim(self) -> usize {
        match self {
            DirectionSpace::Pca(k) | DirectionSpace::Embedding(k) => k,
        }
    }
}

impl fmt::Display for DirectionSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectionSpace::Pca(k) => write!(f, "pca({k})"),
            DirectionSpace::Embedding(d) => write!(f, "embedding({d})"),
        }
    }
}

/// An affine scorer `s(x) = w.x + b` and where it came from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeDirection {
    pub w: Vec<f64>,
    pub bias: f64,
    pub space: DirectionSpace,
    pub kind: ProbeKind,
    pub layer: u32,
    pub source_setting: String,
}

impl ProbeDirection {
    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.space.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.dim(),
                found: self.w.len(),
            });
        }
        if !self.bias.is_finite() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe direction"));
        }
        Ok(())
    }

    pub fn negated(&self) -> ProbeDirection {
        ProbeDirection {
            w: self.w.iter().map(|v| -v).collect(),
            bias: -self.bias,
            ..self.clone()
        }
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering vectors built from hidden-space probe directions, the additive
//! update `h' = h + alpha * v`, and aggregation of judge ratings into
//! alpha-sweep curves.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::activation::Label;
use crate::direction::{DirectionSpace, ProbeDirection, ProbeKind};
use crate::error::{Error, Result};
use crate::linalg::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Normalization {
    #[default]
    Raw,
    Unit,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Raw => "raw",
            Normalization::Unit => "unit",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Normalization::Raw),
            "unit" => Ok(Normalization::Unit),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SteeringSource {
    pub kind: ProbeKind,
    pub probe_layer: u32,
    pub setting: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub v: Vec<f64>,
    pub layer: u32,
    pub source: SteeringSource,
    pub normalization: Normalization,
}

/// Takes the direction's weights (bias dropped), optionally rescaled to
/// unit norm. The direction must already be in the hidden space.
pub fn build_steering_vector(
    dir: &ProbeDirection,
    layer: u32,
    normalization: Normalization,
) -> Result<SteeringVector> {
    if !matches!(dir.space, DirectionSpace::Embedding(_)) {
        return Err(Error::SpaceMismatch(format!(
            "steering needs a hidden-space direction, got {} (map_back first)",
            dir.space
        )));
    }
    dir.validate()?;
    let n = norm(&dir.w);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    let v = match normalization {
        Normalization::Raw => dir.w.clone(),
        Normalization::Unit => dir.w.iter().map(|x| x / n).collect(),
    };
    Ok(SteeringVector {
        v,
        layer,
        source: SteeringSource {
            kind: dir.kind,
            probe_layer: dir.layer,
            setting: dir.source_setting.clone(),
        },
        normalization,
    })
}

/// `h + alpha * v`, elementwise.
pub fn apply_steering(h: &[f64], v: &SteeringVector, alpha: f64) -> Result<Vec<f64>> {
    if h.len() != v.v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.v.len(),
            found: h.len(),
        });
    }
    Ok(h.iter().zip(&v.v).map(|(a, b)| a + alpha * b).collect())
}

/// One judge rating. `score` is `None` when the rating could not be parsed
/// or fell outside 1..=10.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeRow {
    pub id: String,
    pub alpha: f64,
    pub layer: u32,
    pub score: Option<u8>,
}

/// One steered generation and the label of the context it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRow {
    pub id: String,
    pub alpha: f64,
    pub layer: u32,
    pub group: Label,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlphaSweepRow {
    pub layer: u32,
    pub alpha: f64,
    pub group: Label,
    pub mean_score: f64,
    pub n: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AlphaSweepResult {
    pub rows: Vec<AlphaSweepRow>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct AlphaKey(u64);

impl AlphaKey {
    /// Orders like `f64::total_cmp`; `-0.0` is folded into `0.0`.
    fn new(alpha: f64) -> Self {
        let a = if alpha == 0.0 { 0.0 } else { alpha };
        let bits = a.to_bits();
        let ordered = if bits >> 63 == 1 {
            !bits
        } else {
            bits | (1 << 63)
        };
        AlphaKey(ordered)
    }
}

/// Groups ratings by `(layer, alpha, context label)` and averages the
/// valid ones. Invalid ratings are counted in `dropped`.
pub fn aggregate_scores(judge: &[JudgeRow], gens: &[GenerationRow]) -> Result<AlphaSweepResult> {
    let mut by_key: BTreeMap<(&str, AlphaKey, u32), Label> = BTreeMap::new();
    for g in gens {
        if !g.alpha.is_finite() {
            return Err(Error::NonFinite("generation alpha"));
        }
        if by_key
            .insert((g.id.as_str(), AlphaKey::new(g.alpha), g.layer), g.group)
            .is_some()
        {
            return Err(Error::Join(format!(
                "duplicate generation (id {:?}, alpha {}, layer {})",
                g.id, g.alpha, g.layer
            )));
        }
    }
    // (sum, n, dropped, alpha)
    type Acc = (u64, usize, usize, f64);
    let mut groups: BTreeMap<(u32, AlphaKey, Label), Acc> = BTreeMap::new();
    for j in judge {
        let group = by_key
            .get(&(j.id.as_str(), AlphaKey::new(j.alpha), j.layer))
            .ok_or_else(|| {
                Error::Join(format!(
                    "judge row (id {:?}, alpha {}, layer {}) has no generation",
                    j.id, j.alpha, j.layer
                ))
            })?;
        let alpha = if j.alpha == 0.0 { 0.0 } else { j.alpha };
        let e = groups
            .entry((j.layer, AlphaKey::new(j.alpha), *group))
            .or_insert((0, 0, 0, alpha));
        match j.score {
            Some(s @ 1..=10) => {
                e.0 += u64::from(s);
                e.1 += 1;
            }
            _ => e.2 += 1,
        }
    }
    let rows = groups
        .into_iter()
        .map(|((layer, _, group), (sum, n, dropped, alpha))| {
            if n == 0 {
                return Err(Error::EmptyGroup(format!(
                    "layer {layer}, alpha {alpha}, {} contexts: no valid scores",
                    group.as_str()
                )));
            }
            Ok(AlphaSweepRow {
                layer,
                alpha,
                group,
                mean_score: sum as f64 / n as f64,
                n,
                dropped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlphaSweepResult { rows })
}

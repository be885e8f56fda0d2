// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sequence-level pooling of token-level activations.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::activation::{ActivationFile, ActivationKind, DatasetMeta, Split, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolingSpec {
    /// Hidden state of the final content token.
    LastToken,
    /// Arithmetic mean over every token.
    MeanAll,
    /// Mean over the final `min(k, T)` tokens.
    LastK(usize),
    /// Mean over the tokens of the recorded question span.
    QuestionSpanMean,
}

impl PoolingSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PoolingSpec::LastK(0) => Err(Error::InvalidConfig("last_k needs k >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Short tag used in setting names and file names.
    pub fn tag(&self) -> String {
        match self {
            PoolingSpec::LastToken => "last".into(),
            PoolingSpec::MeanAll => "mean".into(),
            PoolingSpec::LastK(k) => format!("last{k}"),
            PoolingSpec::QuestionSpanMean => "span".into(),
        }
    }
}

impl fmt::Display for PoolingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for PoolingSpec {
    type Err = Error;

    /// Accepts `last`, `mean`, `span`, and `lastK` (e.g. `last5`).
    fn from_str(s: &str) -> Result<Self> {
        let spec = match s {
            "last" | "last_token" => PoolingSpec::LastToken,
            "mean" | "mean_all" => PoolingSpec::MeanAll,
            "span" | "question_span_mean" => PoolingSpec::QuestionSpanMean,
            other => {
                let k = other
                    .strip_prefix("last")
                    .and_then(|k| k.trim_start_matches('_').parse::<usize>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown pooling {other:?}")))?;
                PoolingSpec::LastK(k)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Pools a token-level file into an example-level file.
///
/// `split` is only consulted when the file holds a single split of a
/// larger dataset (see [`DatasetMeta::rows_for`]).
pub fn pool(
    file: &ActivationFile,
    meta: &DatasetMeta,
    split: Option<Split>,
    spec: PoolingSpec,
) -> Result<ActivationFile> {
    spec.validate()?;
    if file.kind != ActivationKind::TokenLevel {
        return Err(Error::WrongKind {
            expected: ActivationKind::TokenLevel.name(),
            found: file.kind.name(),
        });
    }
    let rows = meta.rows_for(file.n_examples(), split)?;
    let d = file.dim();
    let mut out = Vec::with_capacity(file.n_examples() * d);
    let mut acc = vec![0.0f64; d];
    for (i, ex) in rows.iter().enumerate() {
        let t = file.n_tokens(i);
        if t == 0 {
            return Err(Error::EmptyExample { index: i });
        }
        if ex.n_tokens != t {
            return Err(Error::InvalidMeta(format!(
                "example {:?} records {} tokens but the file holds {t}",
                ex.id, ex.n_tokens
            )));
        }
        let block = file.block(i);
        let (start, end) = match spec {
            PoolingSpec::LastToken => {
                out.extend_from_slice(&block[(t - 1) * d..]);
                continue;
            }
            PoolingSpec::MeanAll => (0, t),
            PoolingSpec::LastK(k) => (t - k.min(t), t),
            PoolingSpec::QuestionSpanMean => {
                let (s, e) = ex.question_span;
                if s >= e || e > t {
                    return Err(Error::SpanOutOfRange {
                        index: i,
                        start: s,
                        end: e,
                        n_tokens: t,
                    });
                }
                (s, e)
            }
        };
        acc.iter_mut().for_each(|a| *a = 0.0);
        for tok in block[start * d..end * d].chunks_exact(d) {
            for (a, &v) in acc.iter_mut().zip(tok) {
                *a += f64::from(v);
            }
        }
        let count = (end - start) as f64;
        out.extend(acc.iter().map(|a| (a / count) as f32));
    }
    Ok(ActivationFile {
        version: FORMAT_VERSION,
        kind: ActivationKind::ExampleLevel,
        layer: file.layer,
        dim: file.dim,
        n_examples: file.n_examples,
        offsets: None,
        data: out,
    })
}

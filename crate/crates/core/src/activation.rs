// SPDX-License-Identifier: MIT OR Apache-2.0

//! In-memory activation dumps, dataset metadata, and the join that turns
//! them into labelled design matrices.
//!
//! An [`ActivationFile`] holds one layer of hidden states for one dataset
//! split. Token-level files carry a ragged block of rows per example
//! delimited by `offsets`; example-level files carry exactly one row per
//! example and no offsets. The byte layout lives in the std crate.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: [u8; 4] = *b"RQAC";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    TokenLevel = 0,
    ExampleLevel = 1,
}

impl ActivationKind {
    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Self::TokenLevel),
            1 => Some(Self::ExampleLevel),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TokenLevel => "token_level",
            Self::ExampleLevel => "example_level",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationFile {
    pub version: u32,
    pub kind: ActivationKind,
    pub layer: u32,
    pub dim: u32,
    pub n_examples: u32,
    /// Row offsets, `n_examples + 1` entries. Token-level only.
    pub offsets: Option<Vec<u64>>,
    /// Row-major `[total_rows x dim]`.
    pub data: Vec<f32>,
}

impl ActivationFile {
    /// Example-level file from one row per example.
    pub fn example_level(layer: u32, dim: u32, data: Vec<f32>) -> Result<Self> {
        let n = if dim == 0 {
            0
        } else {
            data.len() / dim as usize
        };
        let f = Self {
            version: FORMAT_VERSION,
            kind: ActivationKind::ExampleLevel,
            layer,
            dim,
            n_examples: n as u32,
            offsets: None,
            data,
        };
        f.validate()?;
        Ok(f)
    }

    /// Token-level file from per-example token blocks.
    pub fn token_level(layer: u32, dim: u32, offsets: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        let f = Self {
            version: FORMAT_VERSION,
            kind: ActivationKind::TokenLevel,
            layer,
            dim,
            n_examples: offsets.len().saturating_sub(1) as u32,
            offsets: Some(offsets),
            data,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples as usize
    }

    pub fn total_rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim as usize
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let d = self.dim();
        &self.data[r * d..(r + 1) * d]
    }

    /// Token rows of example `i` (a single row for example-level files).
    pub fn block(&self, i: usize) -> &[f32] {
        let d = self.dim();
        match &self.offsets {
            Some(off) => &self.data[off[i] as usize * d..off[i + 1] as usize * d],
            None => self.row(i),
        }
    }

    pub fn n_tokens(&self, i: usize) -> usize {
        match &self.offsets {
            Some(off) => (off[i + 1] - off[i]) as usize,
            None => 1,
        }
    }

    /// Checks every structural invariant, including finiteness of the data.
    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        if self.dim == 0 {
            return Err(Error::InvalidFile("hidden dim must be positive".into()));
        }
        let d = self.dim as usize;
        if !self.data.len().is_multiple_of(d) {
            return Err(Error::InvalidFile(format!(
                "data length {} is not a multiple of dim {d}",
                self.data.len()
            )));
        }
        let total = self.data.len() / d;
        match (self.kind, &self.offsets) {
            (ActivationKind::ExampleLevel, Some(_)) => {
                return Err(Error::InvalidFile(
                    "example-level files must not carry offsets".into(),
                ))
            }
            (ActivationKind::ExampleLevel, None) => {
                if total != self.n_examples as usize {
                    return Err(Error::InvalidFile(format!(
                        "example-level file has {total} rows for {} examples",
                        self.n_examples
                    )));
                }
            }
            (ActivationKind::TokenLevel, None) => {
                return Err(Error::InvalidFile("token-level files need offsets".into()))
            }
            (ActivationKind::TokenLevel, Some(off)) => {
                check_offsets(off, self.n_examples as usize, total as u64)?;
            }
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activation data"));
        }
        Ok(())
    }

    /// Example-level rows widened to `f64`.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.kind != ActivationKind::ExampleLevel {
            return Err(Error::WrongKind {
                expected: ActivationKind::ExampleLevel.name(),
                found: self.kind.name(),
            });
        }
        Matrix::from_vec(
            self.n_examples(),
            self.dim(),
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

pub(crate) fn check_offsets(off: &[u64], n_examples: usize, total_rows: u64) -> Result<()> {
    if off.len() != n_examples + 1 {
        return Err(Error::InvalidFile(format!(
            "expected {} offsets, found {}",
            n_examples + 1,
            off.len()
        )));
    }
    if off[0] != 0 {
        return Err(Error::InvalidFile("offsets[0] must be 0".into()));
    }
    for (i, w) in off.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonMonotoneOffsets { index: i + 1 });
        }
    }
    if off[n_examples] != total_rows {
        return Err(Error::InvalidFile(format!(
            "last offset {} does not match {total_rows} rows",
            off[n_examples]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Label {
    Rhetorical,
    Informational,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Rhetorical
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Rhetorical => "rhetorical",
            Label::Informational => "informational",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExampleMeta {
    pub id: String,
    pub label: Label,
    pub split: Split,
    pub n_tokens: usize,
    /// Half-open token interval `[start, end)`.
    pub question_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetMeta {
    pub dataset_name: String,
    pub tokenizer_id: String,
    pub model_id: String,
    pub n_layers: usize,
    pub examples: Vec<ExampleMeta>,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, ex) in self.examples.iter().enumerate() {
            if !seen.insert(ex.id.as_str()) {
                return Err(Error::InvalidMeta(format!("duplicate id {:?}", ex.id)));
            }
            let (start, end) = ex.question_span;
            if start >= end || end > ex.n_tokens {
                return Err(Error::SpanOutOfRange {
                    index: i,
                    start,
                    end,
                    n_tokens: ex.n_tokens,
                });
            }
        }
        Ok(())
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }

    /// The metadata rows that line up with a file of `n_file` examples.
    ///
    /// A file may hold the whole dataset (rows in metadata order) or a
    /// single split (rows in metadata order within that split). `split`
    /// disambiguates the second case.
    pub fn rows_for(&self, n_file: usize, split: Option<Split>) -> Result<Vec<&ExampleMeta>> {
        if n_file == self.examples.len() {
            return Ok(self.examples.iter().collect());
        }
        if let Some(s) = split {
            let rows: Vec<_> = self.examples.iter().filter(|e| e.split == s).collect();
            if rows.len() == n_file {
                return Ok(rows);
            }
        }
        Err(Error::CountMismatch {
            meta: self.examples.len(),
            file: n_file,
        })
    }
}

/// Design matrix with binary labels (`true` = rhetorical) and example ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub x: Matrix,
    pub y: Vec<bool>,
    pub ids: Vec<String>,
}

impl LabeledMatrix {
    pub fn new(x: Matrix, y: Vec<bool>, ids: Vec<String>) -> Result<Self> {
        if x.rows() != y.len() || y.len() != ids.len() {
            return Err(Error::Shape {
                expected: x.rows(),
                found: y.len().min(ids.len()),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("design matrix"));
        }
        Ok(Self { x, y, ids })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn n_positive(&self) -> usize {
        self.y.iter().filter(|&&b| b).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.n_positive();
        p > 0 && p < self.len()
    }

    /// Same labels and ids with a different design matrix.
    pub fn with_x(&self, x: Matrix) -> Result<Self> {
        Self::new(x, self.y.clone(), self.ids.clone())
    }
}

/// Restricts an example-level file to one split, in metadata order.
pub fn join(file: &ActivationFile, meta: &DatasetMeta, split: Split) -> Result<LabeledMatrix> {
    if file.kind != ActivationKind::ExampleLevel {
        return Err(Error::WrongKind {
            expected: ActivationKind::ExampleLevel.name(),
            found: file.kind.name(),
        });
    }
    let rows = meta.rows_for(file.n_examples(), Some(split))?;
    let d = file.dim();
    let mut data = Vec::new();
    let mut y = Vec::new();
    let mut ids = Vec::new();
    for (i, ex) in rows.iter().enumerate() {
        if ex.split != split {
            continue;
        }
        data.extend(file.row(i).iter().map(|&v| f64::from(v)));
        y.push(ex.label.is_positive());
        ids.push(ex.id.clone());
    }
    LabeledMatrix::new(Matrix::from_vec(y.len(), d, data)?, y, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ex(id: &str, label: Label, split: Split) -> ExampleMeta {
        ExampleMeta {
            id: id.into(),
            label,
            split,
            n_tokens: 4,
            question_span: (1, 4),
        }
    }

    fn meta(examples: Vec<ExampleMeta>) -> DatasetMeta {
        DatasetMeta {
            dataset_name: "toy".into(),
            tokenizer_id: "tok".into(),
            model_id: "m".into(),
            n_layers: 1,
            examples,
        }
    }

    #[test]
    fn example_level_with_offsets_rejected() {
        let f = ActivationFile {
            version: FORMAT_VERSION,
            kind: ActivationKind::ExampleLevel,
            layer: 0,
            dim: 2,
            n_examples: 1,
            offsets: Some(vec![0, 1]),
            data: vec![1.0, 2.0],
        };
        assert!(matches!(f.validate(), Err(Error::InvalidFile(_))));
    }

    #[test]
    fn token_level_offset_rules() {
        assert!(ActivationFile::token_level(0, 1, vec![0, 1, 3], vec![1.0, 2.0, 3.0]).is_ok());
        assert!(matches!(
            ActivationFile::token_level(0, 1, vec![0, 2, 2, 3], vec![1.0, 2.0, 3.0]),
            Err(Error::NonMonotoneOffsets { index: 2 })
        ));
        assert!(ActivationFile::token_level(0, 1, vec![1, 3], vec![1.0, 2.0, 3.0]).is_err());
        assert!(ActivationFile::token_level(0, 1, vec![0, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(ActivationFile::example_level(0, 0, vec![]).is_err());
    }

    #[test]
    fn non_finite_data_is_an_error() {
        let err = ActivationFile::example_level(0, 2, vec![1.0, f32::NAN]).unwrap_err();
        assert_eq!(err, Error::NonFinite("activation data"));
    }

    #[test]
    fn join_restricts_to_split() {
        let m = meta(vec![
            ex("a", Label::Rhetorical, Split::Train),
            ex("b", Label::Informational, Split::Train),
            ex("c", Label::Rhetorical, Split::Test),
        ]);
        let f = ActivationFile::example_level(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let lm = join(&f, &m, Split::Train).unwrap();
        assert_eq!(lm.len(), 2);
        assert_eq!(lm.ids, vec!["a", "b"]);
        assert_eq!(lm.y, vec![true, false]);
        assert_eq!(lm.x.row(1), &[3.0, 4.0]);
        let test = join(&f, &m, Split::Test).unwrap();
        assert_eq!(test.x.row(0), &[5.0, 6.0]);
    }

    #[test]
    fn join_accepts_split_only_file() {
        let m = meta(vec![
            ex("a", Label::Rhetorical, Split::Train),
            ex("b", Label::Informational, Split::Test),
            ex("c", Label::Informational, Split::Train),
        ]);
        let f = ActivationFile::example_level(0, 1, vec![7.0, 8.0]).unwrap();
        let lm = join(&f, &m, Split::Train).unwrap();
        assert_eq!(lm.ids, vec!["a", "c"]);
        assert_eq!(lm.x.as_slice(), &[7.0, 8.0]);
    }

    #[test]
    fn join_count_mismatch() {
        let m = meta(vec![
            ex("a", Label::Rhetorical, Split::Train),
            ex("b", Label::Informational, Split::Train),
            ex("c", Label::Rhetorical, Split::Train),
            ex("d", Label::Rhetorical, Split::Test),
        ]);
        let f = ActivationFile::example_level(0, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(
            join(&f, &m, Split::Train),
            Err(Error::CountMismatch { meta: 4, file: 2 })
        );
    }

    #[test]
    fn rq_shaped_validation_split() {
        let mut examples = Vec::new();
        for (split, n) in [
            (Split::Train, 3200),
            (Split::Validation, 797),
            (Split::Test, 1000),
        ] {
            for i in 0..n {
                let label = if i % 2 == 0 {
                    Label::Rhetorical
                } else {
                    Label::Informational
                };
                examples.push(ex(&format!("{split}-{i}"), label, split));
            }
        }
        let m = meta(examples);
        let f = ActivationFile::example_level(0, 1, vec![0.5; 4997]).unwrap();
        assert_eq!(join(&f, &m, Split::Validation).unwrap().len(), 797);
    }

    #[test]
    fn unknown_split_name() {
        assert_eq!(
            "dev".parse::<Split>(),
            Err(Error::UnknownSplit("dev".into()))
        );
        assert_eq!("validation".parse::<Split>(), Ok(Split::Validation));
    }

    #[test]
    fn meta_validation() {
        let mut m = meta(vec![ex("a", Label::Rhetorical, Split::Train)]);
        assert!(m.validate().is_ok());
        m.examples[0].question_span = (2, 5);
        assert!(matches!(m.validate(), Err(Error::SpanOutOfRange { .. })));
        m.examples[0].question_span = (0, 1);
        m.examples.push(ex("a", Label::Informational, Split::Test));
        assert!(matches!(m.validate(), Err(Error::InvalidMeta(_))));
    }
}

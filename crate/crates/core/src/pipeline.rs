// SPDX-License-Identifier: MIT OR Apache-2.0

//! In-memory experiment steps: fit one layer (PCA plus three probes),
//! evaluate it, compare probes, transfer directions between datasets, and
//! rank examples. File discovery, concurrency and serialisation live in the
//! std crate.
//!
//! Every test-set score is computed from the hidden-space form of a
//! direction (PCA directions are mapped back first), so in-domain, agreement
//! and transfer numbers share one scoring path and self-transfer reproduces
//! in-domain values exactly.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::activation::LabeledMatrix;
use crate::direction::{DirectionSpace, ProbeDirection, ProbeKind};
use crate::error::{Error, Result};
use crate::metrics::{auroc, cosine, jaccard_tails, spearman, spearman_bootstrap, tail_size};
use crate::pca::{fit_pca, map_back, PcaFit};
use crate::pooling::PoolingSpec;
use crate::probes::{
    diffmean, score_labeled, train_hinge, train_logistic, train_tuned, ScoreVector, TrainConfig,
    TrainedProbe,
};

pub const DEFAULT_TAIL_P: f64 = 0.2;
pub const RANK_LENGTH_PS: [f64; 2] = [0.01, 0.03];
pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub dataset: String,
    pub model_id: String,
    pub pooling: PoolingSpec,
    /// Number of PCA components; 0 probes the raw hidden space.
    pub pca_k: usize,
    pub layers: Vec<u32>,
    pub n_layers: usize,
}

impl Setting {
    pub fn validate(&self) -> Result<()> {
        self.pooling.validate()?;
        if let Some(&l) = self.layers.iter().find(|&&l| l as usize >= self.n_layers) {
            return Err(Error::InvalidConfig(format!(
                "layer {l} outside 0..{}",
                self.n_layers
            )));
        }
        Ok(())
    }

    /// `dataset/model/pooling/k` identifier used in reports.
    pub fn name(&self) -> String {
        let space = if self.pca_k == 0 {
            "raw".to_string()
        } else {
            format!("pca{}", self.pca_k)
        };
        format!(
            "{}/{}/{}/{}",
            self.dataset, self.model_id, self.pooling, space
        )
    }

    pub fn normalized_layer(&self, layer: u32) -> f64 {
        normalized_layer(layer, self.n_layers)
    }
}

/// `layer / (n_layers - 1)`; a single-layer model maps to 0.
pub fn normalized_layer(layer: u32, n_layers: usize) -> f64 {
    if n_layers <= 1 {
        0.0
    } else {
        f64::from(layer) / (n_layers - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Pick lambda from the grid by validation AUROC.
    pub tune: bool,
    pub tail_p: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            tune: false,
            tail_p: DEFAULT_TAIL_P,
            bootstrap_resamples: DEFAULT_BOOTSTRAP,
            bootstrap_seed: 0,
        }
    }
}

/// Hidden-space representations of one layer, split three ways.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerData {
    pub train: LabeledMatrix,
    pub val: LabeledMatrix,
    pub test: LabeledMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedProbe {
    /// Direction in the coordinates it was trained in.
    pub direction: ProbeDirection,
    /// The same scorer in the hidden space.
    pub embedding: ProbeDirection,
    /// Present for trained probes.
    pub training: Option<TrainedProbe>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerFit {
    pub setting: String,
    pub layer: u32,
    pub pca: Option<PcaFit>,
    pub probes: Vec<FittedProbe>,
}

impl LayerFit {
    pub fn probe(&self, kind: ProbeKind) -> Result<&FittedProbe> {
        self.probes
            .iter()
            .find(|p| p.direction.kind == kind)
            .ok_or_else(|| Error::InvalidConfig(format!("missing {kind} direction")))
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.probes.first().map(|p| p.embedding.w.len())
    }
}

/// Fits PCA on the training split, then the three probes in PCA space
/// (diffMean on train only, trained probes selected on validation).
pub fn fit_layer(
    data: &LayerData,
    setting: &Setting,
    layer: u32,
    cfg: &PipelineConfig,
) -> Result<LayerFit> {
    let name = setting.name();
    let (pca, train, val) = if setting.pca_k > 0 {
        let fit = fit_pca(&data.train, setting.pca_k)?;
        let train = fit.model.transform_labeled(&data.train)?;
        let val = fit.model.transform_labeled(&data.val)?;
        (Some(fit), train, val)
    } else {
        (None, data.train.clone(), data.val.clone())
    };
    let space = match &pca {
        Some(f) => DirectionSpace::Pca(f.model.k()),
        None => DirectionSpace::Embedding(data.train.dim()),
    };

    let mut probes = Vec::with_capacity(3);
    for kind in ProbeKind::ALL {
        let (dir, training) = match kind {
            ProbeKind::DiffMean => (diffmean(&train)?, None),
            _ => {
                let t = if cfg.tune {
                    train_tuned(kind, &train, &val, &cfg.train)?
                } else if kind == ProbeKind::Logistic {
                    train_logistic(&train, &val, &cfg.train)?
                } else {
                    train_hinge(&train, &val, &cfg.train)?
                };
                (t.direction.clone(), Some(t))
            }
        };
        let dir = dir.in_space(space).with_provenance(layer, &name);
        let embedding = match &pca {
            Some(f) => map_back(&dir, &f.model)?,
            None => dir.clone(),
        };
        let training = training.map(|mut t| {
            t.direction = dir.clone();
            t
        });
        probes.push(FittedProbe {
            direction: dir,
            embedding,
            training,
        });
    }
    Ok(LayerFit {
        setting: name,
        layer,
        pca,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportRow {
    pub setting: String,
    pub layer: u32,
    pub normalized_layer: f64,
    pub probe: String,
    pub metric: String,
    pub value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl ReportRow {
    pub fn key(&self) -> (String, u32, String, String) {
        (
            self.setting.clone(),
            self.layer,
            self.probe.clone(),
            self.metric.clone(),
        )
    }
}

/// Metric table plus a free-form provenance block (configs, seeds, hashes,
/// skipped layers).
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub provenance: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; duplicate keys and non-finite values are rejected.
    pub fn push(&mut self, row: ReportRow) -> Result<()> {
        if !row.value.is_finite() {
            return Err(Error::NonFinite("report value"));
        }
        let key = row.key();
        if self.rows.iter().any(|r| r.key() == key) {
            return Err(Error::InvalidConfig(format!(
                "duplicate report key {}/{}/{}/{}",
                key.0, key.1, key.2, key.3
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = ReportRow>) -> Result<()> {
        for r in rows {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: EvalReport) -> Result<()> {
        self.extend(other.rows)?;
        self.provenance.extend(other.provenance);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !r.value.is_finite() {
                return Err(Error::NonFinite("report value"));
            }
            if !seen.insert(r.key()) {
                return Err(Error::InvalidConfig("duplicate report key".into()));
            }
        }
        Ok(())
    }

    pub fn get(&self, setting: &str, layer: u32, probe: &str, metric: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| {
            r.setting == setting && r.layer == layer && r.probe == probe && r.metric == metric
        })
    }

    /// Rows sorted by (setting, layer, probe, metric).
    pub fn sorted(&self) -> EvalReport {
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| r.key());
        EvalReport {
            rows,
            provenance: self.provenance.clone(),
        }
    }
}

struct RowBuilder<'a> {
    setting: &'a str,
    layer: u32,
    normalized: f64,
}

impl RowBuilder<'_> {
    fn row(&self, probe: &str, metric: &str, value: f64) -> ReportRow {
        ReportRow {
            setting: self.setting.into(),
            layer: self.layer,
            normalized_layer: self.normalized,
            probe: probe.into(),
            metric: metric.into(),
            value,
            ci_low: None,
            ci_high: None,
        }
    }
}

/// Test AUROC per probe, plus the validation AUROC of trained probes and
/// the explained-variance ratio of the last PCA component.
pub fn sweep_rows(fit: &LayerFit, test: &LabeledMatrix, normalized: f64) -> Result<Vec<ReportRow>> {
    let rb = RowBuilder {
        setting: &fit.setting,
        layer: fit.layer,
        normalized,
    };
    let mut rows = Vec::new();
    for p in &fit.probes {
        let s = score_labeled(&p.embedding, test)?;
        let kind = p.direction.kind.as_str();
        rows.push(rb.row(kind, "test_auroc", auroc(&s.scores, &test.y)?));
        if let Some(t) = &p.training {
            rows.push(rb.row(kind, "val_auroc", t.validation_auroc));
        }
    }
    if let Some(pca) = &fit.pca {
        let evr = pca.model.explained_variance_ratio();
        if let Some(&last) = evr.last() {
            rows.push(rb.row("pca", "evr_last", last));
            rows.push(rb.row("pca", "evr_cumulative", evr.iter().sum()));
        }
    }
    Ok(rows)
}

/// Test-set scores of every probe of `fit`, in hidden space.
pub fn test_scores(fit: &LayerFit, test: &LabeledMatrix) -> Result<Vec<ScoreVector>> {
    fit.probes
        .iter()
        .map(|p| score_labeled(&p.embedding, test))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn pair_rows(
    rb: &RowBuilder<'_>,
    label: &str,
    dir_a: &ProbeDirection,
    dir_b: &ProbeDirection,
    sa: &ScoreVector,
    sb: &ScoreVector,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::with_capacity(4);
    rows.push(rb.row(label, "cosine", cosine(dir_a, dir_b)?));
    let mut sp = rb.row(label, "spearman", spearman(sa, sb)?);
    if cfg.bootstrap_resamples > 0 {
        if let Some((lo, hi)) =
            spearman_bootstrap(&sa.scores, &sb.scores, cfg.bootstrap_resamples, 0.95, seed)
        {
            sp.ci_low = Some(lo);
            sp.ci_high = Some(hi);
        }
    }
    rows.push(sp);
    let (jt, jb) = jaccard_tails(sa, sb, cfg.tail_p)?;
    rows.push(rb.row(label, "jaccard_top", jt));
    rows.push(rb.row(label, "jaccard_bottom", jb));
    Ok(rows)
}

/// Pairwise cosine, Spearman (with bootstrap band) and tail Jaccard among
/// the three probes of one layer, on the test split.
pub fn within_agreement(
    fit: &LayerFit,
    test: &LabeledMatrix,
    normalized: f64,
    cfg: &PipelineConfig,
) -> Result<Vec<ReportRow>> {
    let rb = RowBuilder {
        setting: &fit.setting,
        layer: fit.layer,
        normalized,
    };
    let kinds = ProbeKind::ALL;
    let mut rows = Vec::new();
    for i in 0..kinds.len() {
        for j in (i + 1)..kinds.len() {
            let a = fit.probe(kinds[i])?;
            let b = fit.probe(kinds[j])?;
            let sa = score_labeled(&a.embedding, test)?;
            let sb = score_labeled(&b.embedding, test)?;
            let label = format!("{}~{}", kinds[i], kinds[j]);
            let seed = cfg.bootstrap_seed ^ (u64::from(fit.layer) << 8) ^ (i * 3 + j) as u64;
            rows.extend(pair_rows(
                &rb,
                &label,
                &a.embedding,
                &b.embedding,
                &sa,
                &sb,
                cfg,
                seed,
            )?);
        }
    }
    Ok(rows)
}

/// Applies `source`'s hidden-space directions to the target test split and
/// compares them with the target's own directions, kind by kind.
pub fn transfer_eval(
    source: &LayerFit,
    target: &LayerFit,
    target_test: &LabeledMatrix,
    normalized: f64,
    cfg: &PipelineConfig,
) -> Result<Vec<ReportRow>> {
    if source.hidden_dim() != target.hidden_dim() || source.hidden_dim() != Some(target_test.dim())
    {
        return Err(Error::DimensionMismatch {
            expected: target_test.dim(),
            found: source.hidden_dim().unwrap_or(0),
        });
    }
    let setting = format!("{}->{}", source.setting, target.setting);
    let rb = RowBuilder {
        setting: &setting,
        layer: target.layer,
        normalized,
    };
    let mut rows = Vec::new();
    for (idx, kind) in ProbeKind::ALL.into_iter().enumerate() {
        let transferred = &source.probe(kind)?.embedding;
        let in_domain = &target.probe(kind)?.embedding;
        let st = score_labeled(transferred, target_test)?;
        let si = score_labeled(in_domain, target_test)?;
        let k = kind.as_str();
        rows.push(rb.row(k, "transfer_auroc", auroc(&st.scores, &target_test.y)?));
        rows.push(rb.row(k, "indomain_auroc", auroc(&si.scores, &target_test.y)?));
        let seed = cfg.bootstrap_seed ^ (u64::from(target.layer) << 8) ^ (0x100 + idx as u64);
        for mut r in pair_rows(&rb, k, transferred, in_domain, &st, &si, cfg, seed)? {
            r.metric = match r.metric.as_str() {
                "cosine" => "cosine_cross".into(),
                "spearman" => "spearman_vs_indomain".into(),
                _ => r.metric,
            };
            rows.push(r);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankEntry {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub rhetorical: bool,
    pub n_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LengthStat {
    pub p: f64,
    pub count: usize,
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankReport {
    pub entries: Vec<RankEntry>,
    pub length_stats: Vec<LengthStat>,
}

/// Ranks examples by score (rank 1 = highest; ties by ascending id) and
/// reports the mean token length of each top-`p` slice.
pub fn rank_report(
    dir: &ProbeDirection,
    data: &LabeledMatrix,
    n_tokens: &[usize],
    ps: &[f64],
) -> Result<RankReport> {
    if n_tokens.len() != data.len() {
        return Err(Error::Shape {
            expected: data.len(),
            found: n_tokens.len(),
        });
    }
    let s = score_labeled(dir, data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        s.scores[b]
            .total_cmp(&s.scores[a])
            .then_with(|| data.ids[a].cmp(&data.ids[b]))
    });
    let entries: Vec<RankEntry> = order
        .iter()
        .enumerate()
        .map(|(r, &i)| RankEntry {
            rank: r + 1,
            id: data.ids[i].clone(),
            score: s.scores[i],
            rhetorical: data.y[i],
            n_tokens: n_tokens[i],
        })
        .collect();
    let length_stats = ps
        .iter()
        .map(|&p| {
            let count = tail_size(p, entries.len())?;
            let total: usize = entries[..count].iter().map(|e| e.n_tokens).sum();
            Ok(LengthStat {
                p,
                count,
                mean_tokens: total as f64 / count as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankReport {
        entries,
        length_stats,
    })
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer sweeps, within-layer probe agreement and cross-dataset transfer
//! over files on disk. Layers run concurrently; a layer that fails is
//! recorded in the report provenance and the run continues.

use std::collections::BTreeMap;

use probekit_core::pipeline::{
    fit_layer, sweep_rows, transfer_eval, within_agreement, EvalReport, LayerData, LayerFit,
    PipelineConfig, ReportRow, Setting,
};
use probekit_core::{PoolingSpec, Split};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::workspace::DataSource;

pub const THREADS_ENV: &str = "PROBEKIT_THREADS";

/// Worker pool sized by `PROBEKIT_THREADS` (rayon's default otherwise).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub pooling: PoolingSpec,
    /// 0 probes the raw hidden space.
    pub pca_k: usize,
    pub cfg: PipelineConfig,
}

impl Experiment {
    pub fn setting(&self, src: &DataSource, layers: &[u32]) -> Setting {
        Setting {
            dataset: src.dataset.clone(),
            model_id: src.meta.model_id.clone(),
            pooling: self.pooling,
            pca_k: self.pca_k,
            layers: layers.to_vec(),
            n_layers: src.meta.n_layers,
        }
    }

    fn provenance(&self) -> BTreeMap<String, String> {
        let t = &self.cfg.train;
        let mut p = BTreeMap::new();
        p.insert("probekit_version".into(), env!("CARGO_PKG_VERSION").into());
        p.insert("pooling".into(), self.pooling.to_string());
        p.insert("pca_k".into(), self.pca_k.to_string());
        p.insert("train.l2_lambda".into(), t.l2_lambda.to_string());
        p.insert("train.max_iters".into(), t.max_iters.to_string());
        p.insert("train.tol".into(), t.tol.to_string());
        p.insert("train.step_size".into(), t.step_size.to_string());
        p.insert("train.seed".into(), t.seed.to_string());
        p.insert("train.tune".into(), self.cfg.tune.to_string());
        p.insert("tail_p".into(), self.cfg.tail_p.to_string());
        p.insert(
            "bootstrap.resamples".into(),
            self.cfg.bootstrap_resamples.to_string(),
        );
        p.insert("bootstrap.seed".into(), self.cfg.bootstrap_seed.to_string());
        p.insert("bootstrap.interval".into(), "percentile 95%".into());
        p
    }
}

/// Fit-time notes worth surfacing: rank-reduced PCA, tied components,
/// trainers that hit `max_iters`.
fn fit_notes(fit: &LayerFit, prefix: &str, out: &mut BTreeMap<String, String>) {
    let l = fit.layer;
    if let Some(pca) = &fit.pca {
        if let Some(req) = pca.requested_k {
            out.insert(
                format!("{prefix}L{l}.pca.k_reduced"),
                format!("requested {req}, fitted {}", pca.model.k()),
            );
        }
        if !pca.tied_components.is_empty() {
            out.insert(
                format!("{prefix}L{l}.pca.tied_components"),
                format!("{:?}", pca.tied_components),
            );
        }
    }
    for p in &fit.probes {
        if let Some(t) = &p.training {
            if !t.converged {
                out.insert(
                    format!("{prefix}L{l}.{}.converged", p.direction.kind),
                    "false".into(),
                );
            }
        }
    }
}

struct LayerOutcome {
    layer: u32,
    rows: Vec<ReportRow>,
    notes: BTreeMap<String, String>,
}

/// Runs `job` per layer on the worker pool and merges the results in layer
/// order. Failed layers become `skipped.L<layer>` provenance entries; if
/// every layer fails the first error is returned.
fn run_layers<F>(layers: &[u32], job: F) -> Result<(EvalReport, Vec<u32>)>
where
    F: Fn(u32) -> Result<LayerOutcome> + Sync,
{
    let pool = thread_pool()?;
    let results: Vec<Result<LayerOutcome>> =
        pool.install(|| layers.par_iter().map(|&l| job(l)).collect());
    let mut report = EvalReport::new();
    let mut done = Vec::new();
    let mut first_err = None;
    for (l, r) in layers.iter().zip(results) {
        match r {
            Ok(o) => {
                report.extend(o.rows)?;
                report.provenance.extend(o.notes);
                done.push(o.layer);
            }
            Err(e) => {
                report
                    .provenance
                    .insert(format!("skipped.L{l}"), e.to_string());
                first_err.get_or_insert(e);
            }
        }
    }
    if done.is_empty() {
        if let Some(e) = first_err {
            return Err(e);
        }
    }
    Ok((report, done))
}

fn fit(
    src: &DataSource,
    exp: &Experiment,
    setting: &Setting,
    layer: u32,
) -> Result<(LayerFit, LayerData)> {
    let data = src.load_layer(layer, exp.pooling)?;
    let fit = fit_layer(&data, setting, layer, &exp.cfg)
        .map_err(|e| Error::data(&src.path(Split::Train, layer), e))?;
    Ok((fit, data))
}

/// Test AUROC per probe and layer (plus validation AUROC and PCA
/// explained-variance rows).
pub fn sweep(src: &DataSource, exp: &Experiment, layers: &[u32]) -> Result<EvalReport> {
    let setting = exp.setting(src, layers);
    setting.validate()?;
    let (mut report, done) = run_layers(layers, |layer| {
        let (f, data) = fit(src, exp, &setting, layer)?;
        let rows = sweep_rows(&f, &data.test, setting.normalized_layer(layer))?;
        let mut notes = BTreeMap::new();
        fit_notes(&f, "", &mut notes);
        Ok(LayerOutcome { layer, rows, notes })
    })?;
    report.provenance.extend(exp.provenance());
    report.provenance.insert("setting".into(), setting.name());
    report.provenance.extend(src.hashes(&done)?);
    Ok(report)
}

/// Pairwise cosine, Spearman and tail Jaccard among the three probes.
pub fn agree(src: &DataSource, exp: &Experiment, layers: &[u32]) -> Result<EvalReport> {
    let setting = exp.setting(src, layers);
    setting.validate()?;
    let (mut report, done) = run_layers(layers, |layer| {
        let (f, data) = fit(src, exp, &setting, layer)?;
        let rows = within_agreement(&f, &data.test, setting.normalized_layer(layer), &exp.cfg)?;
        let mut notes = BTreeMap::new();
        fit_notes(&f, "", &mut notes);
        Ok(LayerOutcome { layer, rows, notes })
    })?;
    report.provenance.extend(exp.provenance());
    report.provenance.insert("setting".into(), setting.name());
    report.provenance.extend(src.hashes(&done)?);
    Ok(report)
}

/// Applies directions fitted on `source` to `target`'s test split, layer
/// by layer, and compares them with `target`'s own directions.
pub fn transfer(
    source: &DataSource,
    target: &DataSource,
    exp: &Experiment,
    layers: &[u32],
) -> Result<EvalReport> {
    let s_setting = exp.setting(source, layers);
    let t_setting = exp.setting(target, layers);
    s_setting.validate()?;
    t_setting.validate()?;
    let (mut report, done) = run_layers(layers, |layer| {
        let (sf, _) = fit(source, exp, &s_setting, layer)?;
        let (tf, tdata) = fit(target, exp, &t_setting, layer)?;
        let rows = transfer_eval(
            &sf,
            &tf,
            &tdata.test,
            t_setting.normalized_layer(layer),
            &exp.cfg,
        )
        .map_err(|e| Error::data(&target.path(Split::Test, layer), e))?;
        let mut notes = BTreeMap::new();
        fit_notes(&sf, "source.", &mut notes);
        fit_notes(&tf, "target.", &mut notes);
        Ok(LayerOutcome { layer, rows, notes })
    })?;
    report.provenance.extend(exp.provenance());
    report.provenance.insert("source".into(), s_setting.name());
    report.provenance.insert("target".into(), t_setting.name());
    for (k, v) in source.hashes(&done)? {
        report.provenance.insert(format!("source.{k}"), v);
    }
    for (k, v) in target.hashes(&done)? {
        report.provenance.insert(format!("target.{k}"), v);
    }
    Ok(report)
}

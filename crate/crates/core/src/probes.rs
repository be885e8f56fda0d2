// SPDX-License-Identifier: MIT OR Apache-2.0

//! The three linear probes: the training-free class-mean difference, and
//! L2-regularised logistic and hinge-loss classifiers trained full-batch.
//!
//! Trainers return directions in whatever coordinates the design matrix is
//! in, tagged as [`DirectionSpace::Embedding`]; callers working in PCA
//! coordinates retag with [`ProbeDirection::in_space`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::LabeledMatrix;
use crate::direction::{DirectionSpace, ProbeDirection, ProbeKind};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::metrics::auroc;

pub const LAMBDA_GRID: [f64; 3] = [1e-3, 1e-2, 1e-1];
pub const CHECKPOINT_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ValidationMetric {
    Auroc,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    /// Relative objective change below which training stops.
    pub tol: f64,
    /// Initial step (logistic backtracking) or step cap (hinge).
    pub step_size: f64,
    /// Recorded for provenance; the full-batch trainers are deterministic.
    pub seed: u64,
    pub validation_metric: ValidationMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-2,
            max_iters: 1000,
            tol: 1e-9,
            step_size: 1.0,
            seed: 0,
            validation_metric: ValidationMetric::Auroc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidConfig("l2_lambda must be >= 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidConfig("tol must be >= 0".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Per-example scores `s_i = w . x_i + b`, aligned with `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub ids: Vec<String>,
    pub source: Option<ScoreSource>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSource {
    pub kind: ProbeKind,
    pub layer: u32,
    pub space: DirectionSpace,
    pub setting: String,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, ids: Vec<String>) -> Result<Self> {
        if scores.len() != ids.len() {
            return Err(Error::Shape {
                expected: ids.len(),
                found: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self {
            scores,
            ids,
            source: None,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn negated(&self) -> ScoreVector {
        ScoreVector {
            scores: self.scores.iter().map(|s| -s).collect(),
            ..self.clone()
        }
    }
}

impl ProbeDirection {
    pub fn in_space(mut self, space: DirectionSpace) -> Self {
        self.space = space;
        self
    }

    pub fn with_provenance(mut self, layer: u32, setting: &str) -> Self {
        self.layer = layer;
        self.source_setting = setting.into();
        self
    }
}

fn raw_scores(x: &Matrix, w: &[f64], b: f64) -> Vec<f64> {
    x.row_iter().map(|r| dot(r, w) + b).collect()
}

/// `s = X w + b`. `X` must be in the direction's coordinates.
pub fn score(dir: &ProbeDirection, x: &Matrix, ids: &[String]) -> Result<ScoreVector> {
    if x.cols() != dir.w.len() {
        return Err(Error::SpaceMismatch(alloc::format!(
            "direction in {} cannot score {}-dimensional rows (map_back missing?)",
            dir.space,
            x.cols()
        )));
    }
    let mut sv = ScoreVector::new(raw_scores(x, &dir.w, dir.bias), ids.to_vec())?;
    sv.source = Some(ScoreSource {
        kind: dir.kind,
        layer: dir.layer,
        space: dir.space,
        setting: dir.source_setting.clone(),
    });
    Ok(sv)
}

pub fn score_labeled(dir: &ProbeDirection, m: &LabeledMatrix) -> Result<ScoreVector> {
    score(dir, &m.x, &m.ids)
}

fn direction(w: Vec<f64>, bias: f64, kind: ProbeKind) -> ProbeDirection {
    ProbeDirection {
        space: DirectionSpace::Embedding(w.len()),
        w,
        bias,
        kind,
        layer: 0,
        source_setting: String::new(),
    }
}

/// `w = mean(x | rhetorical) - mean(x | informational)`, `b = 0`.
pub fn diffmean(train: &LabeledMatrix) -> Result<ProbeDirection> {
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let d = train.dim();
    let mut pos = vec![0.0; d];
    let mut neg = vec![0.0; d];
    let (mut np, mut nn) = (0usize, 0usize);
    for (r, &y) in train.x.row_iter().zip(&train.y) {
        let (acc, cnt) = if y {
            (&mut pos, &mut np)
        } else {
            (&mut neg, &mut nn)
        };
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
        *cnt += 1;
    }
    let w = pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p / np as f64 - n / nn as f64)
        .collect();
    Ok(direction(w, 0.0, ProbeKind::DiffMean))
}

/// Outcome of a trained probe, including the selection bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub direction: ProbeDirection,
    pub validation_auroc: f64,
    /// Iteration of the selected checkpoint.
    pub best_iteration: usize,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance was met.
    pub converged: bool,
    /// Whether the orientation rule flipped the selected direction.
    pub flipped: bool,
    pub l2_lambda: f64,
}

struct Checkpoints<'a> {
    val: &'a LabeledMatrix,
    best: Option<(Vec<f64>, f64, usize, f64)>,
    last: Option<usize>,
}

impl<'a> Checkpoints<'a> {
    fn new(val: &'a LabeledMatrix) -> Self {
        Self {
            val,
            best: None,
            last: None,
        }
    }

    /// Offers the final iterate unless it was already checkpointed.
    fn offer_final(&mut self, w: &[f64], b: f64, iter: usize) -> Result<()> {
        if self.last == Some(iter) {
            return Ok(());
        }
        self.offer(w, b, iter)
    }

    /// Later checkpoints win ties.
    fn offer(&mut self, w: &[f64], b: f64, iter: usize) -> Result<()> {
        self.last = Some(iter);
        let a = auroc(&raw_scores(&self.val.x, w, b), &self.val.y)?;
        let better = self.best.as_ref().is_none_or(|(_, _, _, best)| a >= *best);
        if better {
            self.best = Some((w.to_vec(), b, iter, a));
        }
        Ok(())
    }

    fn finish(
        self,
        kind: ProbeKind,
        iterations: usize,
        converged: bool,
        l2_lambda: f64,
    ) -> TrainedProbe {
        let (mut w, mut b, best_iteration, mut a) = self
            .best
            .expect("at least one checkpoint is always recorded");
        let flipped = a < 0.5;
        if flipped {
            w.iter_mut().for_each(|v| *v = -*v);
            b = -b;
            a = 1.0 - a;
        }
        TrainedProbe {
            direction: direction(w, b, kind),
            validation_auroc: a,
            best_iteration,
            iterations,
            converged,
            flipped,
            l2_lambda,
        }
    }
}

fn check_inputs(train: &LabeledMatrix, val: &LabeledMatrix, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if !train.has_both_classes() {
        return Err(Error::SingleClass);
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    if !val.has_both_classes() {
        return Err(Error::SingleClass);
    }
    if val.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: val.dim(),
        });
    }
    Ok(())
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `(lambda / 2) |w|^2`; the bias is unpenalised.
pub fn logistic_objective(x: &Matrix, y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let loss: f64 = x
        .row_iter()
        .zip(y)
        .map(|(r, &yi)| {
            let s = dot(r, w) + b;
            if yi {
                softplus(-s)
            } else {
                softplus(s)
            }
        })
        .sum();
    loss / n + 0.5 * lambda * dot(w, w)
}

/// Mean hinge loss on `{-1, +1}` labels plus `(lambda / 2) |w|^2`.
pub fn hinge_objective(x: &Matrix, y: &[bool], w: &[f64], b: f64, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let loss: f64 = x
        .row_iter()
        .zip(y)
        .map(|(r, &yi)| {
            let t = if yi { 1.0 } else { -1.0 };
            (1.0 - t * (dot(r, w) + b)).max(0.0)
        })
        .sum();
    loss / n + 0.5 * lambda * dot(w, w)
}

/// Accepted steps of the logistic trainer, for inspecting the descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTrace {
    pub objective: Vec<f64>,
}

/// Full-batch gradient descent with Armijo backtracking on the logistic
/// objective, validation-AUROC checkpoint selection every
/// [`CHECKPOINT_EVERY`] iterations plus the final iterate.
pub fn train_logistic(
    train: &LabeledMatrix,
    val: &LabeledMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedProbe> {
    train_logistic_traced(train, val, cfg).map(|(p, _)| p)
}

pub fn train_logistic_traced(
    train: &LabeledMatrix,
    val: &LabeledMatrix,
    cfg: &TrainConfig,
) -> Result<(TrainedProbe, LogisticTrace)> {
    check_inputs(train, val, cfg)?;
    let (x, y, lambda) = (&train.x, &train.y, cfg.l2_lambda);
    let n = y.len() as f64;
    let d = train.dim();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = logistic_objective(x, y, &w, b, lambda);
    let mut trace = LogisticTrace { objective: vec![f] };
    let mut ckpt = Checkpoints::new(val);
    let mut step = cfg.step_size;
    let mut gw = vec![0.0; d];
    let mut nw = vec![0.0; d];
    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iters {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (r, &yi) in x.row_iter().zip(y) {
            let resid = sigmoid(dot(r, &w) + b) - if yi { 1.0 } else { 0.0 };
            gb += resid;
            for (g, v) in gw.iter_mut().zip(r) {
                *g += resid * v;
            }
        }
        for (g, wi) in gw.iter_mut().zip(&w) {
            *g = *g / n + lambda * wi;
        }
        gb /= n;
        let gnorm2 = dot(&gw, &gw) + gb * gb;
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }

        let mut t = step;
        let (f_new, nb) = loop {
            for ((o, wi), g) in nw.iter_mut().zip(&w).zip(&gw) {
                *o = wi - t * g;
            }
            let nb = b - t * gb;
            let f_new = logistic_objective(x, y, &nw, nb, lambda);
            if f_new <= f - 1e-4 * t * gnorm2 {
                break (f_new, nb);
            }
            t *= 0.5;
            if t < 1e-20 {
                break (f, b);
            }
        };
        if t < 1e-20 {
            converged = true;
            break;
        }
        core::mem::swap(&mut w, &mut nw);
        b = nb;
        iter += 1;
        let rel = (f - f_new).abs() / f.abs().max(1e-12);
        f = f_new;
        trace.objective.push(f);
        step = (t * 2.0).min(cfg.step_size.max(t));
        if iter % CHECKPOINT_EVERY == 0 {
            ckpt.offer(&w, b, iter)?;
        }
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    ckpt.offer_final(&w, b, iter)?;
    Ok((
        ckpt.finish(ProbeKind::Logistic, iter, converged, lambda),
        trace,
    ))
}

/// Full-batch subgradient descent on the hinge objective with step
/// `min(step_size, 1 / (lambda t))`, floored at `step_size * 1e-3`.
pub fn train_hinge(
    train: &LabeledMatrix,
    val: &LabeledMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedProbe> {
    check_inputs(train, val, cfg)?;
    let (x, y, lambda) = (&train.x, &train.y, cfg.l2_lambda);
    let n = y.len() as f64;
    let d = train.dim();
    let floor = cfg.step_size * 1e-3;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = hinge_objective(x, y, &w, b, lambda);
    let mut ckpt = Checkpoints::new(val);
    let mut gw = vec![0.0; d];
    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iters {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (r, &yi) in x.row_iter().zip(y) {
            let t = if yi { 1.0 } else { -1.0 };
            if t * (dot(r, &w) + b) < 1.0 {
                gb -= t;
                for (g, v) in gw.iter_mut().zip(r) {
                    *g -= t * v;
                }
            }
        }
        for (g, wi) in gw.iter_mut().zip(&w) {
            *g = *g / n + lambda * wi;
        }
        gb /= n;
        if dot(&gw, &gw) + gb * gb == 0.0 {
            converged = true;
            break;
        }
        iter += 1;
        let decay = if lambda > 0.0 {
            1.0 / (lambda * iter as f64)
        } else {
            f64::INFINITY
        };
        let eta = cfg.step_size.min(decay).max(floor);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
        let f_new = hinge_objective(x, y, &w, b, lambda);
        let rel = (f - f_new).abs() / f.abs().max(1e-12);
        f = f_new;
        if iter % CHECKPOINT_EVERY == 0 {
            ckpt.offer(&w, b, iter)?;
        }
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    ckpt.offer_final(&w, b, iter)?;
    Ok(ckpt.finish(ProbeKind::Hinge, iter, converged, lambda))
}

/// Trains `kind` at each lambda in [`LAMBDA_GRID`] and keeps the one with
/// the best validation AUROC (earliest grid value on ties).
pub fn train_tuned(
    kind: ProbeKind,
    train: &LabeledMatrix,
    val: &LabeledMatrix,
    cfg: &TrainConfig,
) -> Result<TrainedProbe> {
    let mut best: Option<TrainedProbe> = None;
    for lambda in LAMBDA_GRID {
        let c = TrainConfig {
            l2_lambda: lambda,
            ..cfg.clone()
        };
        let p = match kind {
            ProbeKind::Logistic => train_logistic(train, val, &c)?,
            ProbeKind::Hinge => train_hinge(train, val, &c)?,
            ProbeKind::DiffMean => {
                return Err(Error::InvalidConfig(
                    "diffmean has no lambda to tune".into(),
                ))
            }
        };
        if best
            .as_ref()
            .is_none_or(|b| p.validation_auroc > b.validation_auroc)
        {
            best = Some(p);
        }
    }
    Ok(best.expect("grid is non-empty"))
}

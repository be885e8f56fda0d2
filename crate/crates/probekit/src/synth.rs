// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-class Gaussian activations with a known signal direction, written
//! in the same formats an extractor would produce.
//!
//! Each pseudo-layer draws `x = ±delta/2 · u_l + sigma · e + nuisance`,
//! where `u_l` is a unit direction fixed by `(direction_seed, layer,
//! direction_index)`. Datasets generated with the same direction seed and
//! index share `u_l`; different indices give exactly orthogonal directions.
//! Nuisance variance lives in random directions orthogonal to `u_l` that
//! depend on the data seed, so two datasets differ in their noise
//! subspaces.

use std::path::{Path, PathBuf};

use probekit_core::pipeline::LayerData;
use probekit_core::{join, ActivationFile, DatasetMeta, ExampleMeta, Label, Split};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{
    activation_file_name, check_output, meta_file_name, write_activation_file, write_meta,
};

/// Train / validation / test fractions, applied per class.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DeltaMu {
    /// `|delta|`, along the layer's random signal direction.
    Magnitude(f64),
    /// Explicit mean difference, used on every signal layer.
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dataset: String,
    pub model_id: String,
    pub d: usize,
    pub n_per_class: usize,
    pub delta_mu: DeltaMu,
    pub noise_sigma: f64,
    pub nuisance_dims: usize,
    /// Standard deviation of each nuisance direction, in units of sigma.
    pub nuisance_scale: f64,
    pub n_layers: usize,
    /// Layers carrying the class signal; `None` means all of them.
    pub signal_layers: Option<Vec<u32>>,
    pub direction_seed: u64,
    pub direction_index: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dataset: "synth".into(),
            model_id: "synthetic".into(),
            d: 64,
            n_per_class: 2000,
            delta_mu: DeltaMu::Magnitude(2.0),
            noise_sigma: 1.0,
            nuisance_dims: 0,
            nuisance_scale: 3.0,
            n_layers: 1,
            signal_layers: None,
            direction_seed: 0,
            direction_index: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be positive".into());
        }
        if self.n_per_class < 5 {
            return bad("n-per-class must be at least 5 so every split has both classes".into());
        }
        if self.n_layers == 0 {
            return bad("at least one layer is needed".into());
        }
        if self.direction_index >= self.d {
            return bad(format!(
                "direction index {} needs d > {0}",
                self.direction_index
            ));
        }
        if self.nuisance_dims > 0 && self.nuisance_dims + 1 > self.d {
            return bad(format!(
                "{} nuisance dims do not fit in d = {}",
                self.nuisance_dims, self.d
            ));
        }
        if !(self.nuisance_scale >= 0.0 && self.nuisance_scale.is_finite()) {
            return bad("nuisance scale must be >= 0".into());
        }
        match &self.delta_mu {
            DeltaMu::Magnitude(m) if !m.is_finite() => return bad("delta must be finite".into()),
            DeltaMu::Vector(v) if v.len() != self.d => {
                return bad(format!(
                    "delta vector has {} entries for d = {}",
                    v.len(),
                    self.d
                ))
            }
            DeltaMu::Vector(v) if v.iter().any(|x| !x.is_finite()) => {
                return bad("delta vector must be finite".into())
            }
            _ => {}
        }
        if let Some(layers) = &self.signal_layers {
            if let Some(l) = layers.iter().find(|&&l| l as usize >= self.n_layers) {
                return bad(format!("signal layer {l} outside 0..{}", self.n_layers));
            }
        }
        Ok(())
    }

    pub fn carries_signal(&self, layer: u32) -> bool {
        self.signal_layers
            .as_ref()
            .is_none_or(|l| l.contains(&layer))
    }

    /// The mean difference `mu_+ - mu_-` at `layer` (zero on noise layers).
    pub fn delta_vector(&self, layer: u32) -> Vec<f64> {
        if !self.carries_signal(layer) {
            return vec![0.0; self.d];
        }
        match &self.delta_mu {
            DeltaMu::Vector(v) => v.clone(),
            DeltaMu::Magnitude(m) => signal_direction(self, layer)
                .iter()
                .map(|u| u * m)
                .collect(),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Gram-Schmidt of Gaussian draws against `basis`, twice for stability.
fn orthonormal_draw(rng: &mut ChaCha8Rng, d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, d);
        for _ in 0..2 {
            for b in basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Unit signal direction of `layer`.
pub fn signal_direction(spec: &SyntheticSpec, layer: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.direction_seed);
    rng.set_stream(u64::from(layer));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(spec.direction_index + 1);
    for _ in 0..=spec.direction_index {
        let v = orthonormal_draw(&mut rng, spec.d, &basis);
        basis.push(v);
    }
    basis.pop().expect("at least one direction")
}

/// Generated data: metadata plus one whole-dataset example-level file per
/// layer (rows in metadata order).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub meta: DatasetMeta,
    pub layers: Vec<ActivationFile>,
}

impl SyntheticData {
    pub fn layer_data(&self, layer: u32) -> Result<LayerData> {
        let f = &self.layers[layer as usize];
        Ok(LayerData {
            train: join(f, &self.meta, Split::Train)?,
            val: join(f, &self.meta, Split::Validation)?,
            test: join(f, &self.meta, Split::Test)?,
        })
    }
}

fn split_counts(n: usize) -> [usize; 3] {
    let train = (n as f64 * SPLIT_FRACTIONS[0]).round() as usize;
    let val = ((n as f64 * SPLIT_FRACTIONS[1]).round() as usize).max(1);
    [train, val, n - train - val]
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = split_counts(spec.n_per_class);
    let splits = [Split::Train, Split::Validation, Split::Test];
    let mut rows: Vec<(Label, Split)> = Vec::with_capacity(2 * spec.n_per_class);
    for label in [Label::Rhetorical, Label::Informational] {
        for (split, &c) in splits.iter().zip(&counts) {
            rows.extend(std::iter::repeat_n((label, *split), c));
        }
    }
    rows.shuffle(&mut rng);
    let examples: Vec<ExampleMeta> = rows
        .iter()
        .enumerate()
        .map(|(i, &(label, split))| {
            let n_tokens = rng.random_range(8..=64usize);
            let q = rng.random_range(3..=12usize.min(n_tokens));
            ExampleMeta {
                id: format!("{}-{i:05}", spec.dataset),
                label,
                split,
                n_tokens,
                question_span: (n_tokens - q, n_tokens),
            }
        })
        .collect();
    let meta = DatasetMeta {
        dataset_name: spec.dataset.clone(),
        tokenizer_id: "synthetic".into(),
        model_id: spec.model_id.clone(),
        n_layers: spec.n_layers,
        examples,
    };

    let d = spec.d;
    let mut layers = Vec::with_capacity(spec.n_layers);
    for layer in 0..spec.n_layers as u32 {
        let delta = spec.delta_vector(layer);
        let mut lrng = ChaCha8Rng::seed_from_u64(spec.seed);
        lrng.set_stream(1 + u64::from(layer));
        let mut basis = vec![signal_direction(spec, layer)];
        for _ in 0..spec.nuisance_dims {
            let v = orthonormal_draw(&mut lrng, d, &basis);
            basis.push(v);
        }
        let nuisance = &basis[1..];
        let nscale = spec.nuisance_scale * spec.noise_sigma;
        let mut data = Vec::with_capacity(meta.examples.len() * d);
        let mut row = vec![0.0f64; d];
        for ex in &meta.examples {
            let sign = if ex.label.is_positive() { 0.5 } else { -0.5 };
            for (r, dl) in row.iter_mut().zip(&delta) {
                *r = sign * dl + spec.noise_sigma * lrng.sample::<f64, _>(StandardNormal);
            }
            for v in nuisance {
                let c = nscale * lrng.sample::<f64, _>(StandardNormal);
                row.iter_mut().zip(v).for_each(|(r, x)| *r += c * x);
            }
            data.extend(row.iter().map(|&x| x as f32));
        }
        layers.push(ActivationFile::example_level(layer, d as u32, data)?);
    }
    Ok(SyntheticData { meta, layers })
}

/// Writes `<dataset>__meta.json` and one file per (split, layer) into
/// `dir`. Returns the written paths, metadata first.
pub fn write_synthetic(dir: &Path, data: &SyntheticData, force: bool) -> Result<Vec<PathBuf>> {
    let name = &data.meta.dataset_name;
    let splits = [Split::Train, Split::Validation, Split::Test];
    let meta_path = dir.join(meta_file_name(name));
    let mut paths = vec![meta_path.clone()];
    for f in &data.layers {
        for s in splits {
            paths.push(dir.join(activation_file_name(name, s, f.layer)));
        }
    }
    for p in &paths {
        check_output(p, force)?;
    }
    write_meta(&meta_path, &data.meta)?;
    let mut out = paths[1..].iter();
    for f in &data.layers {
        for s in splits {
            let rows: Vec<f32> = data
                .meta
                .examples
                .iter()
                .enumerate()
                .filter(|(_, e)| e.split == s)
                .flat_map(|(i, _)| f.row(i).iter().copied())
                .collect();
            let part = ActivationFile::example_level(f.layer, f.dim, rows)?;
            write_activation_file(out.next().expect("path per file"), &part)?;
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            d: 8,
            n_per_class: 20,
            n_layers: 2,
            nuisance_dims: 2,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn split_proportions() {
        let data = generate(&small()).unwrap();
        let m = &data.meta;
        assert_eq!(m.examples.len(), 40);
        assert_eq!(m.split_len(Split::Train), 28);
        assert_eq!(m.split_len(Split::Validation), 4);
        assert_eq!(m.split_len(Split::Test), 8);
        m.validate().unwrap();
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SyntheticSpec { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn direction_indices_are_orthogonal() {
        let a = signal_direction(&small(), 1);
        let b = signal_direction(
            &SyntheticSpec {
                direction_index: 1,
                ..small()
            },
            1,
        );
        let c: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!(c.abs() < 1e-12);
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        // same seed and index, different data seed: same direction
        assert_eq!(
            a,
            signal_direction(&SyntheticSpec { seed: 9, ..small() }, 1)
        );
    }

    #[test]
    fn noise_layers_have_no_mean_shift() {
        let spec = SyntheticSpec {
            signal_layers: Some(vec![1]),
            ..small()
        };
        assert!(spec.delta_vector(0).iter().all(|&x| x == 0.0));
        assert!(spec.delta_vector(1).iter().any(|&x| x != 0.0));
    }
}

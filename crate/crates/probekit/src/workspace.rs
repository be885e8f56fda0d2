// SPDX-License-Identifier: MIT OR Apache-2.0

//! Locating and loading one dataset's per-layer activation files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use probekit_core::pipeline::LayerData;
use probekit_core::{join, pool, ActivationKind, DatasetMeta, LabeledMatrix, PoolingSpec, Split};

use crate::error::{Error, Result, WithPath};
use crate::store::{
    activation_file_name, hash_file, meta_file_name, read_activation_file, read_meta,
};

pub const SPLITS: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

#[derive(Debug, Clone)]
pub struct DataSource {
    pub dir: PathBuf,
    pub dataset: String,
    pub meta_path: PathBuf,
    pub meta: DatasetMeta,
}

impl DataSource {
    /// `meta` defaults to `<dir>/<dataset>__meta.json`.
    pub fn open(dir: &Path, dataset: &str, meta: Option<&Path>) -> Result<Self> {
        let meta_path = meta
            .map(Path::to_path_buf)
            .unwrap_or_else(|| dir.join(meta_file_name(dataset)));
        let meta = read_meta(&meta_path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            dataset: dataset.to_string(),
            meta_path,
            meta,
        })
    }

    pub fn path(&self, split: Split, layer: u32) -> PathBuf {
        self.dir
            .join(activation_file_name(&self.dataset, split, layer))
    }

    /// Requested layers, or every layer the metadata declares.
    pub fn layers(&self, requested: Option<&[u32]>) -> Result<Vec<u32>> {
        let n = self.meta.n_layers;
        match requested {
            None => Ok((0..n as u32).collect()),
            Some(ls) => {
                if let Some(l) = ls.iter().find(|&&l| l as usize >= n) {
                    return Err(Error::Usage(format!(
                        "--layers: layer {l} outside 0..{n} for {}",
                        self.dataset
                    )));
                }
                Ok(ls.to_vec())
            }
        }
    }

    /// Reads one split, pooling token-level files with `pooling`.
    pub fn load_split(
        &self,
        layer: u32,
        split: Split,
        pooling: PoolingSpec,
    ) -> Result<LabeledMatrix> {
        let path = self.path(split, layer);
        let file = read_activation_file(&path)?;
        if file.layer != layer {
            return Err(Error::parse(
                &path,
                format!("header says layer {}, expected {layer}", file.layer),
            ));
        }
        let file = match file.kind {
            ActivationKind::TokenLevel => {
                pool(&file, &self.meta, Some(split), pooling).at(&path)?
            }
            ActivationKind::ExampleLevel => file,
        };
        join(&file, &self.meta, split).at(&path)
    }

    pub fn load_layer(&self, layer: u32, pooling: PoolingSpec) -> Result<LayerData> {
        Ok(LayerData {
            train: self.load_split(layer, Split::Train, pooling)?,
            val: self.load_split(layer, Split::Validation, pooling)?,
            test: self.load_split(layer, Split::Test, pooling)?,
        })
    }

    /// Token counts of one split's examples, in metadata order.
    pub fn split_tokens(&self, split: Split) -> Vec<usize> {
        self.meta
            .examples
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.n_tokens)
            .collect()
    }

    /// `file name -> sha256` for the metadata and the given layers' files.
    pub fn hashes(&self, layers: &[u32]) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let mut add = |p: &Path| -> Result<()> {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            out.insert(format!("sha256:{name}"), hash_file(p)?);
            Ok(())
        };
        add(&self.meta_path)?;
        for &l in layers {
            for s in SPLITS {
                let p = self.path(s, l);
                if p.exists() {
                    add(&p)?;
                }
            }
        }
        Ok(out)
    }
}

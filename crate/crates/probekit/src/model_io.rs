// SPDX-License-Identifier: MIT OR Apache-2.0

//! PCA models, probe directions and steering vectors on disk: a binary
//! `f64` block plus a JSON descriptor written next to it (`<file>.json`).
//!
//! ```text
//! RQPC: magic "RQPC", version u32, k u32, d u32,
//!       mean d x f64, components k x d x f64, evr k x f64
//! RQVC: magic "RQVC", version u32, len u64, values len x f64
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use probekit_core::direction::{DirectionSpace, ProbeDirection, ProbeKind};
use probekit_core::probes::TrainedProbe;
use probekit_core::steering::{Normalization, SteeringSource, SteeringVector};
use probekit_core::{Matrix, PcaFit, PcaModel, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, WithPath};
use crate::store::{read_json, sidecar, write_bytes, write_json};

pub const PCA_MAGIC: [u8; 4] = *b"RQPC";
pub const VECTOR_MAGIC: [u8; 4] = *b"RQVC";
pub const BLOCK_VERSION: u32 = 1;

pub fn descriptor_path(path: &Path) -> PathBuf {
    sidecar(path, ".json")
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], probekit_core::Error> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(probekit_core::Error::Truncated {
            expected: self.at.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, probekit_core::Error> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> std::result::Result<u64, probekit_core::Error> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, probekit_core::Error> {
        let b = self.take(n.saturating_mul(8))?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: [u8; 4]) -> std::result::Result<(), probekit_core::Error> {
        let m: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if m != magic {
            return Err(probekit_core::Error::BadMagic(m));
        }
        let v = self.u32()?;
        if v != BLOCK_VERSION {
            return Err(probekit_core::Error::UnsupportedVersion(v));
        }
        Ok(())
    }

    fn finish(&self) -> std::result::Result<(), probekit_core::Error> {
        if self.at != self.bytes.len() {
            return Err(probekit_core::Error::InvalidFile(format!(
                "{} trailing bytes",
                self.bytes.len() - self.at
            )));
        }
        Ok(())
    }
}

fn push_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_pca(model: &PcaModel) -> Vec<u8> {
    let (k, d) = (model.k(), model.d());
    let mut out = Vec::with_capacity(16 + 8 * (d + k * d + k));
    out.extend_from_slice(&PCA_MAGIC);
    out.extend_from_slice(&BLOCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    push_f64s(&mut out, model.mean());
    push_f64s(&mut out, model.components().as_slice());
    push_f64s(&mut out, model.explained_variance_ratio());
    out
}

pub fn decode_pca(bytes: &[u8]) -> std::result::Result<PcaModel, probekit_core::Error> {
    let mut r = Reader { bytes, at: 0 };
    r.header(PCA_MAGIC)?;
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    let mean = r.f64s(d)?;
    let w = r.f64s(k.saturating_mul(d))?;
    let evr = r.f64s(k)?;
    r.finish()?;
    PcaModel::new(mean, Matrix::from_vec(k, d, w)?, evr)
}

pub fn encode_vector(v: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * v.len());
    out.extend_from_slice(&VECTOR_MAGIC);
    out.extend_from_slice(&BLOCK_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    push_f64s(&mut out, v);
    out
}

pub fn decode_vector(bytes: &[u8]) -> std::result::Result<Vec<f64>, probekit_core::Error> {
    let mut r = Reader { bytes, at: 0 };
    r.header(VECTOR_MAGIC)?;
    let n = usize::try_from(r.u64()?).unwrap_or(usize::MAX);
    let v = r.f64s(n)?;
    r.finish()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(probekit_core::Error::NonFinite("vector block"));
    }
    Ok(v)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn sha256(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaDescriptor {
    pub format: String,
    pub k: usize,
    pub d: usize,
    /// Set when the data rank forced `k` below this value.
    pub requested_k: Option<usize>,
    pub tied_components: Vec<(usize, usize)>,
    pub explained_variance_ratio: Vec<f64>,
    pub setting: String,
    pub layer: Option<u32>,
    pub n_layers: Option<usize>,
    pub block_sha256: String,
    /// Hashes of the files the model was fitted on.
    pub inputs: BTreeMap<String, String>,
}

impl PcaDescriptor {
    pub fn for_fit(
        fit: &PcaFit,
        setting: &str,
        layer: Option<u32>,
        n_layers: Option<usize>,
    ) -> Self {
        Self {
            format: "RQPC".into(),
            k: fit.model.k(),
            d: fit.model.d(),
            requested_k: fit.requested_k,
            tied_components: fit.tied_components.clone(),
            explained_variance_ratio: fit.model.explained_variance_ratio().to_vec(),
            setting: setting.into(),
            layer,
            n_layers,
            block_sha256: String::new(),
            inputs: BTreeMap::new(),
        }
    }
}

pub fn write_pca(path: &Path, model: &PcaModel, desc: &PcaDescriptor) -> Result<()> {
    let bytes = encode_pca(model);
    let mut desc = desc.clone();
    desc.block_sha256 = sha256(&bytes);
    write_bytes(path, &bytes)?;
    write_json(&descriptor_path(path), &desc)
}

pub fn read_pca(path: &Path) -> Result<(PcaModel, PcaDescriptor)> {
    let model = decode_pca(&read_bytes(path)?).at(path)?;
    let dpath = descriptor_path(path);
    let desc: PcaDescriptor = read_json(&dpath)?;
    if desc.k != model.k() || desc.d != model.d() {
        return Err(Error::parse(
            &dpath,
            "descriptor shape disagrees with the model block",
        ));
    }
    Ok((model, desc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub config: TrainConfig,
    pub validation_auroc: f64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub converged: bool,
    pub flipped: bool,
    pub l2_lambda: f64,
}

impl TrainingInfo {
    pub fn new(t: &TrainedProbe, config: &TrainConfig) -> Self {
        Self {
            config: config.clone(),
            validation_auroc: t.validation_auroc,
            best_iteration: t.best_iteration,
            iterations: t.iterations,
            converged: t.converged,
            flipped: t.flipped,
            l2_lambda: t.l2_lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDescriptor {
    pub kind: ProbeKind,
    pub layer: u32,
    pub space: DirectionSpace,
    pub setting: String,
    pub bias: f64,
    pub training: Option<TrainingInfo>,
    /// Hash of the PCA block for PCA-space directions.
    pub pca_sha256: Option<String>,
    pub block_sha256: String,
}

pub fn write_direction(
    path: &Path,
    dir: &ProbeDirection,
    training: Option<TrainingInfo>,
    pca_sha256: Option<String>,
) -> Result<()> {
    dir.validate().at(path)?;
    let bytes = encode_vector(&dir.w);
    let desc = DirectionDescriptor {
        kind: dir.kind,
        layer: dir.layer,
        space: dir.space,
        setting: dir.source_setting.clone(),
        bias: dir.bias,
        training,
        pca_sha256,
        block_sha256: sha256(&bytes),
    };
    write_bytes(path, &bytes)?;
    write_json(&descriptor_path(path), &desc)
}

pub fn read_direction(path: &Path) -> Result<(ProbeDirection, DirectionDescriptor)> {
    let w = decode_vector(&read_bytes(path)?).at(path)?;
    let desc: DirectionDescriptor = read_json(&descriptor_path(path))?;
    let dir = ProbeDirection {
        w,
        bias: desc.bias,
        space: desc.space,
        kind: desc.kind,
        layer: desc.layer,
        source_setting: desc.setting.clone(),
    };
    dir.validate().at(path)?;
    Ok((dir, desc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDescriptor {
    pub layer: u32,
    pub dim: usize,
    pub normalization: Normalization,
    pub source: SteeringSource,
    /// The vector is stored without any alpha; callers scale it.
    pub alpha_independent: bool,
    pub source_probe_sha256: String,
    pub block_sha256: String,
}

pub fn write_steering(path: &Path, v: &SteeringVector, source_probe_sha256: &str) -> Result<()> {
    let bytes = encode_vector(&v.v);
    let desc = SteeringDescriptor {
        layer: v.layer,
        dim: v.v.len(),
        normalization: v.normalization,
        source: v.source.clone(),
        alpha_independent: true,
        source_probe_sha256: source_probe_sha256.into(),
        block_sha256: sha256(&bytes),
    };
    write_bytes(path, &bytes)?;
    write_json(&descriptor_path(path), &desc)
}

pub fn read_steering(path: &Path) -> Result<(SteeringVector, SteeringDescriptor)> {
    let v = decode_vector(&read_bytes(path)?).at(path)?;
    let dpath = descriptor_path(path);
    let desc: SteeringDescriptor = read_json(&dpath)?;
    if desc.dim != v.len() {
        return Err(Error::parse(
            &dpath,
            "descriptor dim disagrees with the vector block",
        ));
    }
    Ok((
        SteeringVector {
            v,
            layer: desc.layer,
            source: desc.source.clone(),
            normalization: desc.normalization,
        },
        desc,
    ))
}

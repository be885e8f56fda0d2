// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation files (`.rqac`), dataset metadata sidecars, and the file
//! naming convention.
//!
//! Layout, little-endian, no padding:
//!
//! ```text
//! magic       4 bytes  "RQAC"
//! version     u32
//! kind        u32      0 = token level, 1 = example level
//! layer       u32
//! dim         u32
//! n_examples  u32
//! total_rows  u64
//! offsets     (n_examples + 1) x u64, token level only
//! data        total_rows x dim x f32, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use probekit_core::activation::{FORMAT_VERSION, MAGIC};
use probekit_core::{ActivationFile, ActivationKind, DatasetMeta, Split};

use crate::error::{Error, Result, WithPath};

type CoreResult<T> = std::result::Result<T, probekit_core::Error>;

pub const HEADER_LEN: usize = 32;

pub fn encode_activation(file: &ActivationFile) -> CoreResult<Vec<u8>> {
    file.validate()?;
    let offsets = file.offsets.as_deref().unwrap_or(&[]);
    let mut out = Vec::with_capacity(HEADER_LEN + offsets.len() * 8 + file.data.len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&file.version.to_le_bytes());
    out.extend_from_slice(&(file.kind as u32).to_le_bytes());
    out.extend_from_slice(&file.layer.to_le_bytes());
    out.extend_from_slice(&file.dim.to_le_bytes());
    out.extend_from_slice(&file.n_examples.to_le_bytes());
    out.extend_from_slice(&(file.total_rows() as u64).to_le_bytes());
    for o in offsets {
        out.extend_from_slice(&o.to_le_bytes());
    }
    for v in &file.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_activation(bytes: &[u8]) -> CoreResult<ActivationFile> {
    use probekit_core::Error as E;
    if bytes.len() < 4 {
        return Err(E::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(E::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(E::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(E::UnsupportedVersion(version));
    }
    let kind = ActivationKind::from_code(u32_at(bytes, 8))
        .ok_or_else(|| E::InvalidFile(format!("unknown kind code {}", u32_at(bytes, 8))))?;
    let layer = u32_at(bytes, 12);
    let dim = u32_at(bytes, 16);
    let n_examples = u32_at(bytes, 20);
    let total_rows = u64_at(bytes, 24);
    let n_offsets = match kind {
        ActivationKind::TokenLevel => n_examples as u64 + 1,
        ActivationKind::ExampleLevel => 0,
    };
    let expected = (total_rows as u128 * dim as u128 * 4 + n_offsets as u128 * 8)
        .saturating_add(HEADER_LEN as u128);
    let expected = usize::try_from(expected).unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(E::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(E::InvalidFile(format!(
            "{} trailing bytes after the data block",
            bytes.len() - expected
        )));
    }
    let mut at = HEADER_LEN;
    let offsets = match kind {
        ActivationKind::TokenLevel => {
            let off: Vec<u64> = (0..n_offsets as usize)
                .map(|i| u64_at(bytes, at + 8 * i))
                .collect();
            at += off.len() * 8;
            Some(off)
        }
        ActivationKind::ExampleLevel => {
            if total_rows != n_examples as u64 {
                return Err(E::InvalidFile(format!(
                    "example-level header has {total_rows} rows for {n_examples} examples"
                )));
            }
            None
        }
    };
    let data: Vec<f32> = bytes[at..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let file = ActivationFile {
        version,
        kind,
        layer,
        dim,
        n_examples,
        offsets,
        data,
    };
    file.validate()?;
    Ok(file)
}

pub fn read_activation_file(path: &Path) -> Result<ActivationFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_activation(&bytes).at(path)
}

/// Validates before touching the disk.
pub fn write_activation_file(path: &Path, file: &ActivationFile) -> Result<()> {
    let bytes = encode_activation(file).at(path)?;
    write_bytes(path, &bytes)
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    meta.validate().at(path)?;
    Ok(meta)
}

pub fn write_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    meta.validate().at(path)?;
    write_json(path, meta)
}

/// `<dataset>__<split>__L<layer>.rqac`
pub fn activation_file_name(dataset: &str, split: Split, layer: u32) -> String {
    format!("{dataset}__{split}__L{layer}.rqac")
}

/// `<dataset>__meta.json`
pub fn meta_file_name(dataset: &str) -> String {
    format!("{dataset}__meta.json")
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Refuses to overwrite existing outputs unless `force` is set.
pub fn check_output(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Exists(path.to_path_buf()));
    }
    Ok(())
}

/// Appends `suffix` to the full file name (`a.rqpc` -> `a.rqpc.json`).
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Hex SHA-256 of a file's bytes.
pub fn hash_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

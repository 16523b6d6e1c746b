//! Shared on-disk layout: a UTF-8 `key=value` manifest next to a flat
//! little-endian binary payload whose SHA-256 the manifest records.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use mogen_tensor::{ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'));
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Data(format!("manifest is missing `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Data(format!("manifest key `{key}` has invalid value `{raw}`")))
    }

    /// Comma-separated list value; an empty string is an empty list.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("manifest key `{key}` has invalid item `{s}`")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("manifest line {} has no `=`", n + 1)))?;
            if m.get(k).is_some() {
                return Err(Error::Data(format!("manifest key `{k}` repeated")));
            }
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Fail unless `version` equals `expected`.
    pub fn check_version(&self, expected: u32) -> Result<()> {
        let found = self.require("version")?;
        if found.parse::<u32>().ok() != Some(expected) {
            return Err(Error::Version {
                expected,
                found: found.to_string(),
            });
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn f64s_to_bytes(values: &[f64], out: &mut Vec<u8>) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decode little-endian `f64`s; `bytes.len()` must be a multiple of 8.
pub fn bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a payload and compare its digest with the manifest's `sha256`.
pub fn read_verified(path: &Path, manifest: &Manifest, what: &str) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    if sha256_hex(&bytes) != manifest.require("sha256")? {
        return Err(Error::Checksum { what: what.to_string() });
    }
    Ok(bytes)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `{stem}.txt` (the manifest plus the payload digest) and
/// `{stem}.bin` (the values).
pub fn write_archive(dir: &Path, stem: &str, manifest: &Manifest, values: &[f64]) -> Result<()> {
    ensure_dir(dir)?;
    let mut bytes = Vec::new();
    f64s_to_bytes(values, &mut bytes);
    let mut man = manifest.clone();
    man.set("sha256", sha256_hex(&bytes));
    write_bytes(&dir.join(format!("{stem}.bin")), &bytes)?;
    man.write(&dir.join(format!("{stem}.txt")))
}

/// Read an archive written by [`write_archive`], verifying the digest.
pub fn read_archive(dir: &Path, stem: &str) -> Result<(Manifest, Vec<f64>)> {
    let man = Manifest::read(&dir.join(format!("{stem}.txt")))?;
    let bytes = read_verified(&dir.join(format!("{stem}.bin")), &man, &format!("{stem}.bin"))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Data(format!("{stem}.bin length is not a multiple of 8")));
    }
    Ok((man, bytes_to_f64s(&bytes)))
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
}

/// Record parameter names, shapes and the payload digest in `man`; returns
/// the payload.
pub fn params_to_manifest(store: &ParamStore, man: &mut Manifest) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(store.numel() * 8);
    man.set("param_count", store.len());
    for p in store.iter() {
        man.set(&format!("param.{}", p.name), shape_string(p.value.shape()));
        f64s_to_bytes(p.value.data(), &mut bytes);
    }
    man.set("sha256", sha256_hex(&bytes));
    bytes
}

/// Fill `store` from a payload, checking every name and shape against the
/// store's own layout.
pub fn params_from_manifest(store: &mut ParamStore, man: &Manifest, bytes: &[u8]) -> Result<()> {
    let count: usize = man.parse("param_count")?;
    if count != store.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {count} parameters, configuration implies {}",
            store.len()
        )));
    }
    if bytes.len() != store.numel() * 8 {
        return Err(Error::Shape(format!(
            "parameter payload is {} bytes, configuration implies {}",
            bytes.len(),
            store.numel() * 8
        )));
    }
    let mut offset = 0;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, shape) = {
            let p = store.get(id);
            (p.name.clone(), p.value.shape().to_vec())
        };
        let stored = man.require(&format!("param.{name}"))?;
        if stored != shape_string(&shape) {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {stored} in the checkpoint, {} in the model",
                shape_string(&shape)
            )));
        }
        let n: usize = shape.iter().product();
        let values = bytes_to_f64s(&bytes[offset * 8..(offset + n) * 8]);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("parameter `{name}` holds non-finite values")));
        }
        store.set_value(id, Tensor::new(shape, values)?)?;
        offset += n;
    }
    Ok(())
}

//! Tensor checkpoints: a text manifest with one `name RxC offset` line per
//! tensor (offset in bytes) and `@key value` metadata lines, next to a raw
//! file of little-endian f64 values concatenated in manifest order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Dense, ParamStore};
use crate::scalar::Scalar;

const HEADER: &str = "# graph-unlearn checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Dense<f64>)>,
}

/// Lowercase hex SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.manifest"))
}

pub fn data_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.bin"))
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push<T: Scalar>(&mut self, name: &str, value: &Dense<T>) -> &mut Self {
        self.tensors.push((name.to_string(), value.cast()));
        self
    }

    pub fn push_params<T: Scalar>(&mut self, params: &ParamStore<T>) -> &mut Self {
        for (name, value) in params.iter() {
            self.push(name, value);
        }
        self
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
    }

    pub fn parse<F: FromStr>(&self, key: &str) -> Result<F>
    where
        F::Err: std::fmt::Display,
    {
        let raw = self.get(key)?;
        raw.parse().map_err(|e| Error::Checkpoint(format!("metadata `{key}` = `{raw}`: {e}")))
    }

    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Dense<T>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.cast())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    /// Every tensor as a fresh parameter store (optimizer state is not saved).
    pub fn params<T: Scalar>(&self) -> ParamStore<T> {
        let mut p = ParamStore::new();
        for (name, value) in &self.tensors {
            p.insert(name.clone(), value.cast());
        }
        p
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut manifest = format!("{HEADER}\n");
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("metadata `{k}` cannot be written on one line")));
            }
            writeln!(manifest, "@{k} {v}").unwrap();
        }
        let mut bytes = Vec::new();
        for (name, value) in &self.tensors {
            if name.contains(char::is_whitespace) || name.starts_with(['@', '#']) {
                return Err(Error::Checkpoint(format!("tensor name `{name}` is not writable")));
            }
            writeln!(manifest, "{name} {}x{} {}", value.rows(), value.cols(), bytes.len()).unwrap();
            for v in value.as_slice() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mpath = manifest_path(dir, stem);
        let dpath = data_path(dir, stem);
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        fs::write(&dpath, bytes).map_err(|e| Error::io(&dpath, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let mpath = manifest_path(dir, stem);
        let dpath = data_path(dir, stem);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let bytes = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad(&mpath, "missing checkpoint header"));
        }
        let mut out = Checkpoint::new();
        let mut expected_offset = 0;
        for line in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('@') {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                out.meta.insert(k.to_string(), v.to_string());
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [name, shape, offset] = parts[..] else {
                return Err(bad(&mpath, format!("expected `name RxC offset`, got `{line}`")));
            };
            let (r, c) = shape
                .split_once('x')
                .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
                .ok_or_else(|| bad(&mpath, format!("bad shape `{shape}`")))?;
            let offset: usize = offset.parse().map_err(|_| bad(&mpath, format!("bad offset `{offset}`")))?;
            if offset != expected_offset {
                return Err(bad(&mpath, format!("tensor `{name}` at offset {offset}, expected {expected_offset}")));
            }
            let end = offset + r * c * 8;
            if end > bytes.len() {
                return Err(bad(&dpath, format!("tensor `{name}` runs past the end of the data")));
            }
            let data = bytes[offset..end].chunks_exact(8).map(|ch| f64::from_le_bytes(ch.try_into().expect("chunk of 8"))).collect();
            out.tensors.push((name.to_string(), Dense::from_vec(r, c, data)?));
            expected_offset = end;
        }
        if expected_offset != bytes.len() {
            return Err(bad(&dpath, format!("{} trailing bytes", bytes.len() - expected_offset)));
        }
        Ok(out)
    }
}

//! Flat little-endian `f64` weight files with a JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cascade::CascadeModel;
use super::layers::{Module, ParamKind, Visitor};
use super::spec::{Mode, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_FORMAT: &str = "c5ed-weights-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    /// Byte offset into the weight file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub format: String,
    pub architecture: String,
    pub dtype: String,
    pub weights_file: String,
    pub spec: NetworkSpec,
    pub entries: Vec<WeightEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Short description of what a checkpoint can be loaded into.
pub fn architecture_tag(spec: &NetworkSpec) -> String {
    let mode = match spec.mode {
        Mode::Real => "real",
        Mode::Complex => "complex",
    };
    format!(
        "ensemble-cascade/{mode}/depth{}/branches{}",
        spec.cascade_depth,
        spec.branches.len()
    )
}

/// Every parameter and buffer of a model, in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDict {
    pub entries: Vec<(String, EntryKind, Vec<usize>, Vec<f64>)>,
}

struct Collect<'a>(&'a mut StateDict);

impl Visitor for Collect<'_> {
    fn param(&mut self, name: &str, _: ParamKind, t: &mut Tensor) {
        self.0
            .entries
            .push((name.into(), EntryKind::Param, t.shape().to_vec(), t.data().to_vec()));
    }

    fn buffer(&mut self, name: &str, values: &mut Vec<f64>) {
        self.0
            .entries
            .push((name.into(), EntryKind::Buffer, vec![values.len()], values.clone()));
    }
}

struct Restore<'a> {
    state: &'a StateDict,
    next: usize,
    error: Option<Error>,
}

impl Restore<'_> {
    fn take(&mut self, name: &str, kind: EntryKind, shape: &[usize]) -> Option<&[f64]> {
        if self.error.is_some() {
            return None;
        }
        let found = self.state.entries.get(self.next);
        self.next += 1;
        match found {
            Some((n, k, s, v)) if n == name && *k == kind && s == shape => Some(v),
            other => {
                self.error = Some(Error::Checkpoint(format!(
                    "expected {kind:?} {name} {shape:?}, found {:?}",
                    other.map(|(n, k, s, _)| (n, k, s))
                )));
                None
            }
        }
    }
}

impl Visitor for Restore<'_> {
    fn param(&mut self, name: &str, _: ParamKind, t: &mut Tensor) {
        let shape = t.shape().to_vec();
        if let Some(v) = self.take(name, EntryKind::Param, &shape) {
            *t = Tensor::new(&shape, v.to_vec())
                .expect("shape checked")
                .requires_grad(true);
        }
    }

    fn buffer(&mut self, name: &str, values: &mut Vec<f64>) {
        if let Some(v) = self.take(name, EntryKind::Buffer, &[values.len()]) {
            values.copy_from_slice(v);
        }
    }
}

impl StateDict {
    pub fn capture<M: Module + ?Sized>(model: &mut M) -> Self {
        let mut s = StateDict {
            entries: Vec::new(),
        };
        model.accept("", &mut Collect(&mut s));
        s
    }

    /// Copies the values back into a model of identical layout.
    pub fn restore<M: Module + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut r = Restore {
            state: self,
            next: 0,
            error: None,
        };
        model.accept("", &mut r);
        if let Some(e) = r.error {
            return Err(e);
        }
        if r.next != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} entries, state has {}",
                r.next,
                self.entries.len()
            )));
        }
        Ok(())
    }
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`; returns the manifest path.
pub fn save_weights(
    model: &mut CascadeModel,
    dir: &Path,
    stem: &str,
    metadata: serde_json::Value,
) -> Result<PathBuf> {
    let state = StateDict::capture(model);
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(state.entries.len());
    for (name, kind, shape, values) in &state.entries {
        entries.push(WeightEntry {
            name: name.clone(),
            kind: *kind,
            shape: shape.clone(),
            offset: bytes.len(),
        });
        values
            .iter()
            .for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
    }
    let weights_file = format!("{stem}.bin");
    let manifest = WeightManifest {
        format: WEIGHTS_FORMAT.into(),
        architecture: architecture_tag(model.spec()),
        dtype: "f64-le".into(),
        weights_file: weights_file.clone(),
        spec: model.spec().clone(),
        entries,
        metadata,
    };
    let bin_path = dir.join(&weights_file);
    std::fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

/// Rebuilds a model from a manifest written by [`save_weights`].
pub fn load_weights(manifest_path: &Path) -> Result<(CascadeModel, WeightManifest)> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: WeightManifest = serde_json::from_str(&text)?;
    if manifest.format != WEIGHTS_FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}",
            manifest.format
        )));
    }
    if manifest.architecture != architecture_tag(&manifest.spec) {
        return Err(Error::Checkpoint(format!(
            "architecture tag {:?} does not describe the stored spec",
            manifest.architecture
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bin_path = dir.join(&manifest.weights_file);
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut state = StateDict {
        entries: Vec::with_capacity(manifest.entries.len()),
    };
    for e in &manifest.entries {
        let len: usize = e.shape.iter().product();
        let end = e.offset + 8 * len;
        let chunk = bytes.get(e.offset..end).ok_or_else(|| {
            Error::Checkpoint(format!("{} runs past the end of {}", e.name, bin_path.display()))
        })?;
        let values = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        state.entries.push((e.name.clone(), e.kind, e.shape.clone(), values));
    }
    let mut model = CascadeModel::new(&manifest.spec, 0)?;
    state.restore(&mut model)?;
    Ok((model, manifest))
}

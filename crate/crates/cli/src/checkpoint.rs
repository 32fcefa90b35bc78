//! Checkpoint format: a JSON manifest listing parameter names, shapes,
//! dtype and byte offsets, next to a raw little-endian float blob.
//! Save/load round-trips are bit-exact.
//!
//! `<base>.json` carries the manifest (model and SPN architecture, the
//! solved length plan, the parameter table); `<base>.bin` is the blob.
//! Processor parameters keep their own names; SPN parameters are the ones
//! prefixed `spn.`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sptmod_core::model::{LengthPlan, Spn, SpnConfig, Sptmod, SptmodConfig};
use sptmod_core::autodiff::Tensor;
use sptmod_core::Scalar;

/// Scalar types that can live in a checkpoint blob.
pub trait ScalarBytes: Scalar {
    const DTYPE: &'static str;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl ScalarBytes for f32 {
    const DTYPE: &'static str = "f32";
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl ScalarBytes for f64 {
    const DTYPE: &'static str = "f64";
    const SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Number of scalar values.
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub model: SptmodConfig,
    pub spn: SpnConfig,
    pub length_plan: Option<LengthPlan>,
    pub params: Vec<ParamRecord>,
}

pub fn manifest_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

pub fn blob_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

/// Writes `<base>.json` and `<base>.bin`.
pub fn save<S: ScalarBytes>(
    base: &Path,
    model: &Sptmod<S>,
    spn: &Spn<S>,
    length_plan: Option<&LengthPlan>,
) -> Result<()> {
    let mut params = Vec::new();
    let mut blob = Vec::new();
    for p in model.params().iter().chain(spn.params().iter()) {
        params.push(ParamRecord {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: blob.len() as u64,
            len: p.value.numel() as u64,
        });
        for &v in p.value.data() {
            v.write_le(&mut blob);
        }
    }
    let manifest = CheckpointManifest {
        format_version: 1,
        dtype: S::DTYPE.to_string(),
        model: model.config().clone(),
        spn: spn.config().clone(),
        length_plan: length_plan.cloned(),
        params,
    };
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(manifest_path(base), serde_json::to_vec_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_path(base).display()))?;
    fs::write(blob_path(base), blob).with_context(|| format!("writing {}", blob_path(base).display()))?;
    Ok(())
}

/// Loads a checkpoint saved by [`save`]; the requested precision must match
/// the stored dtype.
pub fn load<S: ScalarBytes>(base: &Path) -> Result<(Sptmod<S>, Spn<S>, Option<LengthPlan>)> {
    let manifest: CheckpointManifest = serde_json::from_slice(
        &fs::read(manifest_path(base)).with_context(|| format!("reading {}", manifest_path(base).display()))?,
    )?;
    if manifest.dtype != S::DTYPE {
        bail!(
            "checkpoint holds {} parameters, requested precision is {}",
            manifest.dtype,
            S::DTYPE
        );
    }
    let blob = fs::read(blob_path(base)).with_context(|| format!("reading {}", blob_path(base).display()))?;

    let mut model = Sptmod::<S>::new(manifest.model.clone(), 0).map_err(anyhow::Error::msg)?;
    let mut spn = Spn::<S>::new(manifest.spn.clone(), &manifest.model, 0).map_err(anyhow::Error::msg)?;
    let expected = model.params().len() + spn.params().len();
    if manifest.params.len() != expected {
        bail!(
            "checkpoint lists {} parameters, architecture has {}",
            manifest.params.len(),
            expected
        );
    }
    for record in &manifest.params {
        let start = record.offset as usize;
        let end = start + record.len as usize * S::SIZE;
        if end > blob.len() {
            bail!("parameter `{}` extends past the blob", record.name);
        }
        let values: Vec<S> = blob[start..end].chunks_exact(S::SIZE).map(S::read_le).collect();
        let tensor = Tensor::new(&record.shape, values).map_err(anyhow::Error::msg)?;
        let target = if record.name.starts_with("spn.") {
            spn.params_mut()
        } else {
            model.params_mut()
        };
        target.set_by_name(&record.name, tensor).map_err(anyhow::Error::msg)?;
    }
    Ok((model, spn, manifest.length_plan))
}

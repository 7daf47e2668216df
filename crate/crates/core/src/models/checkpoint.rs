use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::classifier::{build_classifier, Classifier, ClassifierSpec};
use super::segmenter::{build_segmenter, SegNetSpec, Segmenter};
use crate::error::{Error, Result};
use crate::nn::{Module, Param};

pub const PARAMS_FILE: &str = "params.bin";
pub const SIDECAR_FILE: &str = "model.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Segmenter,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// JSON sidecar stored next to the parameter blob.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub kind: ModelKind,
    pub spec: serde_json::Value,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    pub checksum: String,
}

/// SHA-256 over every parameter's shape and little-endian values, in visit order.
pub fn param_checksum<M: Module + ?Sized>(model: &M) -> String {
    let mut hasher = Sha256::new();
    model.visit(&mut |p: &Param| {
        for &d in &p.shape {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in &p.value {
            hasher.update(v.to_le_bytes());
        }
    });
    hex::encode(hasher.finalize())
}

fn param_entries<M: Module + ?Sized>(model: &M) -> Vec<ParamEntry> {
    let mut out = Vec::new();
    model.visit(&mut |p| out.push(ParamEntry { name: p.name.clone(), shape: p.shape.clone() }));
    out
}

fn write_checkpoint<M: Module + ?Sized>(
    dir: &Path,
    kind: ModelKind,
    spec: serde_json::Value,
    seed: u64,
    model: &M,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    model.visit(&mut |p| {
        for v in &p.value {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    });
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, &blob).map_err(|e| Error::io(&params_path, e))?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        kind,
        spec,
        seed,
        params: param_entries(model),
        checksum: param_checksum(model),
    };
    let meta_path = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let meta_path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
    }
    Ok(meta)
}

fn read_blob(dir: &Path) -> Result<Vec<f32>> {
    let params_path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("{} has a truncated value", params_path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Copy `values` into the model's parameters, checking names and shapes.
fn assign<M: Module + ?Sized>(model: &mut M, entries: &[ParamEntry], values: &[f32]) -> Result<()> {
    let expected = param_entries(model);
    if expected != entries {
        return Err(Error::Checkpoint("parameter layout does not match the architecture".into()));
    }
    let total: usize = expected.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if total != values.len() {
        return Err(Error::Checkpoint(format!("expected {total} values, blob has {}", values.len())));
    }
    let mut offset = 0;
    model.visit_mut(&mut |p| {
        let n = p.value.len();
        p.value.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    });
    Ok(())
}

fn load_into<M: Module + ?Sized>(model: &mut M, dir: &Path, meta: &CheckpointMeta) -> Result<()> {
    let values = read_blob(dir)?;
    assign(model, &meta.params, &values)?;
    let sum = param_checksum(model);
    if sum != meta.checksum {
        return Err(Error::Checkpoint(format!("checksum mismatch in {}", dir.display())));
    }
    Ok(())
}

pub fn save_segmenter(dir: &Path, model: &Segmenter) -> Result<()> {
    write_checkpoint(dir, ModelKind::Segmenter, serde_json::to_value(model.spec())?, model.seed(), model)
}

pub fn save_classifier(dir: &Path, model: &Classifier) -> Result<()> {
    write_checkpoint(dir, ModelKind::Classifier, serde_json::to_value(model.spec())?, model.seed(), model)
}

fn expect_kind(meta: &CheckpointMeta, kind: ModelKind, dir: &Path) -> Result<()> {
    if meta.kind != kind {
        return Err(Error::Checkpoint(format!("{} holds a {:?}, not a {:?}", dir.display(), meta.kind, kind)));
    }
    Ok(())
}

pub fn load_segmenter(dir: &Path) -> Result<Segmenter> {
    let meta = read_meta(dir)?;
    expect_kind(&meta, ModelKind::Segmenter, dir)?;
    let spec: SegNetSpec = serde_json::from_value(meta.spec.clone())?;
    let mut model = build_segmenter(&spec, meta.seed)?;
    load_into(&mut model, dir, &meta)?;
    Ok(model)
}

pub fn load_classifier(dir: &Path) -> Result<Classifier> {
    let meta = read_meta(dir)?;
    expect_kind(&meta, ModelKind::Classifier, dir)?;
    let spec: ClassifierSpec = serde_json::from_value(meta.spec.clone())?;
    let mut model = build_classifier(&spec, meta.seed, None)?;
    load_into(&mut model, dir, &meta)?;
    Ok(model)
}

/// Load backbone weights from a checkpoint directory whose stem may take
/// 3 input channels. A 3-channel stem is collapsed to 1 channel by averaging
/// over the colour axis; every other parameter must match exactly.
pub fn load_pretrained(model: &mut Classifier, dir: &Path) -> Result<()> {
    let meta = read_meta(dir)?;
    let values = read_blob(dir)?;
    let expected = param_entries(model);
    if expected.len() != meta.params.len() {
        return Err(Error::Checkpoint(format!(
            "pretrained file has {} tensors, architecture has {}",
            meta.params.len(),
            expected.len()
        )));
    }
    let mut collapsed = Vec::with_capacity(values.len());
    let mut offset = 0;
    for (want, have) in expected.iter().zip(&meta.params) {
        let n: usize = have.shape.iter().product();
        let src = values
            .get(offset..offset + n)
            .ok_or_else(|| Error::Checkpoint("pretrained blob is shorter than its sidecar".into()))?;
        offset += n;
        if want.name != have.name {
            return Err(Error::Checkpoint(format!("expected tensor {}, found {}", want.name, have.name)));
        }
        if want.shape == have.shape {
            collapsed.extend_from_slice(src);
        } else if have.shape.len() == 4
            && want.shape.len() == 4
            && have.shape[1] == 3
            && want.shape[1] == 1
            && have.shape[0] == want.shape[0]
            && have.shape[2..] == want.shape[2..]
        {
            let (cout, plane) = (have.shape[0], have.shape[2] * have.shape[3]);
            for o in 0..cout {
                for i in 0..plane {
                    let base = o * 3 * plane + i;
                    collapsed.push((src[base] + src[base + plane] + src[base + 2 * plane]) / 3.0);
                }
            }
        } else {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, architecture needs {:?}",
                want.name, have.shape, want.shape
            )));
        }
    }
    if offset != values.len() {
        return Err(Error::Checkpoint("pretrained blob is longer than its sidecar".into()));
    }
    assign(model, &expected, &collapsed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn segmenter_round_trip_is_bit_exact() {
        let spec = SegNetSpec { depth: 3, base_channels: 4, ..SegNetSpec::default() };
        let mut model = build_segmenter(&spec, 5).unwrap();
        // move the running statistics away from their initial values
        let x = Tensor::from_vec(2, 1, 16, 16, (0..512).map(|i| (i as f32 * 0.37).sin()).collect());
        model.forward(&x, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_segmenter(dir.path(), &model).unwrap();
        let loaded = load_segmenter(dir.path()).unwrap();
        assert_eq!(param_checksum(&model), param_checksum(&loaded));
        let mut a = Vec::new();
        model.visit(&mut |p| a.extend(p.value.iter().map(|v| v.to_bits())));
        let mut b = Vec::new();
        loaded.visit(&mut |p| b.extend(p.value.iter().map(|v| v.to_bits())));
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_blob_is_rejected() {
        let spec = SegNetSpec { depth: 2, base_channels: 2, ..SegNetSpec::default() };
        let model = build_segmenter(&spec, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_segmenter(dir.path(), &model).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0x40;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_segmenter(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let spec = SegNetSpec { depth: 2, base_channels: 2, ..SegNetSpec::default() };
        let model = build_segmenter(&spec, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_segmenter(dir.path(), &model).unwrap();
        assert!(load_classifier(dir.path()).is_err());
    }
}

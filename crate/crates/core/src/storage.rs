//! On-disk artifacts: perturbation banks, model checkpoints, and run
//! records.
//!
//! Every artifact is a directory with a `manifest.json` (kind, schema
//! version, SHA-256 content hash, payload file list, creation time, and
//! kind-specific metadata) next to its payload files. Loading verifies the
//! version and the hash before deserializing, and banks are re-validated
//! through their regular constructor so a corrupt file can never produce an
//! invariant-violating bank in memory.
//!
//! Tensor payloads use a small header: magic `ULET`, schema version (u32),
//! dtype byte (1 = f32, 2 = f64), rank (u8), two reserved bytes, then the
//! dims as u32s — everything little-endian — followed by the raw data.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array4, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crafting::{CraftMeta, PerturbationBank};
use crate::error::{Error, Result};
use crate::exploiter::RunRecord;
use crate::models::{self, Classifier, ModelSpec};

pub const SCHEMA_VERSION: u32 = 1;
const TENSOR_MAGIC: &[u8; 4] = b"ULET";

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

// ---------------------------------------------------------------------------
// Tensor encoding

fn encode_tensor(dims: &[usize], dtype: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + dims.len() * 4 + payload.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.push(dtype);
    out.push(dims.len() as u8);
    out.extend_from_slice(&[0u8, 0u8]); // reserved
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(payload);
    out
}

fn decode_header(bytes: &[u8], path: &Path) -> Result<(u8, Vec<usize>, usize)> {
    let fail = |reason: &str| Error::Load {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 {
        return Err(fail("tensor file shorter than its header"));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(fail("bad magic: not a tensor file"));
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != SCHEMA_VERSION {
        return Err(Error::Version { found: version, supported: SCHEMA_VERSION });
    }
    let dtype = bytes[8];
    let rank = bytes[9] as usize;
    if bytes.len() < 12 + rank * 4 {
        return Err(fail("tensor file truncated inside the dims block"));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| LittleEndian::read_u32(&bytes[12 + i * 4..16 + i * 4]) as usize)
        .collect();
    Ok((dtype, dims, 12 + rank * 4))
}

/// Serialize an f32 tensor into the on-disk byte layout.
pub fn encode_f32(dims: &[usize], data: &[f32]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut payload = vec![0u8; data.len() * 4];
    LittleEndian::write_f32_into(data, &mut payload);
    encode_tensor(dims, DTYPE_F32, &payload)
}

/// Parse an f32 tensor; `path` only labels error messages.
pub fn decode_f32(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let (dtype, dims, offset) = decode_header(bytes, path)?;
    let count: usize = dims.iter().product();
    if dtype != DTYPE_F32 || bytes.len() != offset + count * 4 {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: "dtype or payload size mismatch for f32 tensor".into(),
        });
    }
    let mut data = vec![0.0f32; count];
    LittleEndian::read_f32_into(&bytes[offset..], &mut data);
    Ok((dims, data))
}

/// Serialize an f64 tensor into the on-disk byte layout.
pub fn encode_f64(dims: &[usize], data: &[f64]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), data.len());
    let mut payload = vec![0u8; data.len() * 8];
    LittleEndian::write_f64_into(data, &mut payload);
    encode_tensor(dims, DTYPE_F64, &payload)
}

/// Parse an f64 tensor; `path` only labels error messages.
pub fn decode_f64(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let (dtype, dims, offset) = decode_header(bytes, path)?;
    let count: usize = dims.iter().product();
    if dtype != DTYPE_F64 || bytes.len() != offset + count * 8 {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: "dtype or payload size mismatch for f64 tensor".into(),
        });
    }
    let mut data = vec![0.0f64; count];
    LittleEndian::read_f64_into(&bytes[offset..], &mut data);
    Ok((dims, data))
}

/// Write via a temp file + rename so readers never observe a half-written
/// artifact.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    schema_version: u32,
    /// SHA-256 over the payload files' bytes, concatenated in listed order.
    content_hash: String,
    payload_files: Vec<String>,
    created_unix: u64,
    meta: serde_json::Value,
}

fn hash_files(dir: &Path, files: &[String]) -> Result<String> {
    let mut hasher = Sha256::new();
    for f in files {
        let bytes = fs::read(dir.join(f)).map_err(|e| Error::Load {
            path: dir.join(f),
            reason: e.to_string(),
        })?;
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(dir: &Path, kind: &str, files: Vec<String>, meta: serde_json::Value) -> Result<()> {
    let manifest = Manifest {
        kind: kind.to_string(),
        schema_version: SCHEMA_VERSION,
        content_hash: hash_files(dir, &files)?,
        payload_files: files,
        created_unix: now_unix(),
        meta,
    };
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)
}

/// Read the manifest, check kind and version, and verify the payload hash.
fn read_manifest(dir: &Path, expected_kind: &str) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::Load {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::Version {
            found: manifest.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    if manifest.kind != expected_kind {
        return Err(Error::Load {
            path,
            reason: format!("artifact kind is {:?}, expected {expected_kind:?}", manifest.kind),
        });
    }
    let actual = hash_files(dir, &manifest.payload_files)?;
    if actual != manifest.content_hash {
        return Err(Error::Integrity {
            path: dir.to_path_buf(),
            reason: format!(
                "content hash mismatch: manifest says {}, payload hashes to {actual}",
                manifest.content_hash
            ),
        });
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Perturbation banks

#[derive(Serialize, Deserialize)]
struct BankMeta {
    epsilon: f64,
    gray_constrained: bool,
    sample_ids: Vec<u64>,
    craft_meta: Option<CraftMeta>,
}

/// Save a bank as `manifest.json` + `delta.ult` under `dir` (created if
/// missing).
pub fn save_bank(dir: &Path, bank: &PerturbationBank) -> Result<()> {
    fs::create_dir_all(dir)?;
    let delta = bank.deltas().as_standard_layout();
    let (n, h, w, c) = bank.deltas().dim();
    let bytes = encode_f32(&[n, h, w, c], delta.as_slice().expect("standard layout"));
    write_atomic(&dir.join("delta.ult"), &bytes)?;
    let meta = BankMeta {
        epsilon: bank.epsilon(),
        gray_constrained: bank.gray_constrained(),
        sample_ids: bank.sample_ids().to_vec(),
        craft_meta: bank.meta.clone(),
    };
    write_manifest(dir, "perturbation_bank", vec!["delta.ult".into()], serde_json::to_value(meta)?)
}

/// Load and fully re-validate a bank (hash, schema version, and the bank's
/// own budget/channel invariants).
pub fn load_bank(dir: &Path) -> Result<PerturbationBank> {
    let manifest = read_manifest(dir, "perturbation_bank")?;
    let meta: BankMeta = serde_json::from_value(manifest.meta)?;
    let path = dir.join("delta.ult");
    let bytes = fs::read(&path).map_err(|e| Error::Load { path: path.clone(), reason: e.to_string() })?;
    let (dims, data) = decode_f32(&bytes, &path)?;
    if dims.len() != 4 {
        return Err(Error::Load { path, reason: format!("expected rank-4 deltas, got {dims:?}") });
    }
    let delta = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), data)
        .map_err(|e| Error::Load { path, reason: e.to_string() })?;
    PerturbationBank::new(meta.epsilon, meta.gray_constrained, meta.sample_ids, delta, meta.craft_meta)
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model_spec: ModelSpec,
    tensor_shapes: Vec<Vec<usize>>,
}

/// Save a model as `manifest.json` + `params.ult` (all parameters and
/// buffers flattened into one f64 tensor; shapes in the manifest).
pub fn save_checkpoint(dir: &Path, model: &mut Classifier) -> Result<()> {
    fs::create_dir_all(dir)?;
    let state = model.state();
    let shapes: Vec<Vec<usize>> = state.iter().map(|t| t.shape().to_vec()).collect();
    let mut flat = Vec::new();
    for t in &state {
        flat.extend(t.as_standard_layout().iter().copied());
    }
    let bytes = encode_f64(&[flat.len()], &flat);
    write_atomic(&dir.join("params.ult"), &bytes)?;
    let meta = CheckpointMeta { model_spec: model.spec, tensor_shapes: shapes };
    write_manifest(dir, "checkpoint", vec!["params.ult".into()], serde_json::to_value(meta)?)
}

/// Rebuild the architecture from its spec and restore the saved state.
pub fn load_checkpoint(dir: &Path) -> Result<Classifier> {
    let manifest = read_manifest(dir, "checkpoint")?;
    let meta: CheckpointMeta = serde_json::from_value(manifest.meta)?;
    let path = dir.join("params.ult");
    let bytes = fs::read(&path).map_err(|e| Error::Load { path: path.clone(), reason: e.to_string() })?;
    let (dims, flat) = decode_f64(&bytes, &path)?;
    let expected: usize = meta.tensor_shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if dims != [expected] {
        return Err(Error::Load {
            path,
            reason: format!("flat state holds {dims:?} values, shapes require {expected}"),
        });
    }

    let mut model = models::build(&meta.model_spec)?;
    let mut state = Vec::with_capacity(meta.tensor_shapes.len());
    let mut offset = 0;
    for shape in &meta.tensor_shapes {
        let count: usize = shape.iter().product();
        let values = flat[offset..offset + count].to_vec();
        offset += count;
        state.push(
            ArrayD::from_shape_vec(IxDyn(shape), values).expect("count matches shape"),
        );
    }
    model.set_state(&state);
    Ok(model)
}

// ---------------------------------------------------------------------------
// Run records

/// Save a record as `manifest.json` + `record.json` + `epochs.csv`.
pub fn save_record(dir: &Path, record: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("record.json"), &serde_json::to_vec_pretty(record)?)?;
    write_atomic(&dir.join("epochs.csv"), epochs_csv(record).as_bytes())?;
    write_manifest(
        dir,
        "run_record",
        vec!["record.json".into(), "epochs.csv".into()],
        serde_json::Value::Null,
    )
}

pub fn load_record(dir: &Path) -> Result<RunRecord> {
    let manifest = read_manifest(dir, "run_record")?;
    let _ = manifest;
    let path = dir.join("record.json");
    let bytes = fs::read(&path).map_err(|e| Error::Load { path, reason: e.to_string() })?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Per-epoch metrics in spreadsheet-friendly form.
pub fn epochs_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,clean_test_acc");
    if record.val_acc.is_some() {
        out.push_str(",val_acc");
    }
    out.push('\n');
    for e in 0..record.epochs_run {
        out.push_str(&format!(
            "{e},{:.6},{:.4},{:.4}",
            record.train_loss[e], record.train_acc[e], record.clean_test_acc[e]
        ));
        if let Some(va) = &record.val_acc {
            out.push_str(&format!(",{:.4}", va[e]));
        }
        out.push('\n');
    }
    out
}

/// Directory for one artifact inside an output root, e.g.
/// `<root>/banks/<name>`.
pub fn artifact_dir(root: &Path, group: &str, name: &str) -> PathBuf {
    root.join(group).join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ImageDataset, SplitTag};
    use crate::exploiter::{ExploiterSpec, ScheduleSpec};
    use crate::mitigations::TransformStack;
    use crate::models::{Arch, Normalization};
    use ndarray::Array4;
    use rand::Rng;

    fn tiny_bank() -> PerturbationBank {
        let mut r = crate::rng::stream(31, "storage-test");
        let delta = Array4::from_shape_fn((4, 6, 6, 3), |_| r.random_range(-0.03..0.03f32));
        PerturbationBank::new(0.05, false, vec![7, 3, 11, 5], delta, None).unwrap()
    }

    fn tiny_model_spec() -> ModelSpec {
        ModelSpec {
            arch: Arch::SmallCnn,
            class_count: 3,
            input_shape: (8, 8, 3),
            normalization: Normalization::centered(),
            init_seed: 9,
        }
    }

    #[test]
    fn bank_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bank = tiny_bank();
        save_bank(dir.path(), &bank).unwrap();
        let back = load_bank(dir.path()).unwrap();
        assert_eq!(bank.content_hash(), back.content_hash());
        assert_eq!(bank.sample_ids(), back.sample_ids());
        assert_eq!(bank.epsilon(), back.epsilon());
    }

    #[test]
    fn bank_with_craft_meta_round_trips() {
        use crate::crafting::{craft, CraftSpec, Variant};
        let mut r = crate::rng::stream(32, "storage-test-ds");
        let images = Array4::from_shape_fn((6, 8, 8, 3), |_| r.random_range(0.2..0.8));
        let ds = ImageDataset::new(
            images,
            vec![0, 1, 2, 0, 1, 2],
            (0..6).collect(),
            SplitTag::Train,
            3,
            None,
        )
        .unwrap();
        let spec = CraftSpec {
            inner_steps: 2,
            outer_steps: 2,
            batch_size: 6,
            max_rounds: 1,
            ..CraftSpec::standard(Variant::UleoGray, tiny_model_spec(), 8.0 / 255.0, 1)
        };
        let bank = craft(&ds, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bank(dir.path(), &bank).unwrap();
        let back = load_bank(dir.path()).unwrap();
        assert_eq!(bank.meta, back.meta);
        assert_eq!(bank.content_hash(), back.content_hash());
        assert!(back.gray_constrained());
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bank(dir.path(), &tiny_bank()).unwrap();
        let path = dir.path().join("delta.ult");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_bank(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn future_schema_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bank(dir.path(), &tiny_bank()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_bank(dir.path()),
            Err(Error::Version { found: 99, supported: 1 })
        ));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_bank(dir.path(), &tiny_bank()).unwrap();
        assert!(matches!(load_record(dir.path()), Err(Error::Load { .. })));
    }

    #[test]
    fn checkpoint_round_trip_preserves_behavior() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = models::build(&tiny_model_spec()).unwrap();
        // Perturb away from init so the test can't pass by rebuilding.
        model.net.visit_params(&mut |p| p.value += 0.01);
        let x = Array4::from_elem((2, 8, 8, 3), 0.4);
        let before = model.logits(&x, ule_nn::Mode::Eval);
        save_checkpoint(dir.path(), &mut model).unwrap();
        let mut back = load_checkpoint(dir.path()).unwrap();
        let after = back.logits(&x, ule_nn::Mode::Eval);
        assert_eq!(before, after);
        assert_eq!(model.state(), back.state());
    }

    #[test]
    fn record_round_trip_and_csv() {
        let record = RunRecord {
            schema_version: 1,
            spec: ExploiterSpec {
                epochs: 2,
                batch_size: 4,
                lr: 0.1,
                schedule: ScheduleSpec::Constant,
                transforms: TransformStack::default(),
                ..ExploiterSpec::standard(tiny_model_spec(), 3)
            },
            data_note: "test".into(),
            bank_hash: Some("abc".into()),
            train_loss: vec![1.0, 0.5],
            train_acc: vec![0.4, 0.8],
            clean_test_acc: vec![0.5, 0.7],
            val_acc: None,
            final_clean_acc: 0.7,
            robust_acc: vec![],
            epochs_run: 2,
            best_epoch: None,
            stopped_early: false,
            diverged: false,
            wall_seconds: 1.25,
            seed: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        save_record(dir.path(), &record).unwrap();
        let back = load_record(dir.path()).unwrap();
        assert_eq!(record, back);
        let csv = epochs_csv(&record);
        assert!(csv.starts_with("epoch,train_loss,train_acc,clean_test_acc\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}

//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `RBCKPT\0\0`, u32 format version, u32 manifest length, JSON manifest,
//! u32 array count, then per array a u32 name length, the UTF-8 name, a u64
//! element count and the f64 values; finally the SHA-256 of every preceding
//! byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, ModelKind, ModelState, NamedArray, Result};
use crate::rng::RngState;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RBCKPT\0\0";
const DIGEST_LEN: usize = 32;

/// Run-level metadata stored next to the model state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub best_valid_metric: Option<f64>,
    /// Free-form data owned by the caller, such as trainer state.
    pub extra: serde_json::Value,
    /// The resolved configuration text the run was started from.
    pub config: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_kind: ModelKind,
    config_hash: String,
    epoch: usize,
    best_valid_metric: Option<f64>,
    rng_state: Option<RngState>,
    hyper: BTreeMap<String, f64>,
    extra: serde_json::Value,
    config: String,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Corrupt(msg.into())
}

pub fn encode(state: &ModelState, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if let Some((k, _)) = state.hyper.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ModelError::InvalidState(format!("hyperparameter `{k}` is not finite")));
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_kind: state.kind,
        config_hash: meta.config_hash.clone(),
        epoch: state.epoch,
        best_valid_metric: meta.best_valid_metric.filter(|m| m.is_finite()),
        rng_state: state.rng.clone(),
        hyper: state.hyper.clone(),
        extra: meta.extra.clone(),
        config: meta.config.clone(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| ModelError::InvalidState(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(state.arrays.len() as u32).to_le_bytes());
    for a in &state.arrays {
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.extend_from_slice(&(a.data.len() as u64).to_le_bytes());
        for x in &a.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelState, CheckpointMeta)> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let json_len = r.u32()? as usize;
    let manifest: Manifest =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(corrupt("manifest version disagrees with the header"));
    }
    let count = r.u32()? as usize;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("array name is not UTF-8"))?
            .to_string();
        let len = usize::try_from(r.u64()?).map_err(|_| corrupt("array too large"))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| corrupt("array too large"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(NamedArray { name, data });
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after the arrays"));
    }
    let state = ModelState {
        kind: manifest.model_kind,
        hyper: manifest.hyper,
        arrays,
        epoch: manifest.epoch,
        rng: manifest.rng_state,
    };
    let meta = CheckpointMeta {
        config_hash: manifest.config_hash,
        best_valid_metric: manifest.best_valid_metric,
        extra: manifest.extra,
        config: manifest.config,
    };
    Ok((state, meta))
}

/// Writes through a temporary sibling and a rename so that a crash never
/// leaves a half-written checkpoint behind.
pub fn save_state(path: &Path, state: &ModelState, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode(state, meta)?;
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_state(path: &Path) -> Result<(ModelState, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, restore, ModelParams, TrainConfig, TrainData};

    fn models() -> Vec<Box<dyn crate::models::Recommender>> {
        let text = "user_id:token,item_id:token,label:float\n\
            a,x,1\na,y,0\nb,y,1\nb,z,1\nc,x,1\nc,w,0\nd,w,1\n";
        let ds = crate::dataset::test_support::from_text(text);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let data = TrainData::new(&ds, &rows);
        let cfg = TrainConfig {
            embedding_size: 3,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let params = ModelParams {
            knn_k: 2,
            ..ModelParams::default()
        };
        [
            ModelKind::Pop,
            ModelKind::ItemKnn,
            ModelKind::Bpr,
            ModelKind::Ease,
            ModelKind::Fm,
        ]
        .into_iter()
        .map(|k| {
            let mut m = build_model(k, &ds, &data, &cfg, &params).unwrap();
            m.train_epoch(&data).unwrap();
            m
        })
        .collect()
    }

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            config_hash: "abc".into(),
            best_valid_metric: Some(0.1 + 0.2),
            extra: serde_json::json!({"k": 1}),
            config: "seed: 1\n".into(),
        }
    }

    #[test]
    fn round_trip_preserves_scores_for_every_model() {
        let dir = tempfile::tempdir().unwrap();
        for m in models() {
            let path = dir.path().join(format!("{}.ckpt", m.kind()));
            save_state(&path, &m.state(), &meta()).unwrap();
            let (state, back) = load_state(&path).unwrap();
            assert_eq!(state, m.state());
            assert_eq!(back, meta());
            let restored = restore(&state).unwrap();
            let users = [0, 1, 2, 3, 4];
            assert_eq!(
                restored.full_sort_predict(&users).unwrap(),
                m.full_sort_predict(&users).unwrap()
            );
        }
    }

    #[test]
    fn detects_corruption() {
        let m = &models()[2];
        let bytes = encode(&m.state(), &meta()).unwrap();
        for pos in [0, 9, 40, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x5a;
            assert!(matches!(decode(&bad), Err(ModelError::Corrupt(_))), "byte {pos}");
        }
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(ModelError::Corrupt(_))));
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn rejects_other_versions() {
        let m = &models()[0];
        let mut bytes = encode(&m.state(), &meta()).unwrap();
        bytes.truncate(bytes.len() - DIGEST_LEN);
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        assert!(matches!(
            decode(&bytes),
            Err(ModelError::VersionMismatch {
                found: 7,
                expected: FORMAT_VERSION
            })
        ));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_state(&dir.path().join("none")),
            Err(ModelError::Io { .. })
        ));
    }
}

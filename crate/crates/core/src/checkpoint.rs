//! Binary checkpoints.
//!
//! Layout: the 8 bytes `HPINNCK1`, a little-endian `u64` header length, a
//! JSON header, then every array's values as little-endian `f64` in
//! row-major order at the offsets the header lists (counted in values from
//! the start of the payload).

use std::fs;
use std::path::Path;

use hpinn_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{NormStats, Subset};
use crate::error::{CoreError, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"HPINNCK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayKind {
    Parameter,
    /// Normalization running statistics.
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub kind: ArrayKind,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: RunConfig,
    pub model: ModelConfig,
    pub subset: Subset,
    pub seed: u64,
    pub norm_stats: NormStats,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(
        config: RunConfig,
        model: Model,
        subset: Subset,
        seed: u64,
        norm_stats: NormStats,
        best_epoch: usize,
        best_val_rmse: f64,
    ) -> Self {
        let mut offset = 0;
        let arrays = model
            .store
            .entries()
            .iter()
            .map(|e| {
                let entry = ArrayEntry {
                    name: e.name.clone(),
                    kind: if e.trainable { ArrayKind::Parameter } else { ArrayKind::Buffer },
                    shape: [e.value.rows(), e.value.cols()],
                    offset,
                };
                offset += e.value.len();
                entry
            })
            .collect();
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            config,
            model: model.config.clone(),
            subset,
            seed,
            norm_stats,
            best_epoch,
            best_val_rmse,
            arrays,
        };
        Self { header, model }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header).expect("checkpoint header serializes");
        let values: usize = self.model.store.entries().iter().map(|e| e.value.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.model.store.entries() {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| CoreError::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing HPINNCK1 magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let payload = &bytes[16 + len..];
        let total: usize = header.arrays.iter().map(|a| a.shape[0] * a.shape[1]).sum();
        if payload.len() != 8 * total {
            return Err(bad(format!("payload holds {} bytes, header describes {}", payload.len(), 8 * total)));
        }
        let saved = header
            .arrays
            .iter()
            .map(|a| {
                let n = a.shape[0] * a.shape[1];
                let raw = payload.get(8 * a.offset..8 * (a.offset + n)).ok_or_else(|| bad(format!("array {} out of range", a.name)))?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                Ok((a.name.clone(), Tensor::new(a.shape[0], a.shape[1], data)))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model::with_parameters(header.model.clone(), saved)?;
        for (entry, a) in model.store.entries().iter().zip(&header.arrays) {
            if entry.trainable != (a.kind == ArrayKind::Parameter) {
                return Err(bad(format!("array {} has the wrong kind", a.name)));
            }
        }
        Ok(Self { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CoreError::Checkpoint(m) => CoreError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;

    fn sample(ablation: Ablation) -> Checkpoint {
        let mut model = Model::new(ModelConfig::new(6, 4, ablation), 5).unwrap();
        // awkward values must survive exactly
        model.store.entries_mut()[0].value.data_mut()[0] = 0.1 + 0.2;
        model.store.entries_mut()[1].value.data_mut()[0] = -f64::MIN_POSITIVE / 3.0;
        let stats = NormStats { min: vec![0.1, 1.0 / 3.0, -2.5, 7.0], max: vec![1.0, 2.0, 3.0, 9.1], t_max: 362.0 };
        Checkpoint::new(RunConfig::default(), model, Subset::FD002, 5, stats, 17, 12.345678901234567)
    }

    #[test]
    fn bytes_round_trip_bitwise() {
        for a in Ablation::ALL {
            let ck = sample(a);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back.header, ck.header);
            for (x, y) in back.model.store.entries().iter().zip(ck.model.store.entries()) {
                let bx: Vec<u64> = x.value.data().iter().map(|v| v.to_bits()).collect();
                let by: Vec<u64> = y.value.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(bx, by, "{}", x.name);
                assert_eq!(x.trainable, y.trainable);
            }
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample(Ablation::Full).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT........").is_err());
        let mut wrong = bytes.clone();
        wrong[3] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/ck.bin");
        let ck = sample(Ablation::M3);
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap().to_bytes(), ck.to_bytes());
        assert!(matches!(Checkpoint::load(&dir.path().join("none.bin")), Err(CoreError::MissingFile(_))));
    }
}

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use super::{TrainConfig, TrainError};
use crate::data::Normalizer;
use crate::model::{build_model, DeepSsmModel, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HSSMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained ensemble member with everything needed to predict or resume.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub seed: u64,
    pub epoch: usize,
    pub normalizer: Normalizer,
    pub model: DeepSsmModel,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: u64,
    epoch: usize,
    normalizer: Normalizer,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Layout: magic, `u32` version, `u64` header length, JSON header, then for
/// every named tensor its parameter values, Adam first moment and Adam
/// second moment as little-endian `f64`.
impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.model.named_parameters();
        let header = Header {
            model_config: self.model_config.clone(),
            train_config: self.train_config.clone(),
            seed: self.seed,
            epoch: self.epoch,
            normalizer: self.normalizer.clone(),
            adam_step: self.optimizer.step,
            tensors: named
                .iter()
                .map(|(n, _, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (i, (_, _, t)) in named.iter().enumerate() {
            for block in [t.data(), &self.optimizer.m[i], &self.optimizer.v[i]] {
                for x in block {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err("not a checkpoint file".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| format!("header: {e}"))?;
        let mut model = build_model(&header.model_config, 0).map_err(|e| e.to_string())?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_parameters()
            .into_iter()
            .map(|(n, _, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != header.tensors.len() {
            return Err(format!("expected {} tensors, found {}", expected.len(), header.tensors.len()));
        }
        let mut values = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
            if *name != entry.name || *shape != entry.shape {
                return Err(format!("tensor {} {:?} does not match model {name} {shape:?}", entry.name, entry.shape));
            }
            let n: usize = shape.iter().product();
            values.push(r.floats(n)?);
            m.push(r.floats(n)?);
            v.push(r.floats(n)?);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        model.load_parameters(&values).map_err(|e| e.to_string())?;
        Ok(Self {
            model_config: header.model_config,
            train_config: header.train_config,
            seed: header.seed,
            epoch: header.epoch,
            normalizer: header.normalizer,
            model,
            optimizer: AdamState {
                step: header.adam_step,
                m,
                v,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let err = |e: std::io::Error| TrainError::Checkpoint {
            path: path.display().to_string(),
            detail: e.to_string(),
        };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(err)?;
        f.write_all(&self.to_bytes()).map_err(err)?;
        f.sync_all().map_err(err)?;
        fs::rename(&tmp, path).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let fail = |detail: String| TrainError::Checkpoint {
            path: path.display().to_string(),
            detail,
        };
        let bytes = fs::read(path).map_err(|e| fail(e.to_string()))?;
        Self::from_bytes(&bytes).map_err(fail)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("truncated checkpoint")?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fit_normalizer, synthetic, Period, WindowedDataset, ATTRIBUTE_COLUMNS};
    use crate::model::Mode;
    use crate::train::train;

    fn trained() -> (Checkpoint, WindowedDataset) {
        let records = synthetic::two_basin_fixture();
        let names: Vec<String> = ATTRIBUTE_COLUMNS.iter().map(|s| s.to_string()).collect();
        let period = Period::new(records[0].start, records[0].date(400)).unwrap();
        let norm = fit_normalizer(&records, &names, &period).unwrap();
        let mc = ModelConfig {
            d_model: 8,
            d_state: 4,
            n_layer: 2,
            input_dim: 32,
            lookback: 30,
            ..ModelConfig::default()
        };
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 64,
            seeds: vec![5],
            ..TrainConfig::default()
        };
        let data = WindowedDataset::training(&records, &period, &norm, 30).unwrap();
        let out = train(build_model(&mc, 5).unwrap(), &data, &tc, 5, |_| {}).unwrap();
        let ck = Checkpoint {
            model_config: mc,
            train_config: tc,
            seed: 5,
            epoch: out.epoch,
            normalizer: norm,
            model: out.model,
            optimizer: out.optimizer,
        };
        (ck, data)
    }

    #[test]
    fn round_trip_reproduces_predictions() {
        let (ck, data) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("member.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.normalizer, ck.normalizer);
        let (x, _) = data.gather(&(0..16).collect::<Vec<_>>());
        let a = ck.model.forward(&x, Mode::Eval).unwrap();
        let b = back.model.forward(&x, Mode::Eval).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (ck, _) = trained();
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("not a checkpoint"));
        let mut longer = bytes;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }
}

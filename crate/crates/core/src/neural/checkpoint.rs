//! Versioned weight file: magic, version, header length, JSON header (arch,
//! config echo, tensor manifest), then the little-endian f32 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::params::TensorSpec;
use super::train::TrainConfig;
use super::NeuralError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TFCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub tensors: Vec<TensorSpec>,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub crate_version: String,
    /// Hash of the model and training configuration.
    #[serde(default)]
    pub config_hash: String,
    /// Validation MAE at the end of training, used for model selection.
    #[serde(default)]
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn new(model: &Model, params: Vec<f32>, train: Option<TrainConfig>, seed: u64) -> Self {
        Self {
            header: CheckpointHeader {
                model: model.config(),
                tensors: model.layout().tensors.clone(),
                train,
                seed,
                crate_version: crate::meta::VERSION.to_string(),
                config_hash: crate::meta::config_hash(&(model.config(), train)),
                val_mae: None,
            },
            params,
        }
    }

    /// Rebuilds the model and checks that the manifest matches it.
    pub fn model(&self) -> Result<Model, NeuralError> {
        let model = Model::new(&self.header.model);
        if model.layout().tensors != self.header.tensors {
            return Err(NeuralError::Checkpoint(
                "tensor manifest does not match the configured model".into(),
            ));
        }
        if self.params.len() != model.n_params() {
            return Err(NeuralError::Checkpoint(format!(
                "payload holds {} values, model needs {}",
                self.params.len(),
                model.n_params()
            )));
        }
        Ok(model)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), NeuralError> {
        let header =
            serde_json::to_vec(&self.header).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NeuralError::Checkpoint("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        r.read_exact(&mut b4)?;
        let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)
            .map_err(|e| NeuralError::Checkpoint(format!("header: {e}")))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let params = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let ck = Self { header, params };
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Arch, CgruConfig};

    #[test]
    fn round_trip_and_corruption() {
        let model = Model::new(&ModelConfig::Cgru(CgruConfig {
            height: 64,
            pool: 4,
            seq_len: 5,
            ..Default::default()
        }));
        let params = model.init::<f32>(1, 0.5);
        let mut ck = Checkpoint::new(&model, params.clone(), Some(TrainConfig::default()), 1);
        // Needs exact float parsing; the fast path is one ulp off here.
        ck.header.val_mae = Some(0.025352151165407122);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model().unwrap().arch(), Arch::Cgru);

        let mut short = buf.clone();
        short.truncate(buf.len() - 4);
        assert!(Checkpoint::read_from(&mut short.as_slice()).is_err());
        let mut bad = buf;
        bad[0] = 0;
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
    }
}

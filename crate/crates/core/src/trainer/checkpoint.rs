//! Checkpoint file: magic `VDCKPT1`, a little-endian `u64` header length, a
//! JSON header, then every parameter array as little-endian f64 in header
//! order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::diffcore::{ParamSet, Shape, Value};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::vocab::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"VDCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Train-set R@1 and MRR, on epochs where evaluation ran.
    pub train_r1: Option<f64>,
    pub train_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub vocab: Vocabulary,
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayHeader {
    name: String,
    rows: usize,
    cols: usize,
    requires_grad: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    step: u64,
    history: Vec<EpochStats>,
    vocab: Vec<String>,
    arrays: Vec<ArrayHeader>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.config,
            train: self.train.clone(),
            epoch: self.epoch,
            step: self.step,
            history: self.history.clone(),
            vocab: self.vocab.tokens()[2..].to_vec(),
            arrays: self
                .model
                .params
                .iter()
                .map(|(_, name, v)| ArrayHeader {
                    name: name.to_string(),
                    rows: v.shape.rows,
                    cols: v.shape.cols,
                    requires_grad: v.requires_grad,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, _, v) in self.model.params.iter() {
            for x in &v.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated"))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        let mut params = ParamSet::new();
        for a in &header.arrays {
            let shape = Shape::matrix(a.rows, a.cols);
            let mut raw = vec![0u8; shape.len() * 8];
            r.read_exact(&mut raw).map_err(|_| bad(format!("truncated array {}", a.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            params.add(a.name.clone(), Value::new(data, shape, a.requires_grad)?)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes"));
        }
        let vocab = Vocabulary::from_tokens(header.vocab);
        if vocab.len() != header.model.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                header.model.vocab_size
            )));
        }
        Ok(Checkpoint {
            model: Model::from_params(&header.model, params)?,
            train: header.train,
            vocab,
            epoch: header.epoch,
            step: header.step,
            history: header.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

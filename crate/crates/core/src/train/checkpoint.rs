//! Checkpoint files.
//!
//! Layout: the 9-byte magic `PHTCKPT1\n`, the manifest length as a
//! little-endian `u64`, the JSON manifest, then every tensor as raw
//! little-endian `f32` in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PhTrans};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 9] = b"PHTCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the data section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub iteration: u64,
    pub loss_history: Vec<f64>,
    pub tensors: Vec<TensorEntry>,
}

/// Parameters plus the run state needed to rebuild and describe them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub iteration: u64,
    pub loss_history: Vec<f64>,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        Manifest {
            model: self.model.clone(),
            train: self.train.clone(),
            seed: self.seed,
            iteration: self.iteration,
            loss_history: self.loss_history.clone(),
            tensors,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let json = serde_json::to_vec(&self.manifest()).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, t) in self.params.iter() {
            let mut buf = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 9];
        r.read_exact(&mut magic).map_err(|_| Error::Format("checkpoint truncated".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 30 {
            return Err(Error::Format(format!("manifest length {len} is implausible")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let m: Manifest = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut params = ParamSet::new();
        let mut expect = 0u64;
        for e in &m.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            if e.offset != expect {
                return Err(Error::Format(format!("{}: offset {} where {expect} expected", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset as usize + 4 * n;
            let bytes = data
                .get(e.offset as usize..end)
                .ok_or_else(|| Error::Format(format!("{}: data section too short", e.name)))?;
            let vals = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), vals)?)?;
            expect = end as u64;
        }
        if expect as usize != data.len() {
            return Err(Error::Format(format!("{} trailing bytes after tensors", data.len() - expect as usize)));
        }
        Ok(Self {
            model: m.model,
            train: m.train,
            seed: m.seed,
            iteration: m.iteration,
            loss_history: m.loss_history,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        self.write_to(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Rebuilds the network and checks that the stored tensors match its
    /// parameters one for one.
    pub fn instantiate(&self) -> Result<(PhTrans, ParamSet<f32>)> {
        let (net, fresh) = PhTrans::build::<f32>(&self.model, 0)?;
        let names: Vec<(&str, &[usize])> = fresh.iter().map(|(n, t)| (n, t.shape())).collect();
        let stored: Vec<(&str, &[usize])> = self.params.iter().map(|(n, t)| (n, t.shape())).collect();
        if names != stored {
            let first = names
                .iter()
                .zip(&stored)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("{} tensors expected, {} stored", names.len(), stored.len()));
            return Err(Error::Format(format!("checkpoint does not match its model config: {first}")));
        }
        Ok((net, self.params.clone()))
    }
}

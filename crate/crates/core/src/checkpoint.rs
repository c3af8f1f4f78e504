//! Binary checkpoints: magic, format version, a JSON header, then named
//! parameter blocks of little-endian f64.
//!
//! ```text
//! b"SLCKPT\0\0" | u32 version | u64 header_len | header json
//! u32 blocks | { u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[] }*
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Normalizer;
use crate::error::{Error, Result};
use crate::evaluation::OracleModel;
use crate::ffnn::{FfnnConfig, FfnnModel};
use crate::kt::{KtConfig, KtModel};
use crate::numerics::{ParamSet, Tensor};
use crate::training::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SLCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum ModelSpec {
    Kt(KtConfig),
    Ffnn(FfnnConfig),
    /// Lookup table of dataset labels; a reference predictor for tests.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelSpec,
    pub normalizer: Normalizer,
    pub force_limit_n: f64,
    /// sha256 of the dataset file the model was trained on.
    pub dataset_hash: String,
    /// sha256 of the toolkit configuration that produced the run.
    pub config_hash: String,
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Kt(KtModel),
    Ffnn(FfnnModel),
    Oracle(OracleModel),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Kt(_) => "kt",
            Model::Ffnn(_) => "ffnn",
            Model::Oracle(_) => "oracle",
        }
    }

    fn spec(&self) -> ModelSpec {
        match self {
            Model::Kt(m) => ModelSpec::Kt(m.config().clone()),
            Model::Ffnn(m) => ModelSpec::Ffnn(m.config().clone()),
            Model::Oracle(_) => ModelSpec::Oracle,
        }
    }

    fn normalizer(&self) -> &Normalizer {
        match self {
            Model::Kt(m) => m.normalizer(),
            Model::Ffnn(m) => m.normalizer(),
            Model::Oracle(m) => m.normalizer(),
        }
    }

    fn force_limit_n(&self) -> f64 {
        match self {
            Model::Kt(m) => m.force_limit_n(),
            Model::Ffnn(m) => m.force_limit_n(),
            Model::Oracle(_) => crate::kt::DEFAULT_FORCE_LIMIT_N,
        }
    }

    fn params(&self) -> ParamSet {
        match self {
            Model::Kt(m) => m.params().clone(),
            Model::Ffnn(m) => m.params().clone(),
            Model::Oracle(m) => m.to_params(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn new(
        model: &Model,
        dataset_hash: impl Into<String>,
        config_hash: impl Into<String>,
        train: Option<TrainConfig>,
    ) -> Self {
        Self {
            header: CheckpointHeader {
                model: model.spec(),
                normalizer: model.normalizer().clone(),
                force_limit_n: model.force_limit_n(),
                dataset_hash: dataset_hash.into(),
                config_hash: config_hash.into(),
                train,
            },
            params: model.params(),
        }
    }

    /// Rebuilds the model, checking the stored layout against its config.
    pub fn to_model(&self) -> Result<Model> {
        let h = &self.header;
        let norm = h.normalizer.clone();
        Ok(match &h.model {
            ModelSpec::Kt(c) => Model::Kt(
                KtModel::from_parts(c.clone(), norm, &self.params)?
                    .with_force_limit(h.force_limit_n),
            ),
            ModelSpec::Ffnn(c) => Model::Ffnn(
                FfnnModel::from_parts(c.clone(), norm, &self.params)?
                    .with_force_limit(h.force_limit_n),
            ),
            ModelSpec::Oracle => Model::Oracle(OracleModel::from_params(norm, &self.params)?),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Format {
            what: "checkpoint header",
            detail: e.to_string(),
        })?;
        let mut out = Vec::with_capacity(64 + header.len() + 8 * self.params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(malformed("not a softlimb checkpoint"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(malformed(format!(
                "format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let len = r.u64()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| malformed(e.to_string()))?;
        let mut params = ParamSet::new();
        for _ in 0..r.u32()? {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| malformed(e.to_string()))?
                .to_owned();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| malformed("block size overflows"))?;
            let raw = r.take(
                count
                    .checked_mul(8)
                    .ok_or_else(|| malformed("block too large"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(name, Tensor::new(&shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes after the last block"));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| malformed("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

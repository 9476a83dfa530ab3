//! `BFMW` weight checkpoints: the model spec plus every parameter and
//! batch-norm state tensor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Block, BlockData, Container, ContainerError};
use crate::nn::{ModelSpec, ModelWeights, Real, Tensor, TensorMap};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BFMW";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("checkpoint is inconsistent: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: Kind,
    shape: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Param,
    State,
}

/// Checkpoint manifest. `extra` carries free-form provenance such as the
/// training dataset hash.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    spec: ModelSpec,
    dtype: String,
    tensors: Vec<Entry>,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub weights: ModelWeights<T>,
    pub extra: serde_json::Value,
}

fn block<T: Real>(t: &Tensor<T>) -> Block {
    if T::DTYPE == crate::container::DTYPE_F32 {
        Block::f32(&t.shape, t.data.iter().map(|v| v.as_f64() as f32).collect())
    } else {
        Block::f64(&t.shape, t.data.iter().map(|v| v.as_f64()).collect())
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn new(spec: ModelSpec, weights: ModelWeights<T>) -> Self {
        Checkpoint { spec, weights, extra: serde_json::Value::Null }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut blocks = Vec::new();
        for (kind, map) in [(Kind::Param, &self.weights.params), (Kind::State, &self.weights.state)] {
            for (name, t) in map {
                tensors.push(Entry { name: name.clone(), kind, shape: t.shape.clone() });
                blocks.push(block(t));
            }
        }
        let manifest = Manifest {
            schema_version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            dtype: T::NAME.into(),
            tensors,
            extra: self.extra.clone(),
        };
        Container {
            magic: CHECKPOINT_MAGIC,
            version: CHECKPOINT_VERSION,
            manifest: serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
            blocks,
        }
        .encode()
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.encode())
            .map_err(|source| ContainerError::Io { path: path.display().to_string(), source }.into())
    }

    /// Decode, converting stored values to `T` if the file uses the other
    /// precision.
    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let c = Container::decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let m: Manifest =
            serde_json::from_str(&c.manifest).map_err(|e| CheckpointError::Invalid(format!("manifest: {e}")))?;
        m.spec.validate().map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        if m.tensors.len() != c.blocks.len() {
            return Err(CheckpointError::Invalid("manifest and tensor blocks disagree in count".into()));
        }
        let mut params = TensorMap::new();
        let mut state = TensorMap::new();
        for (entry, block) in m.tensors.iter().zip(c.blocks) {
            if entry.shape != block.shape() {
                return Err(CheckpointError::Invalid(format!("tensor `{}` shape mismatch", entry.name)));
            }
            let data: Vec<T> = match block.data {
                BlockData::F32(v) => v.into_iter().map(|x| T::lit(x as f64)).collect(),
                BlockData::F64(v) => v.into_iter().map(T::lit).collect(),
            };
            let t = Tensor { shape: entry.shape.clone(), data };
            let target = if entry.kind == Kind::Param { &mut params } else { &mut state };
            target.insert(entry.name.clone(), t);
        }
        let expect = |shapes: Vec<(String, Vec<usize>)>, have: &TensorMap<T>, what: &str| {
            let ok = shapes.len() == have.len() && shapes.iter().all(|(k, s)| have.get(k).is_some_and(|t| &t.shape == s));
            if ok {
                Ok(())
            } else {
                Err(CheckpointError::Invalid(format!("{what} tensors do not match the spec")))
            }
        };
        expect(m.spec.param_shapes(), &params, "parameter")?;
        expect(m.spec.state_shapes(), &state, "state")?;
        Ok(Checkpoint { spec: m.spec, weights: ModelWeights { params, state }, extra: m.extra })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ContainerError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }
}

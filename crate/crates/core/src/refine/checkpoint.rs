// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelDims};
use crate::error::{Error, Result};
use crate::mesh::{load_obj, save_obj, Mesh};

const MAGIC: &[u8; 4] = b"MTCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    n_params: usize,
    seed: u64,
    steps: [usize; 2],
    /// Class id -> mean shape as OBJ text.
    mean_shapes: BTreeMap<u32, String>,
}

/// A trained model plus the class mean shapes it was trained against.
///
/// Layout: `MTCK`, u32 version, u64 header length, JSON header, then the
/// parameters as little-endian f64.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub mean_shapes: BTreeMap<u32, Mesh>,
    pub seed: u64,
    /// Steps run in stage 1 and stage 2.
    pub steps: [usize; 2],
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dims: *self.model.dims(),
            n_params: self.model.params().len(),
            seed: self.seed,
            steps: self.steps,
            mean_shapes: self
                .mean_shapes
                .iter()
                .map(|(&k, m)| (k, String::from_utf8(save_obj(m)).expect("OBJ output is ASCII")))
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * header.n_params);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("checkpoint: {msg}"));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])?;
        let payload = &body[len..];
        if payload.len() != 8 * header.n_params {
            return Err(bad("parameter payload has the wrong length"));
        }
        let params = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = Model::from_params(header.dims, params)?;
        let mean_shapes = header
            .mean_shapes
            .iter()
            .map(|(&k, s)| Ok((k, load_obj(s.as_bytes())?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            mean_shapes,
            seed: header.seed,
            steps: header.steps,
        })
    }
}

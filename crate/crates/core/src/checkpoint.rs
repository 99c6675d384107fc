//! Model checkpoints: `"CXCP"`, a little-endian `u32` header length, a JSON
//! header holding the spec, then every weight and bias as a tensor block in
//! fixed order (branch first layers, trunk, tail; weight before bias).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelParams, ModelSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CXCP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub spec: ModelSpec,
    /// Precision the model was trained in; blocks are always stored as f64.
    pub precision: String,
    pub num_tensors: usize,
}

pub fn write_model<T: Scalar>(model: &Model<T>, w: &mut impl Write) -> Result<()> {
    let tensors = model.params.tensors();
    let header = Header {
        spec: model.spec.clone(),
        precision: T::NAME.to_string(),
        num_tensors: tensors.len(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in tensors {
        t.write_to(w)?;
    }
    Ok(())
}

pub fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse(format!("not a checkpoint (magic {magic:?})")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| Error::Parse(format!("checkpoint header: {e}")))
}

pub fn read_model<T: Scalar>(r: &mut impl Read) -> Result<Model<T>> {
    let header = read_header(r)?;
    let plan = header.spec.plan()?;
    let mut params = ModelParams::<T>::zeros(&plan);
    let slots = params.tensors_mut();
    if slots.len() != header.num_tensors {
        return Err(Error::Parse(format!(
            "header lists {} tensors, spec implies {}",
            header.num_tensors,
            slots.len()
        )));
    }
    for slot in slots {
        let t: Tensor<T> = Tensor::read_from(r)?;
        if t.shape() != slot.shape() {
            return Err(Error::Parse(format!(
                "tensor shape {:?} where {:?} was expected",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Model::from_params(header.spec, params)
}

pub fn save<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let bytes = std::fs::read(path)?;
    read_model(&mut bytes.as_slice())
}

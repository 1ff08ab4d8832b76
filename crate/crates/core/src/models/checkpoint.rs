//! `CFMC` checkpoints, little-endian:
//!
//! ```text
//! magic "CFMC" | u32 version | u32 descriptor length | descriptor (UTF-8 JSON)
//! | u32 tensor count
//! per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 data
//! ```
//!
//! The descriptor holds the model spec and an echo of the training config.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use super::Model;
use crate::dataset::Reader;
use crate::error::{Error, FormatError, Result};
use crate::nn::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CFMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    spec: ModelSpec,
    config: serde_json::Value,
}

pub fn save(model: &Model) -> Result<Vec<u8>> {
    let desc = serde_json::to_string(&Descriptor { spec: model.spec.clone(), config: model.config.clone() })?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    out.extend_from_slice(desc.as_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for p in model.params.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| FormatError::Corrupt(format!("descriptor: {e}")))?;
    let desc: Descriptor =
        serde_json::from_str(text).map_err(|e| FormatError::Corrupt(format!("descriptor: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|e| FormatError::Corrupt(format!("tensor name: {e}")))?
            .to_string();
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| FormatError::Corrupt("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| FormatError::Corrupt(format!("tensor `{name}`: {e}")))?;
        params.insert(&name, t).map_err(|e| FormatError::Corrupt(e.to_string()))?;
    }
    r.finish()?;
    let model = Model { spec: desc.spec, params, config: desc.config };
    model.check_layout().map_err(|e| match e {
        Error::MissingHead(h) => Error::MissingHead(h),
        other => Error::Format(FormatError::Corrupt(other.to_string())),
    })?;
    Ok(model)
}

pub fn write_file(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, save(model)?)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Model> {
    load(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::Objective;
    use crate::sim::EnvKind;

    #[test]
    fn round_trip_and_corruption() {
        let spec = ModelSpec::new(EnvKind::Rope, 16, Objective::Joint).unwrap();
        let model = Model::new(spec, 3, serde_json::json!({"epochs": 2})).unwrap();
        let bytes = save(&model).unwrap();
        let back = load(&bytes).unwrap();
        assert_eq!(back.params, model.params);
        assert_eq!(save(&back).unwrap(), bytes);

        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(load(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(load(&bad), Err(Error::Format(FormatError::VersionMismatch { .. }))));
        assert!(matches!(load(&bytes[..bytes.len() - 3]), Err(Error::Format(FormatError::Truncated { .. }))));
        let mut bad = bytes.clone();
        bad[12] = b'!';
        assert!(matches!(load(&bad), Err(Error::Format(FormatError::Corrupt(_)))));
    }
}

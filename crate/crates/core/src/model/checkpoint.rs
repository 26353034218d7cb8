//! Single-file model archive: magic, JSON header, then little-endian `f64`
//! parameter data in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamRole;

use super::config::ModelConfig;
use super::network::Model;

const MAGIC: &[u8; 8] = b"SHAUCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<ArrayEntry>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    role: ParamRole,
    shape: [usize; 4],
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|(_, p)| ArrayEntry {
                name: p.name.clone(),
                role: p.role,
                shape: p.value.shape(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in model.params().iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(mut bytes: &[u8]) -> Result<Model> {
    let mut magic = [0u8; 8];
    bytes
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated archive".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a model archive".into()));
    }
    let version = u32::from_le_bytes(take::<4>(&mut bytes)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported archive version {version}")));
    }
    let len = u64::from_le_bytes(take::<8>(&mut bytes)?) as usize;
    if bytes.len() < len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[..len])?;
    bytes = &bytes[len..];

    let mut model = Model::build(header.config)?;
    let plan: Vec<(String, [usize; 4])> = model
        .params()
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.shape()))
        .collect();
    for (i, (name, shape)) in plan.iter().enumerate() {
        match header.params.get(i) {
            Some(e) if &e.name == name && &e.shape == shape => {}
            Some(e) => {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} expected shape {shape:?}, archive has {} {:?}",
                    e.name, e.shape
                )))
            }
            None => return Err(Error::Checkpoint(format!("parameter {name} missing from archive"))),
        }
    }
    if header.params.len() != plan.len() {
        return Err(Error::Checkpoint(format!(
            "unexpected parameter {} in archive",
            header.params[plan.len()].name
        )));
    }
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let t = model.params_mut().value_mut(id);
        for v in t.data_mut() {
            *v = f64::from_le_bytes(take::<8>(&mut bytes)?);
        }
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    Ok(model)
}

fn take<const N: usize>(bytes: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    bytes
        .read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated archive".into()))?;
    Ok(buf)
}

/// Write atomically (temporary file then rename).
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_model(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

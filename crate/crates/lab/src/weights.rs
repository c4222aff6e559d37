//! Little-endian weight files.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` length then the config as
//! compact JSON, then tensor records until end of file. A record is a `u32`
//! name length, the UTF-8 name, a `u32` rank, `rank` × `u64` dims and the
//! `f32` payload. Quantized projections are stored dequantized.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use plm_core::model::{weight_manifest, Model, ModelConfig};

use crate::error::{LabError, Result};

pub const MAGIC: [u8; 8] = *b"PLMLABW\0";
pub const VERSION: u32 = 1;

/// Location of one tensor record inside a weight file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    /// Offset of the record's first byte.
    pub record_offset: u64,
    pub payload_offset: u64,
    /// Header plus payload.
    pub record_len: u64,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Parsed header and tensor index of a weight file.
#[derive(Debug, Clone)]
pub struct WeightIndex {
    pub config: ModelConfig,
    pub entries: Vec<TensorEntry>,
    by_name: HashMap<String, usize>,
}

impl WeightIndex {
    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.by_name.get(name).map(|&i| &self.entries[i])
    }

    /// Reads the header and walks the records without loading payloads.
    pub fn read<R: Read + Seek>(r: &mut R) -> Result<Self> {
        let len = r.seek(SeekFrom::End(0)).map_err(io_err)?;
        r.seek(SeekFrom::Start(0)).map_err(io_err)?;
        let mut pos = 0u64;
        let take = |r: &mut R, n: u64, what: &str, pos: &mut u64| -> Result<Vec<u8>> {
            if *pos + n > len {
                return Err(LabError::Corrupt(format!(
                    "truncated while reading {what} at byte {pos}"
                )));
            }
            let mut buf = vec![0u8; n as usize];
            r.read_exact(&mut buf).map_err(io_err)?;
            *pos += n;
            Ok(buf)
        };
        let magic = take(r, 8, "magic", &mut pos)?;
        if magic != MAGIC {
            return Err(LabError::Corrupt("bad magic".into()));
        }
        let version = u32_le(&take(r, 4, "version", &mut pos)?);
        if version != VERSION {
            return Err(LabError::Corrupt(format!("unsupported version {version}")));
        }
        let cfg_len = u32_le(&take(r, 4, "config length", &mut pos)?);
        let cfg_bytes = take(r, u64::from(cfg_len), "config", &mut pos)?;
        let config: ModelConfig =
            serde_json::from_slice(&cfg_bytes).map_err(|e| LabError::Corrupt(format!("config: {e}")))?;
        config.validate()?;

        let mut entries = Vec::new();
        let mut by_name = HashMap::new();
        while pos < len {
            let record_offset = pos;
            let name_len = u32_le(&take(r, 4, "name length", &mut pos)?);
            let name = String::from_utf8(take(r, u64::from(name_len), "name", &mut pos)?)
                .map_err(|_| LabError::Corrupt("tensor name is not UTF-8".into()))?;
            let rank = u32_le(&take(r, 4, "rank", &mut pos)?);
            if rank == 0 || rank > 4 {
                return Err(LabError::Corrupt(format!("tensor `{name}` has rank {rank}")));
            }
            let dims_bytes = take(r, 8 * u64::from(rank), "dims", &mut pos)?;
            let dims: Vec<usize> = dims_bytes
                .chunks(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
                .collect();
            let numel = dims.iter().try_fold(1u64, |acc, d| acc.checked_mul(*d as u64));
            let payload = numel
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| LabError::Corrupt(format!("tensor `{name}` is too large")))?;
            let payload_offset = pos;
            if pos + payload > len {
                return Err(LabError::Corrupt(format!(
                    "truncated payload of `{name}`: needs {payload} bytes, {} left",
                    len - pos
                )));
            }
            pos = r.seek(SeekFrom::Current(payload as i64)).map_err(io_err)?;
            if by_name.insert(name.clone(), entries.len()).is_some() {
                return Err(LabError::Corrupt(format!("duplicate tensor `{name}`")));
            }
            entries.push(TensorEntry {
                name,
                dims,
                record_offset,
                payload_offset,
                record_len: pos - record_offset,
            });
        }
        let index = Self {
            config,
            entries,
            by_name,
        };
        index.check_manifest()?;
        Ok(index)
    }

    /// Every expected tensor is present with the expected shape and nothing
    /// else is.
    fn check_manifest(&self) -> Result<()> {
        let manifest = weight_manifest(&self.config);
        for (name, shape) in &manifest {
            match self.get(name) {
                None => return Err(LabError::Corrupt(format!("missing tensor `{name}`"))),
                Some(e) if &e.dims != shape => {
                    return Err(LabError::Corrupt(format!(
                        "tensor `{name}` has shape {:?}, expected {shape:?}",
                        e.dims
                    )))
                }
                Some(_) => {}
            }
        }
        if self.entries.len() != manifest.len() {
            let extra = self
                .entries
                .iter()
                .find(|e| !manifest.iter().any(|(n, _)| n == &e.name))
                .map_or_else(String::new, |e| e.name.clone());
            return Err(LabError::Corrupt(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }

    /// Reads one payload.
    pub fn read_tensor<R: Read + Seek>(&self, r: &mut R, name: &str) -> Result<Vec<f32>> {
        let e = self
            .get(name)
            .ok_or_else(|| LabError::Corrupt(format!("missing tensor `{name}`")))?;
        r.seek(SeekFrom::Start(e.payload_offset)).map_err(io_err)?;
        let mut buf = vec![0u8; 4 * e.numel()];
        r.read_exact(&mut buf).map_err(io_err)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    /// Serialized size of every record belonging to layer `i`.
    pub fn layer_bytes(&self, i: usize) -> u64 {
        let prefix = plm_core::model::layer_prefix(i);
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(&prefix))
            .map(|e| e.record_len)
            .sum()
    }
}

fn io_err(e: std::io::Error) -> LabError {
    LabError::io("<weight file>", e)
}

fn u32_le(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

/// Serializes every resident tensor of `model`.
pub fn write_weights<W: Write>(model: &Model, w: &mut W) -> Result<()> {
    let cfg = serde_json::to_vec(model.config()).map_err(|e| LabError::json("config", e))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    w.write_all(&out).map_err(io_err)?;
    for (name, dims, data) in model.export_tensors() {
        let mut rec = Vec::with_capacity(16 + name.len() + 8 * dims.len() + 4 * data.len());
        rec.extend_from_slice(&(name.len() as u32).to_le_bytes());
        rec.extend_from_slice(name.as_bytes());
        rec.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            rec.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &data {
            rec.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&rec).map_err(io_err)?;
    }
    Ok(())
}

pub fn save_weights(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_weights(model, &mut w)?;
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Loads layers for which `resident(i)` holds; the rest stay on storage.
pub fn read_weights_partial<R: Read + Seek>(r: &mut R, resident: &dyn Fn(usize) -> bool) -> Result<Model> {
    let index = WeightIndex::read(r)?;
    let mut failure = None;
    let model = Model::from_tensors_partial(
        &index.config.clone(),
        &mut |name, _| match index.read_tensor(r, name) {
            Ok(v) => Ok(v),
            Err(e) => {
                let msg = e.to_string();
                failure = Some(e);
                Err(plm_core::Error::LayerSource(msg))
            }
        },
        resident,
    );
    match (model, failure) {
        (_, Some(e)) => Err(e),
        (m, None) => Ok(m?),
    }
}

pub fn read_weights<R: Read + Seek>(r: &mut R) -> Result<Model> {
    read_weights_partial(r, &|_| true)
}

pub fn load_weights(path: &Path) -> Result<Model> {
    let mut f = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_weights(&mut f).map_err(|e| with_path(e, path))
}

/// Replaces the placeholder path of IO errors.
pub(crate) fn with_path(e: LabError, path: &Path) -> LabError {
    match e {
        LabError::Io { source, .. } => LabError::io(path, source),
        LabError::Corrupt(m) => LabError::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    }
}

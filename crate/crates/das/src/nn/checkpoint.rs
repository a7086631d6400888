//! Binary parameter checkpoints.
//!
//! Layout: magic `DASW`, format version u32, tensor count u32, then per
//! tensor: rank u32, extents u32[], little-endian f64 payload. The format
//! round-trips bit-exactly.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::Network;
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"DASW";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad checkpoint {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("checkpoint {path} does not fit the network: {detail}")]
    Mismatch { path: String, detail: String },
}

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize tensors to the checkpoint byte layout.
pub fn encode(tensors: &[&Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Format {
                path: self.path.display().to_string(),
                detail: format!("truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32, CheckpointError> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

/// Parse the checkpoint byte layout.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Tensor>, CheckpointError> {
    let fmt = |detail: String| CheckpointError::Format {
        path: path.display().to_string(),
        detail,
    };
    let mut cur = Cursor { bytes, pos: 0, path };
    if cur.take(4)? != MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let version = cur.read_u32()?;
    if version != VERSION {
        return Err(fmt(format!("unsupported version {}", version)));
    }
    let count = cur.read_u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = cur.read_u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.read_u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let payload = cur.take(len * 8)?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data));
    }
    if cur.pos != bytes.len() {
        return Err(fmt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(tensors)
}

/// Write a network's parameter tensors (node order, weight then bias).
pub fn save(net: &Network, path: &Path) -> Result<(), CheckpointError> {
    let bytes = encode(&net.param_tensors());
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Load parameters saved by [`save`] into a compiled network of the same
/// architecture.
pub fn load(net: &mut Network, path: &Path) -> Result<(), CheckpointError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let tensors = decode(&bytes, path)?;
    let params = net.param_tensors_mut();
    if tensors.len() != params.len() {
        return Err(CheckpointError::Mismatch {
            path: path.display().to_string(),
            detail: format!("{} tensors, network has {}", tensors.len(), params.len()),
        });
    }
    for (i, (t, p)) in tensors.iter().zip(params.into_iter()).enumerate() {
        if t.shape() != p.shape() {
            return Err(CheckpointError::Mismatch {
                path: path.display().to_string(),
                detail: format!("tensor {}: {:?} vs {:?}", i, t.shape(), p.shape()),
            });
        }
        p.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

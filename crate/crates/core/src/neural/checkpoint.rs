//! Binary checkpoint container.
//!
//! ```text
//! magic     8 bytes  "PHNNCKPT"
//! version   u32 LE
//! kind      u8       0 = steering, 1 = denoiser
//! arch      u32 LE length + JSON descriptor
//! tensors   u32 LE count, then per tensor:
//!           u32 name length + name, u32 rank, rank x u64 dims, values as f64 LE
//! checksum  32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nets::{DaeArch, DenoiseAE, ParamSet, SteeringArch, SteeringNet};
use super::tensor::Tensor;
use super::{NeuralError, Scalar};

pub const MAGIC: &[u8; 8] = b"PHNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Steering = 0,
    Denoiser = 1,
}

#[derive(Serialize, Deserialize)]
struct SteeringDescriptor {
    arch: SteeringArch,
    frozen: bool,
}

fn encode<T: Scalar>(kind: Kind, descriptor: &[u8], params: &ParamSet<T>) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + params.num_params() * 8);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.push(kind as u8);
    b.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    b.extend_from_slice(descriptor);
    b.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        b.extend_from_slice(&(name.len() as u32).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            b.extend_from_slice(&v.f64().to_le_bytes());
        }
    }
    let sum = Sha256::digest(&b);
    b.extend_from_slice(&sum);
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Verifies framing and checksum; returns the descriptor bytes and parameters.
fn decode<T: Scalar>(bytes: &[u8], expect: Kind) -> Result<(Vec<u8>, ParamSet<T>), String> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err("file too short".into());
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if &bytes[..8] != MAGIC {
        return Err("bad magic bytes".into());
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let kind = r.take(1)?[0];
    if kind != expect as u8 {
        return Err(format!("expected kind {}, found {kind}", expect as u8));
    }
    let n = r.u32()? as usize;
    let descriptor = r.take(n)?.to_vec();
    let count = r.u32()? as usize;
    let (mut names, mut tensors) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
        let raw = r.take(numel.checked_mul(8).ok_or("shape overflow")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        names.push(name);
        tensors.push(Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
    }
    if r.pos != body.len() {
        return Err("trailing bytes after tensors".into());
    }
    Ok((descriptor, ParamSet::from_tensors(names, tensors)))
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), NeuralError> {
    std::fs::write(path, bytes).map_err(|source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, NeuralError> {
    std::fs::read(path).map_err(|source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn steering_bytes<T: Scalar>(net: &SteeringNet<T>) -> Vec<u8> {
    let d = SteeringDescriptor {
        arch: net.arch,
        frozen: net.is_frozen(),
    };
    encode(Kind::Steering, &serde_json::to_vec(&d).expect("descriptor serializes"), &net.params)
}

pub fn dae_bytes<T: Scalar>(ae: &DenoiseAE<T>) -> Vec<u8> {
    encode(Kind::Denoiser, &serde_json::to_vec(&ae.arch).expect("descriptor serializes"), &ae.params)
}

pub fn save_steering<T: Scalar>(path: &Path, net: &SteeringNet<T>) -> Result<(), NeuralError> {
    write(path, &steering_bytes(net))
}

pub fn save_dae<T: Scalar>(path: &Path, ae: &DenoiseAE<T>) -> Result<(), NeuralError> {
    write(path, &dae_bytes(ae))
}

pub fn load_steering<T: Scalar>(path: &Path) -> Result<SteeringNet<T>, NeuralError> {
    let (desc, params) = decode::<T>(&read(path)?, Kind::Steering).map_err(|e| ckpt_err(path, e))?;
    let d: SteeringDescriptor =
        serde_json::from_slice(&desc).map_err(|e| ckpt_err(path, format!("descriptor: {e}")))?;
    let mut net = SteeringNet::from_params(d.arch, params).map_err(|e| ckpt_err(path, e.to_string()))?;
    if d.frozen {
        net.freeze();
    }
    Ok(net)
}

pub fn load_dae<T: Scalar>(path: &Path) -> Result<DenoiseAE<T>, NeuralError> {
    let (desc, params) = decode::<T>(&read(path)?, Kind::Denoiser).map_err(|e| ckpt_err(path, e))?;
    let arch: DaeArch =
        serde_json::from_slice(&desc).map_err(|e| ckpt_err(path, format!("descriptor: {e}")))?;
    DenoiseAE::from_params(arch, params).map_err(|e| ckpt_err(path, e.to_string()))
}

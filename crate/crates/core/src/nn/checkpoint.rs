//! Checkpoint files: `VNW1`, a little-endian `u32` header length, the JSON
//! header, then every tensor as little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Tensor;
use super::{CloudArch, DepthArch};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VNW1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stream", rename_all = "lowercase")]
pub enum StreamArch {
    Depth(DepthArch),
    Cloud(CloudArch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub arch: StreamArch,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    pub fn capture(arch: StreamArch, params: &[&Param<f32>], seed: u64, epoch: usize) -> Self {
        Self {
            header: Header {
                arch,
                tensors: params
                    .iter()
                    .map(|p| TensorEntry {
                        name: p.name.clone(),
                        shape: p.value.shape.clone(),
                    })
                    .collect(),
                seed,
                epoch,
            },
            tensors: params.iter().map(|p| p.value.clone()).collect(),
        }
    }

    /// Copies the stored tensors into `params`; names and shapes must match
    /// one-to-one.
    pub fn restore(&self, params: Vec<&mut Param<f32>>) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(Error::Architecture(format!(
                "checkpoint holds {} tensors, network has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for ((p, entry), t) in params.into_iter().zip(&self.header.tensors).zip(&self.tensors) {
            if p.name != entry.name || p.value.shape != entry.shape {
                return Err(Error::Architecture(format!(
                    "checkpoint tensor {} {:?} does not match network tensor {} {:?}",
                    entry.name, entry.shape, p.name, p.value.shape
                )));
            }
            p.value.data.copy_from_slice(&t.data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.tensors.iter().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing VNW1 magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut payload = &bytes[8 + hlen..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < 4 * n {
                return Err(Error::Format(format!("truncated payload for tensor {}", entry.name)));
            }
            let data = payload[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::from_vec(&entry.shape, data)?);
            payload = &payload[4 * n..];
        }
        if !payload.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after last tensor", payload.len())));
        }
        Ok(Self { header, tensors })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{CloudNet, DepthNet};

    #[test]
    fn round_trip_restores_weights() {
        let net = DepthNet::<f32>::new(DepthArch::desk(), 5).unwrap();
        let ck = Checkpoint::capture(StreamArch::Depth(net.arch.clone()), &net.params(), 5, 3);
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VNW1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);

        let mut fresh = DepthNet::<f32>::new(DepthArch::desk(), 99).unwrap();
        back.restore(fresh.params_mut()).unwrap();
        for (a, b) in fresh.params().iter().zip(net.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let net = DepthNet::<f32>::new(DepthArch::desk(), 5).unwrap();
        let ck = Checkpoint::capture(StreamArch::Depth(net.arch.clone()), &net.params(), 5, 0);
        let mut other = CloudNet::<f32>::new(crate::nn::CloudArch::desk(), 0).unwrap();
        assert!(matches!(ck.restore(other.params_mut()), Err(Error::Architecture(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = CloudNet::<f32>::new(crate::nn::CloudArch::desk(), 1).unwrap();
        let bytes = Checkpoint::capture(StreamArch::Cloud(net.arch.clone()), &net.params(), 1, 0)
            .to_bytes()
            .unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}

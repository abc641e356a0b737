//! IDX array files: big-endian `00 00 <type> <rank>` magic, `u32` extents,
//! then the raw values.
//!
//! External image/label files use type `0x08` (unsigned byte). Dataset
//! directories written by this crate also use type `0x0E` (f64) for real-valued
//! inputs and boxes.

use std::fs;
use std::path::Path;

use super::{LabeledSample, Origin};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const TYPE_U8: u8 = 0x08;
const TYPE_F64: u8 = 0x0E;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        let ty = match self.data {
            IdxData::U8(_) => TYPE_U8,
            IdxData::F64(_) => TYPE_F64,
        };
        u32::from_be_bytes([0, 0, ty, self.dims.len() as u8])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.magic().to_be_bytes().to_vec();
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match &self.data {
            IdxData::U8(v) => out.extend_from_slice(v),
            IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Dataset(m);
        if bytes.len() < 4 {
            return Err(bad("truncated IDX header".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(bad(format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
        }
        let ty = bytes[2];
        let rank = bytes[3] as usize;
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(bad("truncated IDX dimensions".into()));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("IDX extents overflow".into()))?;
        let body = &bytes[header..];
        let data = match ty {
            TYPE_U8 => {
                if body.len() != count {
                    return Err(bad(format!("IDX payload has {} bytes, expected {count}", body.len())));
                }
                IdxData::U8(body.to_vec())
            }
            TYPE_F64 => {
                if body.len() != count * 8 {
                    return Err(bad(format!("IDX payload has {} bytes, expected {}", body.len(), count * 8)));
                }
                IdxData::F64(body.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect())
            }
            other => return Err(bad(format!("unsupported IDX element type 0x{other:02x}"))),
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Parses an image file (magic `0x00000803`) and a label file (magic
/// `0x00000801`) into `1×H×W` samples with pixels scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    parse_idx_pair(&fs::read(images_path)?, &fs::read(labels_path)?)
}

pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Vec<LabeledSample>> {
    let img = IdxArray::from_bytes(images)?;
    if img.magic() != IMAGES_MAGIC {
        return Err(Error::Dataset(format!("bad magic 0x{:08x} for an image file", img.magic())));
    }
    let lab = IdxArray::from_bytes(labels)?;
    if lab.magic() != LABELS_MAGIC {
        return Err(Error::Dataset(format!("bad magic 0x{:08x} for a label file", lab.magic())));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    if n != lab.dims[0] {
        return Err(Error::Dataset(format!("image file holds {n} images but label file holds {} labels", lab.dims[0])));
    }
    let (IdxData::U8(pixels), IdxData::U8(labels)) = (img.data, lab.data) else {
        unreachable!("magic fixes the element type");
    };
    pixels
        .chunks_exact(h * w)
        .zip(labels)
        .map(|(px, label)| {
            let input = Tensor::new(vec![1, h, w], px.iter().map(|&p| p as f64 / 255.0).collect())?;
            Ok(LabeledSample { input, label: label as usize, bbox: None, origin: Origin::Unassigned })
        })
        .collect()
}

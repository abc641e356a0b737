//! `BLYR` model container.
//!
//! Little-endian layout:
//!
//! ```text
//! "BLYR" | u32 version=1 | u32 K | u8 has_box_head | u32 backbone_end | u32 layer_count
//! per layer:
//!   u16 name_len | name (UTF-8) | u8 kind
//!   [u32 stride | u32 padding]          -- conv2d only
//!   u8 tensor_count
//!   per tensor: u8 rank | u32 × rank dims | f32 × prod(dims), row-major
//! ```
//!
//! Values are stored at 32-bit width; loading widens them back to `f64`.

use std::fs;
use std::path::Path;

use super::layer::{LayerKind, LayerSpec};
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"BLYR";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + 4 * model.parameter_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(model.class_count(), "class count")?.to_le_bytes());
    out.push(u8::from(model.has_box_head()));
    out.extend_from_slice(&u32_of(model.backbone_end(), "backbone_end")?.to_le_bytes());
    out.extend_from_slice(&u32_of(model.layers().len(), "layer count")?.to_le_bytes());
    for layer in model.layers() {
        let name = layer.name().as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("layer name too long: {}", layer.name())))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(layer.kind().code());
        if layer.kind() == LayerKind::Conv2d {
            out.extend_from_slice(&u32_of(layer.stride(), "stride")?.to_le_bytes());
            out.extend_from_slice(&u32_of(layer.padding(), "padding")?.to_le_bytes());
        }
        out.push(layer.params().len() as u8);
        for t in layer.params() {
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Format("tensor rank exceeds 255".into()))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&u32_of(d, "tensor extent")?.to_le_bytes());
            }
            for &v in t.data() {
                let narrow = v as f32;
                if !narrow.is_finite() {
                    return Err(Error::Format(format!(
                        "value {v} in layer `{}` overflows 32-bit storage",
                        layer.name()
                    )));
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated payload: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("version mismatch: file has {version}, expected {VERSION}")));
    }
    let k = r.u32()? as usize;
    let has_box = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("has_box_head flag must be 0 or 1, got {other}"))),
    };
    let backbone_end = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("layer name is not UTF-8".into()))?
            .to_owned();
        let code = r.u8()?;
        let kind = LayerKind::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown layer kind code {code} for `{name}`")))?;
        let (stride, padding) = if kind == LayerKind::Conv2d {
            (r.u32()? as usize, r.u32()? as usize)
        } else {
            (1, 0)
        };
        let tensor_count = r.u8()? as usize;
        let mut params = Vec::with_capacity(tensor_count);
        for _ in 0..tensor_count {
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
                Error::Format(format!("tensor extents overflow in layer `{name}`"))
            })?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            params.push(Tensor::new(shape, data).map_err(|e| Error::Format(format!("layer `{name}`: {e}")))?);
        }
        let layer = LayerSpec::from_parts(&name, kind, params, stride, padding)
            .map_err(|e| Error::Format(e.to_string()))?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
    }
    Model::new(layers, backbone_end, k, has_box).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

/// The model as it will look after a save/load cycle.
pub fn narrowed(model: &Model) -> Result<Model> {
    from_bytes(&to_bytes(model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    #[test]
    fn round_trip_is_byte_identical() {
        let m = Architecture::MicroCnn.build(&[1, 28, 28], 3, true, 0).unwrap();
        let bytes = to_bytes(&m).unwrap();
        let loaded = from_bytes(&bytes).unwrap();
        assert_eq!(to_bytes(&loaded).unwrap(), bytes);
        for (a, b) in m.layers().iter().flat_map(|l| l.params()).zip(loaded.layers().iter().flat_map(|l| l.params())) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        assert_eq!(loaded.layers()[0].stride(), 1);
        assert_eq!(loaded.layers()[0].padding(), 1);
    }

    #[test]
    fn header_layout() {
        let m = Model::new(Vec::new(), 0, 7, true).unwrap();
        let b = to_bytes(&m).unwrap();
        assert_eq!(&b[..4], b"BLYR");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &7u32.to_le_bytes());
        assert_eq!(b[12], 1);
        assert_eq!(b.len(), 4 + 4 + 4 + 1 + 4 + 4);
        let empty = from_bytes(&b).unwrap();
        assert!(empty.layers().is_empty());
        assert!(empty.forward(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let m = Architecture::MicroMlp.build(&[2], 3, false, 0).unwrap();
        let good = to_bytes(&m).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("bad magic"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("version mismatch"));

        assert!(from_bytes(&good[..good.len() - 3]).unwrap_err().to_string().contains("truncated"));

        let mut extra = good.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }

    #[test]
    fn duplicate_layer_names_rejected() {
        let mut b = Vec::new();
        b.extend_from_slice(b"BLYR");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.push(0);
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            b.extend_from_slice(&1u16.to_le_bytes());
            b.push(b'r');
            b.push(LayerKind::Relu.code());
            b.push(0);
        }
        let err = from_bytes(&b).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}

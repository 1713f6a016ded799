//! Binary checkpoints.
//!
//! Layout (little-endian): magic `MULAB`, `u16` version 1, then for every
//! tensor until EOF: `u32` name length, UTF-8 name, `u32` ndim, `u32` dims,
//! and the `f64` data.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

use super::{Dense, Model};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MULAB";
pub const CHECKPOINT_VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in model.param_names().iter().zip(model.params()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(buf: &[u8], pos: &mut usize) -> Result<u32> {
    let bytes = buf.get(*pos..*pos + 4).ok_or_else(|| bad("truncated u32"))?;
    *pos += 4;
    Ok(u32::from_le_bytes(bytes.try_into().expect("4 bytes")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 7 || &buf[..5] != CHECKPOINT_MAGIC {
        return Err(bad("missing MULAB magic"));
    }
    let version = u16::from_le_bytes([buf[5], buf[6]]);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut pos = 7;
    let mut tensors = BTreeMap::new();
    while pos < buf.len() {
        let len = read_u32(&buf, &mut pos)? as usize;
        let name = std::str::from_utf8(buf.get(pos..pos + len).ok_or_else(|| bad("truncated name"))?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        pos += len;
        let ndim = read_u32(&buf, &mut pos)? as usize;
        let dims = (0..ndim)
            .map(|_| read_u32(&buf, &mut pos).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = dims.iter().product();
        let bytes = buf
            .get(pos..pos + 8 * numel)
            .ok_or_else(|| bad(format!("truncated data for {name}")))?;
        pos += 8 * numel;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(name, Tensor::new(dims, data)?);
    }
    let mut take = |name: String| tensors.remove(&name).ok_or_else(|| bad(format!("missing {name}")));
    let mut extractor = Vec::new();
    while let Ok(weight) = take(format!("extractor.{}.weight", extractor.len())) {
        let bias = take(format!("extractor.{}.bias", extractor.len()))?;
        extractor.push(Dense { weight, bias });
    }
    if extractor.is_empty() {
        return Err(bad("no extractor layers"));
    }
    let head = Dense {
        weight: take("head.weight".into())?,
        bias: take("head.bias".into())?,
    };
    let projection = match take("projection.0.weight".into()) {
        Ok(w0) => Some([
            Dense {
                weight: w0,
                bias: take("projection.0.bias".into())?,
            },
            Dense {
                weight: take("projection.1.weight".into())?,
                bias: take("projection.1.bias".into())?,
            },
        ]),
        Err(_) => None,
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    Ok(Model {
        extractor,
        head,
        projection,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig};

    #[test]
    fn header_is_bit_exact() {
        let m: Model = init_model(&ModelConfig::default(), 8, 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert_eq!(&buf[..7], b"MULAB\x01\x00");
        // First record: "extractor.0.weight", 2 dims [8, 64].
        assert_eq!(&buf[7..11], &18u32.to_le_bytes());
        assert_eq!(&buf[11..29], b"extractor.0.weight");
        assert_eq!(&buf[29..33], &2u32.to_le_bytes());
        assert_eq!(&buf[33..37], &8u32.to_le_bytes());
        assert_eq!(&buf[37..41], &64u32.to_le_bytes());
        assert_eq!(&buf[41..49], &m.extractor[0].weight.data()[0].to_le_bytes());
    }

    #[test]
    fn round_trip_is_bitwise() {
        for projection in [None, Some((16, 8))] {
            let cfg = ModelConfig {
                projection,
                seed: 11,
                ..ModelConfig::default()
            };
            let m: Model = init_model(&cfg, 8, 4).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&m, &mut buf).unwrap();
            assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
        }
    }

    #[test]
    fn rejects_corruption() {
        let m: Model = init_model(&ModelConfig::default(), 8, 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(&wrong[..]).is_err());
        let mut v2 = buf;
        v2[5] = 2;
        assert!(read_checkpoint(&v2[..]).is_err());
    }
}

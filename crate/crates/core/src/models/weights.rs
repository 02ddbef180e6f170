//! Binary weight files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"KPBW"
//! version  u16
//! count    u32                      number of tensor records
//! record*  name_len u16, name utf-8 ("<layer>.<param>"),
//!          rank u8, extents u32 * rank, values f32 * product(extents)
//! ```
//!
//! Records follow layer order, and within a layer the order of
//! [`LayerParams::tensors`](crate::tensor::LayerParams::tensors).

use std::io::{Read, Write};

use super::network::Model;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"KPBW";
pub const FORMAT_VERSION: u16 = 1;

fn record_name(layer: usize, param: &str) -> String {
    format!("{layer}.{param}")
}

/// Exact number of bytes [`save_weights`] writes for `model`.
pub fn model_size_bytes(model: &Model) -> u64 {
    let mut n = 4 + 2 + 4;
    for (i, p) in model.params().iter().enumerate() {
        for r in p.tensors() {
            n += 2 + record_name(i, r.name).len() + 1 + 4 * r.tensor.rank() + 4 * r.tensor.len();
        }
    }
    n as u64
}

pub fn save_weights<W: Write>(model: &Model, mut sink: W) -> Result<u64> {
    let records: Vec<_> = model
        .params()
        .iter()
        .enumerate()
        .flat_map(|(i, p)| p.tensors().into_iter().map(move |r| (record_name(i, r.name), r.tensor)))
        .collect();
    let count = u32::try_from(records.len()).map_err(|_| Error::invalid("too many weight tensors"))?;
    let mut written = 0u64;
    let mut put = |bytes: &[u8], sink: &mut W| -> Result<()> {
        sink.write_all(bytes)?;
        written += bytes.len() as u64;
        Ok(())
    };
    put(&MAGIC, &mut sink)?;
    put(&FORMAT_VERSION.to_le_bytes(), &mut sink)?;
    put(&count.to_le_bytes(), &mut sink)?;
    for (name, t) in records {
        put(&(name.len() as u16).to_le_bytes(), &mut sink)?;
        put(name.as_bytes(), &mut sink)?;
        put(&[t.rank() as u8], &mut sink)?;
        for &e in t.shape() {
            put(&(e as u32).to_le_bytes(), &mut sink)?;
        }
        let mut buf = Vec::with_capacity(4 * t.len());
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        put(&buf, &mut sink)?;
    }
    sink.flush()?;
    Ok(written)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("unexpected end of file reading {what}")),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads weights for `spec`. Every record must match the name and shape the
/// spec implies, and nothing may follow the last record.
pub fn load_weights<R: Read>(spec: &ModelSpec, source: R) -> Result<Model> {
    let mut model = Model::zeros(spec.clone())?;
    let mut r = Reader { inner: source };

    let magic = r.bytes(4, "magic").map_err(|e| match e {
        Error::Truncated(_) => Error::Truncated("file shorter than the 4-byte magic".into()),
        other => other,
    })?;
    let found = [magic[0], magic[1], magic[2], magic[3]];
    if found != MAGIC {
        return Err(Error::BadMagic { found });
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32("record count")? as usize;
    let expected_count: usize = model.params().iter().map(|p| p.tensors().len()).sum();
    if count != expected_count {
        return Err(Error::Truncated(format!(
            "file holds {count} tensors, model {} needs {expected_count}",
            spec.name
        )));
    }

    for (i, p) in model.params_mut().iter_mut().enumerate() {
        for (param, tensor, _) in p.tensors_mut() {
            let want = record_name(i, param);
            let name_len = r.u16("record name length")? as usize;
            let name = String::from_utf8(r.bytes(name_len, "record name")?)
                .map_err(|_| Error::Truncated("record name is not utf-8".into()))?;
            if name != want {
                return Err(Error::Truncated(format!("expected record {want}, found {name}")));
            }
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            if shape != tensor.shape() {
                return Err(Error::WeightShape {
                    name,
                    expected: tensor.shape().to_vec(),
                    found: shape,
                });
            }
            let raw = r.bytes(4 * tensor.len(), &format!("values of {name}"))?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            *tensor = Tensor::new(shape, values)?;
        }
    }
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(Error::Truncated("trailing bytes after last record".into()));
    }
    for (i, p) in model.params().iter().enumerate() {
        if let Some(bn) = &p.bn {
            bn.validate(bn.channels())
                .map_err(|e| Error::Truncated(format!("layer {i}: {e}")))?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::LayerSpec;
    use crate::tensor::Padding;

    fn spec() -> ModelSpec {
        ModelSpec {
            name: "w".into(),
            input_shape: (1, 8, 8),
            layers: vec![LayerSpec::conv(4, 3, 2, Padding::Same, true), LayerSpec::batch_norm()],
            head_units: 3,
        }
    }

    fn bytes(m: &Model) -> Vec<u8> {
        let mut buf = Vec::new();
        save_weights(m, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::init(spec(), 9).unwrap();
        let buf = bytes(&m);
        assert_eq!(buf.len() as u64, model_size_bytes(&m));
        let back = load_weights(&spec(), &buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn distinct_errors() {
        let m = Model::init(spec(), 9).unwrap();
        let buf = bytes(&m);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_weights(&spec(), &bad[..]), Err(Error::BadMagic { .. })));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            load_weights(&spec(), &bad[..]),
            Err(Error::VersionMismatch { found: 9, expected: 1 })
        ));

        assert!(matches!(
            load_weights(&spec(), &buf[..buf.len() - 3]),
            Err(Error::Truncated(_))
        ));

        let mut other = spec();
        other.layers[0] = LayerSpec::conv(5, 3, 2, Padding::Same, true);
        assert!(matches!(load_weights(&other, &buf[..]), Err(Error::WeightShape { .. })));

        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(load_weights(&spec(), &long[..]), Err(Error::Truncated(_))));
    }
}

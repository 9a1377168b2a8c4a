//! The "UTSR" named-tensor container used for datasets and checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "UTSR" 0x01
//! repeated until EOF:
//!   u16 name_len | name bytes (ASCII) | u8 dtype | u8 rank | u64 extent × rank | payload
//! ```
//!
//! dtype codes: 1 = f32, 2 = f64, 3 = u8. Payload is row-major.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

pub const MAGIC: &[u8; 4] = b"UTSR";
pub const VERSION: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U8 = 3,
}

impl DType {
    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bitwise equality; distinguishes `-0.0` from `0.0` and compares NaN payloads.
    pub fn bit_eq(&self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::U8(a), TensorData::U8(b)) => a == b,
            _ => false,
        }
    }
}

/// One named tensor in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::format_in(
                &name,
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Record { name, shape, data })
    }

    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F64 => TensorData::F64(t.data().iter().map(|v| v.to_f64_lossy()).collect()),
            DType::F32 => TensorData::F32(t.data().iter().map(|v| v.to_f64_lossy() as f32).collect()),
            DType::U8 => unreachable!("no u8 scalar type"),
        };
        Record {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn from_mask(name: impl Into<String>, m: &Mask) -> Self {
        let (n, h, w) = m.dims();
        Record {
            name: name.into(),
            shape: vec![n, h, w],
            data: TensorData::U8(m.data().to_vec()),
        }
    }

    /// Converts to a tensor of scalar type `T`; the stored dtype must be `T`'s.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let values: Vec<T> = match (&self.data, T::DTYPE) {
            (TensorData::F64(v), DType::F64) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            (TensorData::F32(v), DType::F32) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            (d, want) => {
                return Err(Error::format_in(
                    &self.name,
                    format!("stored dtype {:?} cannot be read as {:?}", d.dtype(), want),
                ))
            }
        };
        Tensor::new(self.shape.clone(), values)
    }

    pub fn to_mask(&self) -> Result<Mask> {
        match (&self.data, &self.shape[..]) {
            (TensorData::U8(v), &[n, h, w]) => Mask::new(n, h, w, v.clone()),
            _ => Err(Error::format_in(
                &self.name,
                format!(
                    "expected a rank-3 u8 mask, found {:?} {:?}",
                    self.data.dtype(),
                    self.shape
                ),
            )),
        }
    }
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for r in records {
        if !r.name.is_ascii() {
            return Err(Error::Usage(format!("record name {:?} is not ASCII", r.name)));
        }
        if !seen.insert(r.name.as_str()) {
            return Err(Error::Usage(format!("duplicate record name {:?}", r.name)));
        }
        let name_len = u16::try_from(r.name.len())
            .map_err(|_| Error::Usage(format!("record name {:?} is too long", r.name)))?;
        let rank = u8::try_from(r.shape.len())
            .map_err(|_| Error::Usage(format!("record {:?} has rank above 255", r.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.data.dtype() as u8);
        out.push(rank);
        for &e in &r.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match &r.data {
            TensorData::F32(v) => v.iter().for_each(|&x| x.write_le(&mut out)),
            TensorData::F64(v) => v.iter().for_each(|&x| x.write_le(&mut out)),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, record: &str, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format_in(
                    record,
                    format!(
                        "truncated {what}: need {n} bytes at offset {}, {} remain",
                        self.pos,
                        self.bytes.len() - self.pos
                    ),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    if bytes.len() < 5 {
        return Err(Error::format(format!(
            "file too short for header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(format!("unsupported version {}", bytes[4])));
    }
    let mut rd = Reader { bytes, pos: 5 };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    while rd.pos < bytes.len() {
        let placeholder = format!("#{}", records.len());
        let len_bytes = rd.take(2, &placeholder, "name length")?;
        let name_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        let name_bytes = rd.take(name_len, &placeholder, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .ok()
            .filter(|s| s.is_ascii())
            .ok_or_else(|| Error::format_in(&placeholder, "record name is not ASCII"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format_in(&name, "duplicate record name"));
        }
        let code = rd.take(1, &name, "dtype")?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::format_in(&name, format!("unknown dtype code {code}")))?;
        let rank = rd.take(1, &name, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let b = rd.take(8, &name, "extent")?;
            let e = u64::from_le_bytes(b.try_into().expect("8 bytes"));
            shape.push(
                usize::try_from(e).map_err(|_| Error::format_in(&name, "extent overflows usize"))?,
            );
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::format_in(&name, "element count overflows"))?;
        let nbytes = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::format_in(&name, "payload size overflows"))?;
        let payload = rd.take(nbytes, &name, "payload")?;
        let data = match dtype {
            DType::F32 => TensorData::F32(payload.chunks_exact(4).map(f32::read_le).collect()),
            DType::F64 => TensorData::F64(payload.chunks_exact(8).map(f64::read_le).collect()),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn write_tensor_file(path: impl AsRef<Path>, records: &[Record]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(records)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// Looks up a record by name.
pub fn find<'a>(records: &'a [Record], name: &str) -> Result<&'a Record> {
    records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::format_in(name, "record missing"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Record> {
        vec![
            Record::new("a.weight", vec![2, 2], TensorData::F64(vec![1.0, -0.0, 2.5, f64::MIN_POSITIVE])).unwrap(),
            Record::new("b", vec![3], TensorData::F32(vec![1.5, 2.0, -3.25])).unwrap(),
            Record::new("mask", vec![1, 2, 2], TensorData::U8(vec![0, 1, 1, 0])).unwrap(),
        ]
    }

    #[test]
    fn header_bytes() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes, b"UTSR\x01");
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn record_layout_is_exact() {
        let r = Record::new("x", vec![2], TensorData::U8(vec![7, 9])).unwrap();
        let bytes = encode(&[r]).unwrap();
        let mut expected = b"UTSR\x01".to_vec();
        expected.extend_from_slice(&[1, 0, b'x', 3, 1]);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&[7, 9]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn roundtrip() {
        let recs = sample();
        let back = decode(&encode(&recs).unwrap()).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            assert!(a.data.bit_eq(&b.data));
        }
    }

    #[test]
    fn empty_file_is_format_error() {
        assert!(matches!(decode(&[]), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn unknown_dtype_names_record() {
        let r = Record::new("weird", vec![1], TensorData::U8(vec![0])).unwrap();
        let mut bytes = encode(&[r]).unwrap();
        bytes[5 + 2 + 5] = 9;
        match decode(&bytes) {
            Err(Error::Format { record, msg }) => {
                assert_eq!(record.as_deref(), Some("weird"));
                assert!(msg.contains('9'));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_trailing_garbage() {
        let bytes = encode(&sample()).unwrap();
        for cut in [bytes.len() - 1, bytes.len() - 5, 6] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format { .. })));
        }
        let mut junk = bytes.clone();
        junk.push(0xAB);
        assert!(matches!(decode(&junk), Err(Error::Format { .. })));
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = Record::new("dup", vec![1], TensorData::U8(vec![0])).unwrap();
        assert!(matches!(encode(&[r.clone(), r]), Err(Error::Usage(_))));
    }

    #[test]
    fn tensor_and_mask_conversion() {
        let t = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64 * 0.5);
        let r = Record::from_tensor("t", &t);
        assert_eq!(r.to_tensor::<f64>().unwrap(), t);
        assert!(r.to_tensor::<f32>().is_err());
        let m = Mask::from_rows(&[&[0, 1], &[1, 1]]).unwrap();
        assert_eq!(Record::from_mask("m", &m).to_mask().unwrap(), m);
        assert!(r.to_mask().is_err());
    }
}

//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ECNW" | u32 version | u32 header_len | header (key = value text)
//! u32 record_count | records... | u32 crc32(all preceding bytes)
//! record := u32 name_len | name | u8 dtype | u32 rank | u64 dims[rank] | raw values
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kvtext::KvText;
use crate::tensor::{DType, Element, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"ECNW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl RecordData {
    fn dtype(&self) -> DType {
        match self {
            RecordData::F32(_) => DType::F32,
            RecordData::F64(_) => DType::F64,
            RecordData::U8(_) => DType::U8,
            RecordData::U32(_) => DType::U32,
        }
    }

    fn len(&self) -> usize {
        match self {
            RecordData::F32(v) => v.len(),
            RecordData::F64(v) => v.len(),
            RecordData::U8(v) => v.len(),
            RecordData::U32(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: RecordData,
}

fn float_data<T: Element>(values: &[T]) -> RecordData {
    match T::DTYPE {
        DType::F32 => RecordData::F32(values.iter().map(|v| v.to_f32().unwrap()).collect()),
        _ => RecordData::F64(values.iter().map(|v| v.to_f64_lossy()).collect()),
    }
}

impl Record {
    pub fn tensor<T: Element>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Record {
            name: name.into(),
            dims: t.shape().dims().to_vec(),
            data: float_data(t.data()),
        }
    }

    pub fn vector<T: Element>(name: impl Into<String>, v: &[T]) -> Self {
        Record {
            name: name.into(),
            dims: vec![v.len()],
            data: float_data(v),
        }
    }

    pub fn bytes(name: impl Into<String>, dims: Vec<usize>, v: Vec<u8>) -> Self {
        Record {
            name: name.into(),
            dims,
            data: RecordData::U8(v),
        }
    }

    pub fn indices(name: impl Into<String>, v: &[usize]) -> Self {
        Record {
            name: name.into(),
            dims: vec![v.len()],
            data: RecordData::U32(v.iter().map(|&i| i as u32).collect()),
        }
    }

    pub fn to_indices(&self) -> Result<Vec<usize>> {
        match &self.data {
            RecordData::U32(v) => Ok(v.iter().map(|&i| i as usize).collect()),
            _ => Err(Error::Format(format!("record `{}` is not an index record", self.name))),
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        Ok(match &self.data {
            RecordData::F32(v) => v.iter().map(|&x| T::from_f64_lossy(x as f64)).collect(),
            RecordData::F64(v) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            RecordData::U8(_) | RecordData::U32(_) => {
                return Err(Error::Format(format!("record `{}` is not floating point", self.name)))
            }
        })
    }

    pub fn to_bytes(&self) -> Result<&[u8]> {
        match &self.data {
            RecordData::U8(v) => Ok(v),
            _ => Err(Error::Format(format!("record `{}` is not a byte record", self.name))),
        }
    }

    /// Converts into a tensor, checking the stored shape against `expect`.
    pub fn to_tensor<T: Element>(&self, expect: Shape) -> Result<Tensor<T>> {
        if self.dims != expect.dims() {
            return Err(Error::Format(format!(
                "record `{}` has dims {:?}, architecture expects {expect}",
                self.name, self.dims
            )));
        }
        Tensor::from_vec(expect, self.to_vec()?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: KvText,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks record `{name}`")))
    }

    pub fn try_record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.header.render();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.dtype().tag());
            out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
            for &d in &r.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.data {
                RecordData::F32(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                RecordData::F64(v) => v.iter().for_each(|x| x.write_le(&mut out)),
                RecordData::U8(v) => out.extend_from_slice(v),
                RecordData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic bytes (not an ECNW checkpoint)".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let mut rd = Reader { buf: body, pos: 4 };
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version} unsupported (expected {VERSION})"
            )));
        }
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("CRC mismatch (corrupted or truncated checkpoint)".into()));
        }
        let hlen = rd.u32()? as usize;
        let header = std::str::from_utf8(rd.take(hlen)?)
            .map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let header = KvText::parse(header)?;
        let count = rd.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = rd.u32()? as usize;
            let name = String::from_utf8(rd.take(nlen)?.to_vec())
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let tag = rd.take(1)?[0];
            let dtype =
                DType::from_tag(tag).ok_or_else(|| Error::Format(format!("record `{name}`: dtype tag {tag}")))?;
            let rank = rd.u32()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("record `{name}`: rank {rank}")));
            }
            let dims = (0..rank)
                .map(|_| rd.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("record `{name}`: dims overflow")))?;
            let raw = rd.take(numel.checked_mul(dtype.size()).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = match dtype {
                DType::F32 => RecordData::F32(raw.chunks_exact(4).map(f32::read_le).collect()),
                DType::F64 => RecordData::F64(raw.chunks_exact(8).map(f64::read_le).collect()),
                DType::U8 => RecordData::U8(raw.to_vec()),
                DType::U32 => RecordData::U32(
                    raw.chunks_exact(4)
                        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                ),
            };
            debug_assert_eq!(data.len(), numel);
            records.push(Record { name, dims, data });
        }
        if rd.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes after records", body.len() - rd.pos)));
        }
        Ok(Checkpoint { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut header = KvText::new();
        header.set("arch", "edgecnn");
        Checkpoint {
            header,
            records: vec![
                Record::vector("a", &[1.5f32, -2.0, f32::MIN_POSITIVE]),
                Record::vector("b", &[0.1f64]),
                Record::bytes("m", vec![2, 2], vec![1, 0, 0, 1]),
                Record::indices("i", &[3, 1, 4]),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        assert_eq!(Checkpoint::decode(&ck.encode()).unwrap(), ck);
    }

    #[test]
    fn corruptions_are_format_errors() {
        let good = sample().encode();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad_magic), Err(Error::Format(m)) if m.contains("magic")));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(Checkpoint::decode(&bad_version), Err(Error::Format(m)) if m.contains("version")));

        let truncated = &good[..good.len() - 7];
        assert!(matches!(Checkpoint::decode(truncated), Err(Error::Format(_))));

        let mut flipped = good.clone();
        let mid = good.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(Checkpoint::decode(&flipped), Err(Error::Format(_))));
    }

    #[test]
    fn shape_disagreement_rejected() {
        let r = Record::vector("w", &[1.0f32; 6]);
        assert!(r.to_tensor::<f32>(Shape::new(1, 6, 1, 1)).is_err());
        let r = Record::tensor("w", &Tensor::<f32>::zeros(Shape::new(1, 6, 1, 1)));
        assert!(r.to_tensor::<f32>(Shape::new(1, 6, 1, 1)).is_ok());
        assert!(r.to_tensor::<f32>(Shape::new(2, 3, 1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn float_bits_survive(values in proptest::collection::vec(any::<f32>(), 0..64)) {
            let ck = Checkpoint { header: KvText::new(), records: vec![Record::vector("v", &values)] };
            let back = Checkpoint::decode(&ck.encode()).unwrap();
            let RecordData::F32(got) = &back.records[0].data else { panic!() };
            prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}

//! The `MIRIDSET` container: a flat list of named, typed n-d arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MIRIDSET" | u32 version | u32 entry count
//! per entry: u16 name length | UTF-8 name | u8 dtype | u8 rank | rank x u64 extents | payload
//! ```
//!
//! dtype 0 is complex (re, im f64 pairs), 1 is f64, 2 is a u8 boolean.
//! Payloads are row-major.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ComplexTensor, RealTensor};

pub const MAGIC: &[u8; 8] = b"MIRIDSET";
pub const VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
    Bool(Vec<bool>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            Self::Complex(_) => 0,
            Self::Real(_) => 1,
            Self::Bool(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::Complex(v) => v.len(),
            Self::Real(v) => v.len(),
            Self::Bool(v) => v.len(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Complex(_) => "complex",
            Self::Real(_) => "real",
            Self::Bool(_) => "boolean",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

/// Ordered entries with unique names; order is preserved on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<Entry>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: ArrayData) -> Result<()> {
        if name.len() > u16::MAX as usize {
            return Err(format_err("entry name too long"));
        }
        if shape.len() > MAX_RANK {
            return Err(format_err(format!("rank {} exceeds {MAX_RANK}", shape.len())));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(format_err(format!("'{name}': {} values for extents {:?}", data.len(), shape)));
        }
        if self.get(name).is_some() {
            return Err(format_err(format!("duplicate entry '{name}'")));
        }
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn insert_complex(&mut self, name: &str, t: &ComplexTensor) -> Result<()> {
        self.insert(name, t.shape(), ArrayData::Complex(t.data().to_vec()))
    }

    pub fn insert_real(&mut self, name: &str, t: &RealTensor) -> Result<()> {
        self.insert(name, t.shape(), ArrayData::Real(t.data().to_vec()))
    }

    pub fn insert_bool(&mut self, name: &str, shape: &[usize], v: &[bool]) -> Result<()> {
        self.insert(name, shape, ArrayData::Bool(v.to_vec()))
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name).ok_or_else(|| format_err(format!("missing entry '{name}'")))
    }

    fn wrong_kind(e: &Entry, want: &str) -> Error {
        format_err(format!("'{}' holds {} data, expected {want}", e.name, e.data.kind()))
    }

    pub fn complex(&self, name: &str) -> Result<ComplexTensor> {
        let e = self.require(name)?;
        match &e.data {
            ArrayData::Complex(v) => ComplexTensor::from_vec(&e.shape, v.clone()),
            _ => Err(Self::wrong_kind(e, "complex")),
        }
    }

    pub fn real(&self, name: &str) -> Result<RealTensor> {
        let e = self.require(name)?;
        match &e.data {
            ArrayData::Real(v) => RealTensor::from_vec(&e.shape, v.clone()),
            _ => Err(Self::wrong_kind(e, "real")),
        }
    }

    /// Boolean entry as `(shape, values)`.
    pub fn bools(&self, name: &str) -> Result<(Vec<usize>, Vec<bool>)> {
        let e = self.require(name)?;
        match &e.data {
            ArrayData::Bool(v) => Ok((e.shape.clone(), v.clone())),
            _ => Err(Self::wrong_kind(e, "boolean")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.data.dtype());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &e.data {
                ArrayData::Complex(v) => {
                    for z in v {
                        out.extend_from_slice(&z.re.to_le_bytes());
                        out.extend_from_slice(&z.im.to_le_bytes());
                    }
                }
                ArrayData::Real(v) => {
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ArrayData::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(format_err("bad magic, not a MIRIDSET file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut c = Container::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| format_err("entry name is not UTF-8"))?
                .to_string();
            let dtype = r.u8()?;
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(format_err(format!("'{name}': rank {rank} exceeds {MAX_RANK}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| format_err("extent overflows"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format_err(format!("'{name}': extents overflow")))?;
            let width = match dtype {
                0 => 16,
                1 => 8,
                2 => 1,
                d => return Err(format_err(format!("'{name}': unknown dtype {d}"))),
            };
            let payload = r.take(n.checked_mul(width).ok_or_else(|| format_err("payload overflows"))?)?;
            let f = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
            let data = match dtype {
                0 => ArrayData::Complex(payload.chunks_exact(16).map(|b| Complex64::new(f(&b[..8]), f(&b[8..]))).collect()),
                1 => ArrayData::Real(payload.chunks_exact(8).map(f).collect()),
                _ => ArrayData::Bool(
                    payload
                        .iter()
                        .map(|&b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(format_err(format!("'{name}': boolean byte {other}"))),
                        })
                        .collect::<Result<_>>()?,
                ),
            };
            c.insert(&name, &shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        let mut c = Container::new();
        let z = ComplexTensor::from_vec(&[2], vec![Complex64::new(1.5, -0.25), Complex64::new(f64::MIN_POSITIVE, 3.0)]).unwrap();
        c.insert_complex("k", &z).unwrap();
        c.insert_real("r", &RealTensor::from_vec(&[1, 3], vec![0.0, -1.0, 1e300]).unwrap()).unwrap();
        c.insert_bool("m", &[2, 2], &[true, false, false, true]).unwrap();
        c
    }

    #[test]
    fn header_bytes_are_fixed() {
        let b = Container::new().to_bytes();
        assert_eq!(b, [b"MIRIDSET".as_slice(), &[1, 0, 0, 0], &[0, 0, 0, 0]].concat());
        let b = sample().to_bytes();
        // first entry: name "k", complex, rank 1, extent 2
        assert_eq!(&b[16..18], &[1, 0]);
        assert_eq!(b[18], b'k');
        assert_eq!(&b[19..21], &[0, 1]);
        assert_eq!(&b[21..29], &2u64.to_le_bytes());
        assert_eq!(&b[29..37], &1.5f64.to_le_bytes());
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.names().collect::<Vec<_>>(), ["k", "r", "m"]);
        assert_eq!(back.real("r").unwrap().shape(), &[1, 3]);
    }

    #[test]
    fn rejects_malformed_input() {
        let good = sample().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[8] = 2;
        assert!(Container::from_bytes(&bad).is_err());
        assert!(Container::from_bytes(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad.push(0);
        assert!(Container::from_bytes(&bad).is_err());
        let mut bad = good.clone();
        bad[19] = 7;
        assert!(Container::from_bytes(&bad).is_err());

        let mut c = sample();
        assert!(c.insert_bool("m", &[1], &[true]).is_err());
        assert!(c.insert("x", &[3], ArrayData::Real(vec![0.0; 2])).is_err());
        assert!(c.real("k").is_err());
        assert!(c.complex("missing").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn arbitrary_arrays_round_trip(
            re in proptest::collection::vec(any::<f64>(), 0..20),
            flags in proptest::collection::vec(any::<bool>(), 0..20),
        ) {
            let mut c = Container::new();
            let z: Vec<Complex64> = re.iter().map(|&x| Complex64::new(x, -x)).collect();
            c.insert("z", &[z.len()], ArrayData::Complex(z)).unwrap();
            c.insert("f", &[re.len(), 1], ArrayData::Real(re.clone())).unwrap();
            c.insert("b", &[flags.len()], ArrayData::Bool(flags)).unwrap();
            let bytes = c.to_bytes();
            let back = Container::from_bytes(&bytes).unwrap();
            // compare bitwise so NaN payloads count too
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}

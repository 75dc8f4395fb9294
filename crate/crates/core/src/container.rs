//! Binary array container and named-array directories.
//!
//! One array per file:
//!
//! ```text
//! magic   "RTA1"            4 bytes
//! dtype   u8                0=f32 1=f64 2=i64 3=u8
//! ndim    u8
//! shape   ndim x u64 LE
//! data    raw little-endian elements, row-major
//! ```
//!
//! A directory of arrays carries a `manifest.txt` listing every array with its
//! dtype and shape, plus any caller-supplied header lines.

use std::fmt;
use std::fs;
use std::path::Path;

use autograd::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RTA1";
pub const FILE_EXT: &str = "rta";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    I64 = 2,
    U8 = 3,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::I64),
            3 => Some(DType::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I64 => "i64",
            DType::U8 => "u8",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::I64(_) => DType::I64,
            ArrayData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A shaped array of one of the four storable element types.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: ArrayData,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        if shape.len() > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!("rank {} exceeds 255", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch(format!("shape {shape:?} holds {n} elements, data has {}", data.len())));
        }
        Ok(Array { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Array { shape: t.shape().to_vec(), data: ArrayData::F64(t.data().to_vec()) }
    }

    pub fn from_indices(idx: &[usize]) -> Self {
        Array { shape: vec![idx.len()], data: ArrayData::I64(idx.iter().map(|&i| i as i64).collect()) }
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Self::new(shape, ArrayData::U8(data))
    }

    /// Converts float arrays to an `f64` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = match &self.data {
            ArrayData::F64(v) => v.clone(),
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            other => return Err(Error::Format(format!("expected a float array, found {}", other.dtype()))),
        };
        Ok(Tensor::new(self.shape.clone(), data))
    }

    /// Reads a 1-D non-negative integer array.
    pub fn to_indices(&self) -> Result<Vec<usize>> {
        match &self.data {
            ArrayData::I64(v) if self.shape.len() == 1 => v
                .iter()
                .map(|&i| usize::try_from(i).map_err(|_| Error::Format(format!("negative index {i}"))))
                .collect(),
            _ => Err(Error::Format(format!("expected a 1-D i64 array, found {} {:?}", self.dtype(), self.shape))),
        }
    }

    pub fn to_u8(&self) -> Result<&[u8]> {
        match &self.data {
            ArrayData::U8(v) => Ok(v),
            other => Err(Error::Format(format!("expected a u8 array, found {}", other.dtype()))),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 8 * self.shape.len() + self.data.len() * self.dtype().size());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype() as u8);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:02x?}, expected RTA1")));
        }
        let code = r.take(1, "dtype")?[0];
        let dtype = DType::from_code(code).ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
        let ndim = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut count: usize = 1;
        for _ in 0..ndim {
            let raw = u64::from_le_bytes(r.take(8, "shape")?.try_into().unwrap());
            let d = usize::try_from(raw).map_err(|_| Error::Format(format!("dimension {raw} too large")))?;
            count = count.checked_mul(d).ok_or_else(|| Error::Format("element count overflows".into()))?;
            shape.push(d);
        }
        let nbytes = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Format("byte count overflows".into()))?;
        let raw = r.take(nbytes, "data")?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after array data", bytes.len() - r.pos)));
        }
        let data = match dtype {
            DType::F32 => ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F64 => ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::I64 => ArrayData::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::U8 => ArrayData::U8(raw.to_vec()),
        };
        Ok(Array { shape, data })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "{what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn write_array(path: &Path, array: &Array) -> Result<()> {
    fs::write(path, array.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Array> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Array::decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Manifest form of a shape: `2x3`, or `scalar` for rank 0.
fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        return "scalar".into();
    }
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Ordered set of named arrays, stored as one directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrayDir {
    /// Free-form `key = value` lines written at the top of the manifest.
    pub header: Vec<(String, String)>,
    pub arrays: Vec<(String, Array)>,
}

impl ArrayDir {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, array: Array) {
        self.arrays.push((name.into(), array));
    }

    pub fn set_header(&mut self, key: impl Into<String>, value: impl ToString) {
        self.header.push((key.into(), value.to_string()));
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::Format(format!("missing array `{name}`")))
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn check_name(name: &str) -> Result<()> {
        let ok = !name.is_empty()
            && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
            && !name.starts_with('.');
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("array name `{name}` is not a plain file name")))
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from("# realtalk array directory v1\n");
        for (k, v) in &self.header {
            manifest.push_str(&format!("{k} = {v}\n"));
        }
        for (name, array) in &self.arrays {
            Self::check_name(name)?;
            manifest.push_str(&format!("array {name} {} {}\n", array.dtype(), shape_text(array.shape())));
            write_array(&dir.join(format!("{name}.{FILE_EXT}")), array)?;
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = ArrayDir::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("array ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, dtype, shape] = parts[..] else {
                    return Err(Error::Format(format!("{}:{}: malformed array line", path.display(), lineno + 1)));
                };
                Self::check_name(name)?;
                let array = read_array(&dir.join(format!("{name}.{FILE_EXT}")))?;
                if dtype != array.dtype().name() || shape != shape_text(array.shape()) {
                    return Err(Error::Format(format!("array `{name}` does not match its manifest entry")));
                }
                out.arrays.push((name.to_string(), array));
            } else if let Some((k, v)) = line.split_once('=') {
                out.header.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                return Err(Error::Format(format!("{}:{}: unrecognised line", path.display(), lineno + 1)));
            }
        }
        Ok(out)
    }
}

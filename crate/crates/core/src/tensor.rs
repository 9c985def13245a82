//! Dense row-major `f32` tensors and the `NTSR` tensor container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "NTSR" | version: u32 = 1 | count: u32
//! per tensor: name_len: u16 | name (UTF-8) | dtype: u8 (0 = f32) | ndim: u8
//!             | ndim x dim: u32 | row-major f32 payload
//! ```

use std::collections::HashSet;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"NTSR";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum NtsrError {
    #[error("bad magic: expected \"NTSR\"")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}` has unsupported dtype {dtype}")]
    UnsupportedDtype { name: String, dtype: u8 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("{trailing} trailing bytes after the last tensor")]
    TrailingBytes { trailing: usize },
    #[error("tensor `{0}` cannot be encoded (name or rank too large)")]
    Unencodable(String),
    #[error("no tensor named `{0}`")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("shape {dims:?} needs {expected} elements, got {got}")]
pub struct ShapeError {
    pub dims: Vec<usize>,
    pub expected: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, ShapeError> {
        let expected = dims.iter().product();
        if expected != data.len() {
            return Err(ShapeError { dims, expected, got: data.len() });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![0.0; n] }
    }

    pub fn full(dims: Vec<usize>, value: f32) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: vec![value; n] }
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Self {
        let n = dims.iter().product();
        Tensor { dims, data: (0..n).map(&mut f).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self, ShapeError> {
        Tensor::new(dims, self.data)
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> f32 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f32) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// `(C, H, W)` view of a rank-3 tensor.
    pub fn chw(&self) -> Option<(usize, usize, usize)> {
        match self.dims.as_slice() {
            [c, h, w] => Some((*c, *h, *w)),
            _ => None,
        }
    }

    /// Sub-tensor `index` along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Tensor {
        let inner: usize = self.dims[1..].iter().product();
        Tensor {
            dims: self.dims[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, ShapeError> {
        let inner = items.first().map(|t| t.dims.clone()).unwrap_or_default();
        let mut data = Vec::with_capacity(items.len() * inner.iter().product::<usize>());
        for t in items {
            if t.dims != inner {
                return Err(ShapeError { dims: inner, expected: 0, got: t.len() });
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend(inner);
        Tensor::new(dims, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Named tensors in file order.
pub type Container = Vec<(String, Tensor)>;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], NtsrError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(NtsrError::TruncatedFile(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, NtsrError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, NtsrError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, NtsrError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Container, NtsrError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(NtsrError::BadMagic);
    }
    r.pos = 4;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(NtsrError::UnsupportedVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?).map_err(|_| NtsrError::BadName)?.to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(NtsrError::UnsupportedDtype { name, dtype });
        }
        let ndim = r.u8("ndim")? as usize;
        let dims = (0..ndim).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(NtsrError::TruncatedFile("payload"))?;
        let payload = r.take(n.checked_mul(4).ok_or(NtsrError::TruncatedFile("payload"))?, "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if !seen.insert(name.clone()) {
            return Err(NtsrError::DuplicateName(name));
        }
        out.push((name, Tensor { dims, data }));
    }
    if r.pos != bytes.len() {
        return Err(NtsrError::TrailingBytes { trailing: bytes.len() - r.pos });
    }
    Ok(out)
}

pub fn write_container<'a, I>(tensors: I) -> Result<Vec<u8>, NtsrError>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let tensors: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if !seen.insert(name) {
            return Err(NtsrError::DuplicateName(name.to_string()));
        }
        let name_len = u16::try_from(name.len()).map_err(|_| NtsrError::Unencodable(name.to_string()))?;
        let ndim = u8::try_from(t.dims.len()).map_err(|_| NtsrError::Unencodable(name.to_string()))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(ndim);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| NtsrError::Unencodable(name.to_string()))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Container, NtsrError> {
    read_container(&std::fs::read(path)?)
}

pub fn write_file<'a, I>(path: impl AsRef<Path>, tensors: I) -> Result<(), NtsrError>
where
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    std::fs::write(path, write_container(tensors)?)?;
    Ok(())
}

/// Looks up a tensor by name.
pub fn take_named(container: &mut Container, name: &str) -> Result<Tensor, NtsrError> {
    let i = container.iter().position(|(n, _)| n == name).ok_or_else(|| NtsrError::Missing(name.to_string()))?;
    Ok(container.remove(i).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_container() {
        let bytes = write_container(std::iter::empty()).unwrap();
        assert_eq!(bytes, b"NTSR\x01\0\0\0\0\0\0\0");
        assert!(read_container(&bytes).unwrap().is_empty());
    }

    #[test]
    fn exact_layout() {
        let t = Tensor::new(vec![2], vec![1.0, -2.5]).unwrap();
        let bytes = write_container([("ab", &t)]).unwrap();
        let mut want = b"NTSR\x01\0\0\0\x01\0\0\0\x02\0ab\x00\x01\x02\0\0\0".to_vec();
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(read_container(b"NTSX\x01\0\0\0\0\0\0\0"), Err(NtsrError::BadMagic)));
        let t = Tensor::zeros(vec![3, 2]);
        let bytes = write_container([("w", &t)]).unwrap();
        assert!(matches!(read_container(&bytes[..bytes.len() - 1]), Err(NtsrError::TruncatedFile(_))));
        assert!(matches!(write_container([("w", &t), ("w", &t)]), Err(NtsrError::DuplicateName(_))));
        // Hand-assemble a duplicate to exercise the reader side.
        let one = write_container([("w", &t)]).unwrap();
        let mut dup = b"NTSR\x01\0\0\0\x02\0\0\0".to_vec();
        dup.extend_from_slice(&one[12..]);
        dup.extend_from_slice(&one[12..]);
        assert!(matches!(read_container(&dup), Err(NtsrError::DuplicateName(n)) if n == "w"));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_identical(
            dims in proptest::collection::vec(1usize..4, 0..4),
            seed in any::<u32>(),
            name in "[a-z_.0-9]{1,12}",
        ) {
            let t = Tensor::from_fn(dims.clone(), |i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97)));
            let bytes = write_container([(name.as_str(), &t)]).unwrap();
            let back = read_container(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(&back[0].0, &name);
            prop_assert_eq!(back[0].1.dims(), t.dims());
            let a: Vec<u32> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}

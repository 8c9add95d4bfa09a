//! Dense row-major tensors and the GTED binary file format.
//!
//! A GTED file is laid out as
//!
//! ```text
//! offset  size      field
//! 0       4         magic  b"GTED"
//! 4       1         version 0x01
//! 5       1         ndim (1..=4)
//! 6       4*ndim    dims, u32 little-endian
//! ..      1         dtype 0x01 = float32
//! ..      4*len     payload, f32 little-endian, row-major (last axis fastest)
//! ```
//!
//! The payload length must match the product of the dims exactly; trailing
//! bytes are rejected like truncated ones.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{format_err, validation, Error, Result};
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"GTED";
pub const VERSION: u8 = 0x01;
pub const DTYPE_F32: u8 = 0x01;
pub const MAX_AXES: usize = 4;

/// Immutable dense tensor with up to [`MAX_AXES`] axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_AXES {
        return Err(validation(format!(
            "tensor must have 1..={MAX_AXES} axes, got {}",
            dims.len()
        )));
    }
    if let Some(axis) = dims.iter().position(|&d| d == 0) {
        return Err(validation(format!("axis {axis} has zero extent")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| validation(format!("dims {dims:?} overflow the element count")))
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if len != data.len() {
            return Err(validation(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!("element {i} is not finite")));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            data: vec![T::zero(); len],
        })
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Result<Self> {
        let len = checked_len(&dims)?;
        Self::new(dims, vec![value; len])
    }

    /// Builds a tensor by evaluating `f` at every flat (row-major) index.
    pub fn from_fn(dims: Vec<usize>, f: impl FnMut(usize) -> T) -> Result<Self> {
        let len = checked_len(&dims)?;
        Self::new(dims, (0..len).map(f).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Serializes to GTED bytes. Values are narrowed to `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            let d = u32::try_from(d)
                .map_err(|_| validation(format!("axis extent {d} does not fit in u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(DTYPE_F32);
        for (i, v) in self.data.iter().enumerate() {
            let v = v.as_f32();
            if !v.is_finite() {
                return Err(validation(format!(
                    "element {i} is not representable as a finite f32"
                )));
            }
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses GTED bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4, "magic")? != MAGIC {
            return Err(format_err("bad magic, expected \"GTED\""));
        }
        let version = cur.take(1, "version")?[0];
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version:#04x}")));
        }
        let ndim = cur.take(1, "ndim")?[0] as usize;
        if ndim == 0 || ndim > MAX_AXES {
            return Err(format_err(format!("ndim {ndim} outside 1..={MAX_AXES}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let raw = cur.take(4, "dims")?;
            dims.push(u32::from_le_bytes(raw.try_into().unwrap()) as usize);
        }
        let dtype = cur.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(format_err(format!("unsupported dtype {dtype:#04x}")));
        }
        let len = checked_len(&dims)?;
        let payload = &bytes[cur.pos..];
        let expected = len
            .checked_mul(4)
            .ok_or_else(|| validation(format!("dims {dims:?} overflow the payload size")))?;
        if payload.len() != expected {
            return Err(format_err(format!(
                "payload holds {} bytes, dims {dims:?} require {expected}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Self::new(dims, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        tensor_write(self, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        tensor_read(path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format_err(format!("file truncated while reading {field}")));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `t` to `path` in GTED format.
pub fn tensor_write<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = t.to_bytes()?;
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&bytes).map_err(io_err(path))?;
    file.sync_all().map_err(io_err(path))
}

/// Reads a GTED file.
pub fn tensor_read<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    Tensor::from_bytes(&bytes)
}

/// Which backbone family produced a feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Semantic,
    Geometric,
    Fused,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Semantic => "semantic",
            FeatureKind::Geometric => "geometric",
            FeatureKind::Fused => "fused",
        }
    }
}

/// A `[C, H, W]` activation grid tagged with its kind.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    kind: FeatureKind,
    values: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(kind: FeatureKind, values: Tensor<T>) -> Result<Self> {
        if values.dims().len() != 3 {
            return Err(validation(format!(
                "feature map needs dims [C,H,W], got {:?}",
                values.dims()
            )));
        }
        Ok(Self { kind, values })
    }

    pub fn from_vec(kind: FeatureKind, dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        Self::new(kind, Tensor::new(dims.to_vec(), data)?)
    }

    pub fn zeros(kind: FeatureKind, dims: [usize; 3]) -> Result<Self> {
        Self::new(kind, Tensor::zeros(dims.to_vec())?)
    }

    /// Evaluates `f(c, h, w)` at every cell.
    pub fn from_fn(
        kind: FeatureKind,
        [c, h, w]: [usize; 3],
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let hw = h * w;
        Self::new(
            kind,
            Tensor::from_fn(vec![c, h, w], |i| f(i / hw, (i % hw) / w, i % w))?,
        )
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[2]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels(), self.height(), self.width()]
    }

    /// Number of spatial cells, `H * W`.
    pub fn cells(&self) -> usize {
        self.height() * self.width()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn data(&self) -> &[T] {
        self.values.data()
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.values.data()[(c * self.height() + h) * self.width() + w]
    }

    /// Contiguous `H * W` plane of channel `c`.
    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.cells();
        &self.values.data()[c * hw..(c + 1) * hw]
    }

    /// The length-C feature vector at cell `(h, w)`.
    pub fn column(&self, h: usize, w: usize) -> Vec<T> {
        let hw = self.cells();
        let offset = h * self.width() + w;
        (0..self.channels())
            .map(|c| self.values.data()[c * hw + offset])
            .collect()
    }

    pub(crate) fn ensure_same_dims(&self, other: &Self, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(validation(format!(
                "{what}: shape {:?} does not match {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Reads `<dir>/<name>.gted`.
pub fn load_named<T: Real>(dir: &Path, name: &str) -> Result<Tensor<T>> {
    tensor_read(named_path(dir, name))
}

/// Writes `<dir>/<name>.gted`.
pub fn save_named<T: Real>(dir: &Path, name: &str, t: &Tensor<T>) -> Result<()> {
    tensor_write(t, named_path(dir, name))
}

pub fn named_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.gted"))
}

/// Checks that a loaded parameter tensor has the expected dims.
pub(crate) fn expect_dims<T: Real>(t: &Tensor<T>, name: &str, dims: &[usize]) -> Result<()> {
    if t.dims() != dims {
        return Err(validation(format!(
            "parameter {name} has dims {:?}, expected {dims:?}",
            t.dims()
        )));
    }
    Ok(())
}

//! File formats: PPTF tensors, PGM heatmaps, numeric CSV.
//!
//! PPTF layout (all integers little-endian):
//!
//! ```text
//! offset 0  magic    "PPTF"
//!        4  version  u8 = 1
//!        5  dtype    u8, 0 = f32, 1 = f64
//!        6  ndim     u8, 1..=4
//!        7  reserved u8 = 0
//!        8  dims     ndim × u64
//!           payload  row-major, last dimension fastest
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::types::Matrix;

pub const MAGIC: &[u8; 4] = b"PPTF";
pub const VERSION: u8 = 1;
pub const MAX_NDIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// An owned array of up to four dimensions in either precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(Error::Dimension(format!("tensor needs 1 to 4 dimensions, got {}", dims.len())));
    }
    let total = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    if total != Some(len) {
        return Err(Error::Dimension(format!("dims {dims:?} do not match {len} elements")));
    }
    Ok(())
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let len = match &data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        };
        check_dims(&dims, len)?;
        Ok(Self { dims, data })
    }

    /// Wraps values of either precision, keeping their dtype.
    pub fn from_values<T: Real>(dims: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let data = match T::DTYPE {
            DType::F32 => TensorData::F32(values.iter().map(|v| v.wide() as f32).collect()),
            DType::F64 => TensorData::F64(values.iter().map(|v| v.wide()).collect()),
        };
        Self::new(dims, data)
    }

    pub fn from_matrix<T: Real>(m: &Matrix<T>) -> Self {
        Self::from_values(vec![m.rows(), m.cols()], m.as_slice().to_vec()).expect("matrix dims are consistent")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values converted to `T` (exact when widening or matching).
    pub fn values<T: Real>(&self) -> Vec<T> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| T::from_wide(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| T::from_wide(x)).collect(),
        }
    }

    pub fn cast(&self, dtype: DType) -> Tensor {
        let data = match dtype {
            DType::F32 => TensorData::F32(self.values()),
            DType::F64 => TensorData::F64(self.values()),
        };
        Tensor {
            dims: self.dims.clone(),
            data,
        }
    }

    /// A 2D tensor as a matrix; 1D tensors become a single column.
    pub fn to_matrix<T: Real>(&self) -> Result<Matrix<T>> {
        match self.dims[..] {
            [n] => Matrix::new(n, 1, self.values()),
            [r, c] => Matrix::new(r, c, self.values()),
            _ => Err(Error::Dimension(format!("expected a 1D or 2D tensor, got dims {:?}", self.dims))),
        }
    }
}

pub fn header_len(ndim: usize) -> usize {
    8 + 8 * ndim
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let size = t.dtype().size();
    let mut out = Vec::with_capacity(header_len(t.dims.len()) + t.len() * size);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, t.dtype().code(), t.dims.len() as u8, 0]);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 {
        return Err(Error::Length {
            expected: 8,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))?;
    let ndim = bytes[6] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("ndim must be 1 to 4, got {ndim}")));
    }
    if bytes[7] != 0 {
        return Err(Error::Format("reserved header byte must be 0".into()));
    }
    let head = header_len(ndim);
    if bytes.len() < head {
        return Err(Error::Length {
            expected: head,
            found: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for chunk in bytes[8..head].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        dims.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
    let expected = count
        .checked_mul(dtype.size())
        .and_then(|p| p.checked_add(head))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let payload = &bytes[head..];
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect(),
        ),
    };
    Tensor::new(dims, data)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_finite(values: impl Iterator<Item = f64>) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("cannot export non-finite value {v}")));
        }
    }
    Ok(())
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    ensure_finite(t.values::<f64>().into_iter())?;
    fs::write(path, encode_tensor(t)).map_err(io_err(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_tensor(&bytes)
}

/// Binary 8-bit graymap of `m`, min-max scaled to `0..=255`. A constant
/// matrix maps to all zeros.
pub fn encode_pgm<T: Real>(m: &Matrix<T>) -> Result<Vec<u8>> {
    ensure_finite(m.as_slice().iter().map(|v| v.wide()))?;
    let (lo, hi) = m
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.wide()), hi.max(v.wide())));
    let mut out = format!("P5\n{} {}\n255\n", m.cols(), m.rows()).into_bytes();
    let range = hi - lo;
    out.extend(m.as_slice().iter().map(|v| {
        if range > 0.0 {
            ((v.wide() - lo) / range * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn export_heatmap_pgm<T: Real>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(m)?).map_err(io_err(path))
}

/// Shortest text that parses back to exactly `v` in its own precision.
pub fn format_value<T: Real>(v: T) -> String {
    let a = v.abs().wide();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn encode_csv<T: Real>(m: &Matrix<T>) -> String {
    let mut out = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|&v| format_value(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses comma-separated rows. Row and column numbers in errors are
/// 1-based.
pub fn decode_csv<T: Real>(text: &str) -> Result<Matrix<T>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (r, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(cells.len()),
            Some(c) if c != cells.len() => {
                return Err(Error::Parse {
                    row: r + 1,
                    col: cells.len().min(c) + 1,
                    msg: format!("expected {c} columns, found {}", cells.len()),
                })
            }
            _ => {}
        }
        for (c, cell) in cells.iter().enumerate() {
            let v = cell.trim().parse::<T>().map_err(|_| Error::Parse {
                row: r + 1,
                col: c + 1,
                msg: format!("invalid number {cell:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

/// Writes `m` as CSV; a 1D array is passed as an `n×1` matrix.
pub fn export_csv<T: Real>(m: &Matrix<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_finite(m.as_slice().iter().map(|v| v.wide()))?;
    fs::write(path, encode_csv(m)).map_err(io_err(path))
}

pub fn import_csv<T: Real>(path: impl AsRef<Path>) -> Result<Matrix<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    decode_csv(&text)
}

//! Portable tensor container and the `.duet` / `.dueta` byte formats.
//!
//! Single tensor record (`.duet`), all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DUET"
//! 4       1     version (0x01)
//! 5       1     dtype code: 0x01 f32, 0x02 f64, 0x03 i64
//! 6       1     ndim (0..=8)
//! 7       5     zero padding
//! 12      8*nd  dims, u64 each (every dim >= 1)
//! ...     n*sz  elements, row-major
//! ```
//!
//! A rank-0 tensor is a scalar holding one element.
//!
//! Archive (`.dueta`): magic "DUEA", version 0x01, u32 entry count, then per
//! entry a u8 name length, the name bytes, a u64 payload length and one
//! tensor record of exactly that length.
//!
//! The decoders here operate on byte slices; the `duet` crate wraps them for
//! `std::io` streams.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::FormatError;

pub const TENSOR_MAGIC: [u8; 4] = *b"DUET";
pub const ARCHIVE_MAGIC: [u8; 4] = *b"DUEA";
pub const FORMAT_VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 12;
pub const ARCHIVE_HEADER_LEN: usize = 9;
pub const MAX_RANK: usize = 8;
pub const DEFAULT_MAX_ELEMENTS: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
    I64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0x01,
            DType::F64 => 0x02,
            DType::I64 => 0x03,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, FormatError> {
        match code {
            0x01 => Ok(DType::F32),
            0x02 => Ok(DType::F64),
            0x03 => Ok(DType::I64),
            other => Err(FormatError::UnknownDType(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::I64(_) => DType::I64,
        }
    }

    fn first_non_finite(&self) -> Option<usize> {
        match self {
            TensorData::F32(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::F64(v) => v.iter().position(|x| !x.is_finite()),
            TensorData::I64(_) => None,
        }
    }
}

/// Row-major tensor of up to eight dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    /// Builds a tensor, checking rank, dim sizes and data length. Non-finite
    /// floats are accepted here; the decoder enforces finiteness on load.
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self, FormatError> {
        if shape.len() > MAX_RANK {
            return Err(FormatError::InvalidRank(shape.len()));
        }
        if let Some(&d) = shape.iter().find(|&&d| d == 0) {
            return Err(FormatError::InvalidDim(d as u64));
        }
        let expected = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(FormatError::ShapeMismatch {
                shape_len: usize::MAX,
                data_len: data.len(),
            })?;
        if expected != data.len() {
            return Err(FormatError::ShapeMismatch {
                shape_len: expected,
                data_len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar_f32(value: f32) -> Self {
        Tensor {
            shape: Vec::new(),
            data: TensorData::F32(alloc::vec![value]),
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, FormatError> {
        Tensor::new(shape, TensorData::F64(data))
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Self, FormatError> {
        Tensor::new(shape, TensorData::I64(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size in bytes of this tensor's `.duet` record.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 8 * self.shape.len() + self.dtype().size() * self.len()
    }

    /// Float elements widened to f64, or `None` for integer tensors.
    pub fn to_f64_vec(&self) -> Option<Vec<f64>> {
        match &self.data {
            TensorData::F32(v) => Some(v.iter().map(|&x| f64::from(x)).collect()),
            TensorData::F64(v) => Some(v.clone()),
            TensorData::I64(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadOptions {
    pub max_elements: u64,
    pub allow_non_finite: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            max_elements: DEFAULT_MAX_ELEMENTS,
            allow_non_finite: false,
        }
    }
}

/// Appends the `.duet` record for `t` to `out` and returns the bytes written.
pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) -> usize {
    let start = out.len();
    out.reserve(t.encoded_len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(t.dtype().code());
    out.push(t.shape.len() as u8);
    out.extend_from_slice(&[0u8; HEADER_LEN - 7]);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out.len() - start
}

/// Fixed-size prefix of a tensor record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: DType,
    pub ndim: usize,
}

impl TensorHeader {
    pub fn parse(bytes: &[u8; HEADER_LEN]) -> Result<Self, FormatError> {
        let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if magic != TENSOR_MAGIC {
            return Err(FormatError::BadMagic {
                expected: TENSOR_MAGIC,
                found: magic,
            });
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        let dtype = DType::from_code(bytes[5])?;
        let ndim = bytes[6] as usize;
        if ndim > MAX_RANK {
            return Err(FormatError::InvalidRank(ndim));
        }
        if let Some(&p) = bytes[7..].iter().find(|&&b| b != 0) {
            return Err(FormatError::BadPadding(p));
        }
        Ok(TensorHeader { dtype, ndim })
    }
}

/// Decodes `ndim` little-endian u64 dims and checks the element cap.
/// Returns the shape and the element count.
pub fn parse_dims(
    bytes: &[u8],
    ndim: usize,
    opts: &ReadOptions,
) -> Result<(Vec<usize>, usize), FormatError> {
    let needed = 8 * ndim;
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut count: u128 = 1;
    for chunk in bytes[..needed].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        if d == 0 {
            return Err(FormatError::InvalidDim(d));
        }
        count = count.saturating_mul(u128::from(d));
        if count > u128::from(opts.max_elements) {
            return Err(FormatError::TooLarge {
                declared: count,
                cap: opts.max_elements,
            });
        }
        shape.push(d as usize);
    }
    Ok((shape, count as usize))
}

/// Decodes exactly `count` elements of `dtype` from the front of `bytes`.
pub fn parse_payload(
    dtype: DType,
    count: usize,
    bytes: &[u8],
    opts: &ReadOptions,
) -> Result<TensorData, FormatError> {
    let needed = count * dtype.size();
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let bytes = &bytes[..needed];
    let data = match dtype {
        DType::F32 => TensorData::F32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect(),
        ),
        DType::F64 => TensorData::F64(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        ),
        DType::I64 => TensorData::I64(
            bytes
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        ),
    };
    if !opts.allow_non_finite {
        if let Some(i) = data.first_non_finite() {
            return Err(FormatError::NonFinite(i));
        }
    }
    Ok(data)
}

/// Reports a magic mismatch as soon as four bytes are available, so a short
/// foreign stream is rejected as foreign rather than truncated.
pub fn check_magic(bytes: &[u8], expected: [u8; 4]) -> Result<(), FormatError> {
    match bytes.get(..4) {
        Some(m) if m != expected => Err(FormatError::BadMagic {
            expected,
            found: [m[0], m[1], m[2], m[3]],
        }),
        _ => Ok(()),
    }
}

/// Decodes one tensor record from the front of `bytes`, returning the tensor
/// and the number of bytes consumed. Nothing past the record is inspected.
pub fn decode_tensor(bytes: &[u8], opts: &ReadOptions) -> Result<(Tensor, usize), FormatError> {
    check_magic(bytes, TENSOR_MAGIC)?;
    let header: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(FormatError::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        })?;
    let header = TensorHeader::parse(header)?;
    let mut pos = HEADER_LEN;
    let (shape, count) = parse_dims(&bytes[pos..], header.ndim, opts)?;
    pos += 8 * header.ndim;
    let data = parse_payload(header.dtype, count, &bytes[pos..], opts)?;
    pos += count * header.dtype.size();
    Ok((Tensor { shape, data }, pos))
}

/// Ordered collection of uniquely named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    entries: Vec<(String, Tensor)>,
}

pub fn is_valid_name(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl Archive {
    pub fn new() -> Self {
        Archive::default()
    }

    /// Appends an entry; names must be valid and unused.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), FormatError> {
        let name = name.into();
        if !is_valid_name(&name) {
            return Err(FormatError::InvalidName(name));
        }
        if self.get(&name).is_some() {
            return Err(FormatError::DuplicateName(name));
        }
        self.entries.push((name, t));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARCHIVE_MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.encoded_len() as u64).to_le_bytes());
            encode_tensor(t, &mut out);
        }
        out
    }

    /// Decodes a complete archive; trailing bytes are an error.
    pub fn decode(bytes: &[u8], opts: &ReadOptions) -> Result<Self, FormatError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let count = parse_archive_header(cur.take(ARCHIVE_HEADER_LEN)?)?;
        let mut archive = Archive::new();
        for _ in 0..count {
            let name_len = cur.take(1)?[0] as usize;
            let name = cur.take(name_len)?;
            let name = core::str::from_utf8(name)
                .map_err(|_| FormatError::InvalidName(String::from_utf8_lossy(name).into_owned()))?
                .to_string();
            let declared = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
            let available = (bytes.len() - cur.pos) as u64;
            if declared > available {
                return Err(FormatError::Truncated {
                    needed: usize::try_from(declared).unwrap_or(usize::MAX),
                    available: available as usize,
                });
            }
            let payload = cur.take(declared as usize)?;
            let (t, used) = decode_tensor(payload, opts)?;
            if used as u64 != declared {
                return Err(FormatError::PayloadLength {
                    name,
                    declared,
                    actual: used,
                });
            }
            archive.insert(name, t)?;
        }
        if cur.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - cur.pos));
        }
        Ok(archive)
    }
}

/// Validates the 9-byte archive prefix and returns the entry count.
pub fn parse_archive_header(bytes: &[u8]) -> Result<u32, FormatError> {
    if bytes.len() < ARCHIVE_HEADER_LEN {
        return Err(FormatError::Truncated {
            needed: ARCHIVE_HEADER_LEN,
            available: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != ARCHIVE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: ARCHIVE_MAGIC,
            found: magic,
        });
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    Ok(u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            if self.pos == 0 {
                check_magic(self.bytes, ARCHIVE_MAGIC)?;
            }
            return Err(FormatError::Truncated {
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

//! On-disk formats: a minimal binary tensor container, plain key=value
//! manifests, and conversions between tensors and the domain types.
//!
//! Container layout, all little-endian: magic `DGMM`, version u32 (= 1),
//! dtype u8 (1 = f64, 2 = u8), ndim u32, ndim × u32 dims, then the
//! row-major payload. Round trips are byte-exact for both dtypes, so
//! golden-file tests can compare raw bytes. To convert elsewhere: the
//! payload after the `4 + 4 + 1 + 4 + 4*ndim` byte header is a plain
//! C-order array (numpy: `np.frombuffer(buf[off:], dtype).reshape(dims)`).

use crate::error::{Error, Result};
use crate::image::{MultiChannelImage, PixelDomain, SegmentationMask};
use std::fs;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"DGMM";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_U8: u8 = 2;

/// Payload of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    U8(Vec<u8>),
}

/// An n-dimensional array with its shape, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn from_f64(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::checked(dims, values.len()).map(|dims| Self {
            dims,
            data: TensorData::F64(values),
        })
    }

    pub fn from_u8(dims: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Self::checked(dims, values.len()).map(|dims| Self {
            dims,
            data: TensorData::U8(values),
        })
    }

    fn checked(dims: Vec<usize>, len: usize) -> Result<Vec<usize>> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != len {
            return Err(Error::DimensionMismatch {
                what: "tensor dims vs payload",
                expected,
                actual: len,
            });
        }
        if dims.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(Error::Invalid("tensor dims out of range".into()));
        }
        Ok(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            TensorData::U8(_) => Err(Error::Invalid("expected f64 tensor, found u8".into())),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F64(_) => Err(Error::Invalid("expected u8 tensor, found f64".into())),
        }
    }

    /// Serialized byte layout, exactly as stored on disk.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload_len = match &self.data {
            TensorData::F64(v) => v.len() * 8,
            TensorData::U8(v) => v.len(),
        };
        let mut out = Vec::with_capacity(13 + 4 * self.dims.len() + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        match &self.data {
            TensorData::F64(_) => out.push(DTYPE_F64),
            TensorData::U8(_) => out.push(DTYPE_U8),
        }
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let header = |off: usize, len: usize| -> Result<&[u8]> {
            bytes.get(off..off + len).ok_or(Error::TruncatedPayload {
                expected: off + len,
                actual: bytes.len(),
            })
        };
        let version = u32::from_le_bytes(header(4, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let dtype = header(8, 1)?[0];
        if dtype != DTYPE_F64 && dtype != DTYPE_U8 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let ndim = u32::from_le_bytes(header(9, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for i in 0..ndim {
            let d = u32::from_le_bytes(header(13 + 4 * i, 4)?.try_into().unwrap());
            dims.push(d as usize);
        }
        let offset = 13 + 4 * ndim;
        let count: usize = dims.iter().try_fold(1usize, |acc, &d| {
            acc.checked_mul(d)
                .ok_or_else(|| Error::Invalid("tensor dims overflow".into()))
        })?;
        let elem = if dtype == DTYPE_F64 { 8 } else { 1 };
        let expected = offset + count * elem;
        if bytes.len() != expected {
            return Err(Error::TruncatedPayload {
                expected: count * elem,
                actual: bytes.len() - offset.min(bytes.len()),
            });
        }
        let payload = &bytes[offset..];
        let data = if dtype == DTYPE_F64 {
            TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        } else {
            TensorData::U8(payload.to_vec())
        };
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid("tensor dims out of range".into()));
        }
        Ok(Self { dims, data })
    }
}

/// Writes a tensor file; the byte layout is exactly [`TensorFile::to_bytes`].
pub fn write_tensor(path: &Path, t: &TensorFile) -> Result<()> {
    fs::write(path, t.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads and validates a tensor file.
pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorFile::from_bytes(&bytes)
}

/// Image channels as a `[channels, height, width]` f64 tensor, full grid.
pub fn image_to_tensor(img: &MultiChannelImage) -> TensorFile {
    let d = img.domain();
    TensorFile::from_f64(
        vec![img.channels(), d.height(), d.width()],
        img.values().to_vec(),
    )
    .expect("image dimensions are consistent by construction")
}

pub fn image_from_tensor(t: &TensorFile, domain: PixelDomain) -> Result<MultiChannelImage> {
    let values = t.as_f64()?;
    match t.dims() {
        [c, h, w] if *h == domain.height() && *w == domain.width() => {
            MultiChannelImage::new(domain, *c, values.to_vec())
        }
        dims => Err(Error::Invalid(format!(
            "image tensor dims {:?} do not match domain {}x{}",
            dims,
            domain.height(),
            domain.width()
        ))),
    }
}

/// Mask labels as a `[height, width]` u8 tensor; non-ROI pixels store 0 and
/// are reconstructed from the ROI file on read.
pub fn mask_to_tensor(mask: &SegmentationMask) -> TensorFile {
    let d = mask.domain();
    let mut grid = vec![0u8; d.height() * d.width()];
    for (i, &flat) in d.pixels().iter().enumerate() {
        grid[flat] = mask.labels()[i];
    }
    TensorFile::from_u8(vec![d.height(), d.width()], grid)
        .expect("mask dimensions are consistent by construction")
}

pub fn mask_from_tensor(
    t: &TensorFile,
    domain: PixelDomain,
    classes: usize,
) -> Result<SegmentationMask> {
    let grid = t.as_u8()?;
    match t.dims() {
        [h, w] if *h == domain.height() && *w == domain.width() => {
            let labels = domain.pixels().iter().map(|&flat| grid[flat]).collect();
            SegmentationMask::new(domain, classes, labels)
        }
        dims => Err(Error::Invalid(format!(
            "mask tensor dims {:?} do not match domain {}x{}",
            dims,
            domain.height(),
            domain.width()
        ))),
    }
}

/// ROI as a `[height, width]` u8 tensor of 0/1 flags.
pub fn roi_to_tensor(domain: &PixelDomain) -> TensorFile {
    let grid = domain.roi().iter().map(|&b| b as u8).collect();
    TensorFile::from_u8(vec![domain.height(), domain.width()], grid)
        .expect("roi dimensions are consistent by construction")
}

pub fn domain_from_roi_tensor(t: &TensorFile) -> Result<PixelDomain> {
    let grid = t.as_u8()?;
    match t.dims() {
        [h, w] => PixelDomain::with_roi(*h, *w, grid.iter().map(|&b| b != 0).collect()),
        dims => Err(Error::Invalid(format!("roi tensor dims {dims:?}, want 2"))),
    }
}

/// Ordered key=value pairs; keys are unique, first write wins on read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("manifest is missing key `{key}`")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut manifest = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if manifest.get(key).is_none() {
                manifest.set(key, value.trim());
            }
        }
        Ok(manifest)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Resolves a manifest value as a path relative to the manifest's directory.
pub fn resolve_path(manifest_path: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

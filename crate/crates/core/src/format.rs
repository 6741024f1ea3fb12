//! Binary latent (`CSLT`) and image (`CSIM`) files.
//!
//! Both are little-endian with a fixed header, then `n` u16 labels, then the
//! row-major f32 payload.
//!
//! ```text
//! CSLT  0 magic "CSLT" | 4 u32 version=1 | 8 u32 dtype=1 | 12 u32 d | 16 u64 n
//!      24 u64 seed | 32 u8 family | 33 f64 param | 41 labels | 41+2n values
//! CSIM  0 magic "CSIM" | 4 u32 version=1 | 8 u32 h | 12 u32 w | 16 u32 c
//!      20 u64 n | 28 labels | 28+2n values in [0, 1], HWC
//! ```

use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::latent::{Label, LatentBatch};
use crate::shift::{Family, ShiftedBatch};

pub const LATENT_MAGIC: &[u8; 4] = b"CSLT";
pub const IMAGE_MAGIC: &[u8; 4] = b"CSIM";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const LATENT_HEADER_LEN: usize = 41;
pub const IMAGE_HEADER_LEN: usize = 28;

/// Which format rule a file broke.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatRule {
    #[error("truncated header: need {needed} bytes, file has {actual}")]
    TruncatedHeader { needed: usize, actual: usize },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype {0}")]
    UnsupportedDtype(u32),
    #[error("latent dimension {0} is below 2")]
    InvalidDimension(u32),
    #[error("invalid image shape: {0}")]
    InvalidShape(String),
    #[error("unknown family code {0}")]
    UnknownFamily(u8),
    #[error("non-finite shift parameter")]
    NonFiniteParameter,
    #[error("length mismatch: header implies {expected} bytes, file has {actual}")]
    LengthMismatch { expected: u128, actual: usize },
    #[error("non-finite value")]
    NonFiniteValue,
    #[error("pixel value {0} outside [0, 1]")]
    ValueOutOfRange(f32),
}

/// A format violation at a byte offset.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("format error at byte offset {offset}: {rule}")]
pub struct FormatError {
    pub offset: usize,
    pub rule: FormatRule,
}

fn fail<T>(offset: usize, rule: FormatRule) -> std::result::Result<T, FormatError> {
    Err(FormatError { offset, rule })
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(b[off..off + 8].try_into().unwrap())
}

/// Magic first (so a foreign file is reported as such even when short),
/// then header length, then version.
fn check_prefix(b: &[u8], expected: &[u8; 4], header_len: usize) -> std::result::Result<(), FormatError> {
    if b.len() >= 4 && &b[..4] != expected {
        return fail(
            0,
            FormatRule::BadMagic {
                found: b[..4].try_into().unwrap(),
                expected: *expected,
            },
        );
    }
    if b.len() < header_len {
        return fail(
            b.len(),
            FormatRule::TruncatedHeader {
                needed: header_len,
                actual: b.len(),
            },
        );
    }
    let version = u32_at(b, 4);
    if version != VERSION {
        return fail(4, FormatRule::UnsupportedVersion(version));
    }
    Ok(())
}

fn check_length(header: usize, n: u64, row_len: u64, actual: usize) -> std::result::Result<(), FormatError> {
    let expected = (4 * n as u128)
        .saturating_mul(row_len as u128)
        .saturating_add(header as u128 + 2 * n as u128);
    if expected != actual as u128 {
        let offset = (actual as u128).min(expected) as usize;
        return fail(offset, FormatRule::LengthMismatch { expected, actual });
    }
    Ok(())
}

fn read_labels(b: &[u8], start: usize, n: usize) -> Vec<Label> {
    b[start..start + 2 * n]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect()
}

fn read_values(b: &[u8], start: usize) -> Vec<f32> {
    b[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Contents of a latent file.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFile {
    pub dim: u32,
    pub seed: u64,
    pub family: Family,
    pub param: f64,
    pub labels: Vec<Label>,
    pub values: Vec<f32>,
}

impl LatentFile {
    pub fn from_shifted(batch: &ShiftedBatch) -> Self {
        Self {
            dim: batch.batch.dim as u32,
            seed: batch.source_seed,
            family: batch.spec.family(),
            param: batch.spec.param(),
            labels: batch.batch.labels.clone(),
            values: batch.batch.values.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Widened back to `f64` codes.
    pub fn to_batch(&self) -> LatentBatch {
        LatentBatch {
            dim: self.dim as usize,
            values: self.values.iter().map(|v| *v as f64).collect(),
            labels: self.labels.clone(),
            seed: self.seed,
            stream_id: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(LATENT_HEADER_LEN + 2 * self.len() + 4 * self.values.len());
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.push(self.family.code());
        out.extend_from_slice(&self.param.to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn parse(b: &[u8]) -> std::result::Result<Self, FormatError> {
        check_prefix(b, LATENT_MAGIC, LATENT_HEADER_LEN)?;
        let dtype = u32_at(b, 8);
        if dtype != DTYPE_F32 {
            return fail(8, FormatRule::UnsupportedDtype(dtype));
        }
        let dim = u32_at(b, 12);
        if dim < 2 {
            return fail(12, FormatRule::InvalidDimension(dim));
        }
        let n = u64_at(b, 16);
        let seed = u64_at(b, 24);
        let family = match Family::from_code(b[32]) {
            Some(f) => f,
            None => return fail(32, FormatRule::UnknownFamily(b[32])),
        };
        let param = f64::from_le_bytes(b[33..41].try_into().unwrap());
        if !param.is_finite() {
            return fail(33, FormatRule::NonFiniteParameter);
        }
        check_length(LATENT_HEADER_LEN, n, dim as u64, b.len())?;
        let n = n as usize;
        let values_at = LATENT_HEADER_LEN + 2 * n;
        let values = read_values(b, values_at);
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return fail(values_at + 4 * i, FormatRule::NonFiniteValue);
        }
        Ok(Self {
            dim,
            seed,
            family,
            param,
            labels: read_labels(b, LATENT_HEADER_LEN, n),
            values,
        })
    }
}

/// Contents of an image file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFile {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub labels: Vec<Label>,
    pub values: Vec<f32>,
}

impl ImageFile {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        (self.height * self.width * self.channels) as usize
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        match *ds.shape() {
            [h, w, c] => Ok(Self {
                height: h as u32,
                width: w as u32,
                channels: c as u32,
                labels: ds.labels().to_vec(),
                values: ds.data().to_vec(),
            }),
            _ => Err(Error::ShapeMismatch(format!(
                "images need an h×w×c shape, got {:?}",
                ds.shape()
            ))),
        }
    }

    pub fn into_dataset(self) -> Result<Dataset> {
        Dataset::new(
            vec![self.height as usize, self.width as usize, self.channels as usize],
            self.values,
            self.labels,
        )
    }

    /// Encodes the file, clamping pixels into `[0, 1]`. Returns the bytes and
    /// the number of clamped values.
    pub fn to_bytes(&self) -> Result<(Vec<u8>, usize)> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::ShapeMismatch("image dimensions must be positive".into()));
        }
        if self.values.len() != self.len() * self.pixels_per_image() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} images of {} pixels",
                self.values.len(),
                self.len(),
                self.pixels_per_image()
            )));
        }
        let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + 2 * self.len() + 4 * self.values.len());
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.height, self.width, self.channels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        let mut clamped = 0;
        for v in &self.values {
            if v.is_nan() {
                return Err(Error::NonFinite("pixel value".into()));
            }
            let c = v.clamp(0.0, 1.0);
            if c != *v {
                clamped += 1;
            }
            out.extend_from_slice(&c.to_le_bytes());
        }
        Ok((out, clamped))
    }

    pub fn parse(b: &[u8]) -> std::result::Result<Self, FormatError> {
        let header = parse_image_header(b)?;
        check_length(IMAGE_HEADER_LEN, header.n, header.row_len() as u64, b.len())?;
        let n = header.n as usize;
        let values_at = IMAGE_HEADER_LEN + 2 * n;
        let values = read_values(b, values_at);
        check_pixels(&values, values_at)?;
        Ok(Self {
            height: header.height,
            width: header.width,
            channels: header.channels,
            labels: read_labels(b, IMAGE_HEADER_LEN, n),
            values,
        })
    }
}

fn check_pixels(values: &[f32], base: usize) -> std::result::Result<(), FormatError> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return fail(base + 4 * i, FormatRule::NonFiniteValue);
        }
        if !(0.0..=1.0).contains(v) {
            return fail(base + 4 * i, FormatRule::ValueOutOfRange(*v));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct ImageHeader {
    height: u32,
    width: u32,
    channels: u32,
    n: u64,
}

impl ImageHeader {
    fn row_len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }
}

fn parse_image_header(b: &[u8]) -> std::result::Result<ImageHeader, FormatError> {
    check_prefix(b, IMAGE_MAGIC, IMAGE_HEADER_LEN)?;
    let mut dims = [0u32; 3];
    for (k, name) in ["h", "w", "c"].iter().enumerate() {
        let off = 8 + 4 * k;
        dims[k] = u32_at(b, off);
        if dims[k] == 0 {
            return fail(off, FormatRule::InvalidShape(format!("{name}=0")));
        }
    }
    let pixels = (dims[0] as u64).checked_mul(dims[1] as u64).and_then(|p| p.checked_mul(dims[2] as u64));
    if pixels.is_none_or(|p| usize::try_from(p).is_err()) {
        return fail(8, FormatRule::InvalidShape("h·w·c overflows".into()));
    }
    Ok(ImageHeader {
        height: dims[0],
        width: dims[1],
        channels: dims[2],
        n: u64_at(b, 20),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Writes a latent file and returns its bytes.
pub fn write_latents(path: &Path, file: &LatentFile) -> Result<Vec<u8>> {
    let bytes = file.to_bytes();
    write_bytes(path, &bytes)?;
    Ok(bytes)
}

pub fn read_latents(path: &Path) -> Result<LatentFile> {
    let bytes = std::fs::read(path)?;
    Ok(LatentFile::parse(&bytes)?)
}

/// Writes an image file; returns its bytes and the clamp count.
pub fn write_images(path: &Path, file: &ImageFile) -> Result<(Vec<u8>, usize)> {
    let (bytes, clamped) = file.to_bytes()?;
    write_bytes(path, &bytes)?;
    Ok((bytes, clamped))
}

pub fn read_images(path: &Path) -> Result<ImageFile> {
    let bytes = std::fs::read(path)?;
    Ok(ImageFile::parse(&bytes)?)
}

/// Streams the rows of an image file in panels, for training sets larger
/// than the memory budget.
pub struct ImagePanelReader {
    file: File,
    header: ImageHeader,
    shape: [usize; 3],
}

impl ImagePanelReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut head = [0u8; IMAGE_HEADER_LEN];
        let actual = file.read(&mut head)?;
        let header = parse_image_header(&head[..actual])?;
        let len = file.metadata()?.len() as usize;
        check_length(IMAGE_HEADER_LEN, header.n, header.row_len() as u64, len)?;
        Ok(Self {
            file,
            header,
            shape: [
                header.height as usize,
                header.width as usize,
                header.channels as usize,
            ],
        })
    }
}

impl crate::nn::TrainSource for ImagePanelReader {
    fn sample_shape(&self) -> &[usize] {
        &self.shape
    }

    fn len(&self) -> usize {
        self.header.n as usize
    }

    fn for_each_panel(
        &mut self,
        max_rows: usize,
        visit: &mut dyn FnMut(usize, &[f32]) -> Result<()>,
    ) -> Result<()> {
        let d = self.header.row_len();
        let n = self.header.n as usize;
        let base = IMAGE_HEADER_LEN + 2 * n;
        self.file.seek(SeekFrom::Start(base as u64))?;
        let mut raw = Vec::new();
        let mut start = 0;
        while start < n {
            let rows = max_rows.max(1).min(n - start);
            raw.resize(rows * d * 4, 0);
            self.file.read_exact(&mut raw)?;
            let panel: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            check_pixels(&panel, base + 4 * start * d)?;
            visit(start, &panel)?;
            start += rows;
        }
        Ok(())
    }
}

//! NIfTI-1 single-file reader and writer.
//!
//! A [`Volume`] keeps the stored voxel bytes exactly as they appear on disk
//! together with the original header (and any extension bytes), so that
//! `serialize_nifti(parse_nifti(f)?)? == f` for every supported file. Scaling
//! (`scl_slope`/`scl_inter`) is carried in the header but never applied.
//!
//! Only the four datatypes the cipher is exercised on are accepted:
//! `u8`, `i16`, `u16` and `f32`. Everything else is rejected rather than
//! converted.

mod header;
mod normalize;

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::fsutil::atomic_write;
use header::{HeaderView, HeaderWriter};

pub use header::{MAGIC_PAIRED, MAGIC_SINGLE};
pub use normalize::{
    intensity_normalize, intensity_normalize_with, median_spacing, percentile, spatial_normalize,
    IntensityScaling, NormalizedVolume, VolumeStats,
};

/// Errors produced while reading, writing or transforming volumes.
#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("bad magic: expected \"n+1\\0\" single-file NIfTI-1")]
    BadMagic,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated data: need {expected} bytes, have {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("invalid dim field: {0}")]
    BadDims(String),
    #[error("invalid vox_offset {0}")]
    BadVoxOffset(f32),
    #[error("sizeof_hdr is {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("header out of sync with volume: {0}")]
    InconsistentHeader(String),
    #[error("buffer holds {actual} bytes, dims and datatype need {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("spacing must be finite and > 0")]
    NonPositiveSpacing,
    #[error("operation needs a rank-{expected} volume, got rank {actual}")]
    RankMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NiftiError> = std::result::Result<T, E>;

/// Voxel storage types accepted by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Datatype {
    U8,
    I16,
    U16,
    F32,
}

impl Datatype {
    pub const ALL: [Datatype; 4] = [Datatype::U8, Datatype::I16, Datatype::U16, Datatype::F32];

    pub fn from_code(code: i16) -> Option<Datatype> {
        match code {
            2 => Some(Datatype::U8),
            4 => Some(Datatype::I16),
            512 => Some(Datatype::U16),
            16 => Some(Datatype::F32),
            _ => None,
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::U16 => 512,
            Datatype::F32 => 16,
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 | Datatype::U16 => 2,
            Datatype::F32 => 4,
        }
    }

    pub fn bitpix(self) -> i16 {
        8 * self.bytes_per_voxel() as i16
    }

    /// Largest representable value, or `None` for floating point.
    pub fn max_value(self) -> Option<f64> {
        match self {
            Datatype::U8 => Some(u8::MAX as f64),
            Datatype::I16 => Some(i16::MAX as f64),
            Datatype::U16 => Some(u16::MAX as f64),
            Datatype::F32 => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Datatype::U8 => "u8",
            Datatype::I16 => "i16",
            Datatype::U16 => "u16",
            Datatype::F32 => "f32",
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Datatype {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "u8" | "uint8" => Ok(Datatype::U8),
            "i16" | "int16" => Ok(Datatype::I16),
            "u16" | "uint16" => Ok(Datatype::U16),
            "f32" | "float32" => Ok(Datatype::F32),
            other => Err(format!(
                "unknown datatype `{other}` (expected u8, i16, u16 or f32)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// A parsed volume: stored voxel bytes plus the header they came with.
///
/// `voxel_data` is row-major with axis 1 fastest and is kept in the file's
/// byte order. Fields are public so callers can rework a volume in memory;
/// after changing `dims`, `spacing` or `datatype`, call
/// [`Volume::sync_header`] before serializing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub datatype: Datatype,
    pub endianness: Endianness,
    pub voxel_data: Vec<u8>,
    /// Original header plus extension bytes; its length is the `vox_offset`.
    pub header_blob: Vec<u8>,
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > 7 {
        return Err(NiftiError::BadDims(format!(
            "rank {} outside 1..=7",
            dims.len()
        )));
    }
    if let Some(d) = dims.iter().find(|&&d| d == 0 || d > i16::MAX as usize) {
        return Err(NiftiError::BadDims(format!("extent {d} outside 1..=32767")));
    }
    Ok(())
}

fn sanitize_spacing(raw: f32, axis: usize) -> f64 {
    let v = raw as f64;
    if v.is_finite() && v > 0.0 {
        v
    } else if v.is_finite() && v < 0.0 {
        log::warn!(
            "pixdim[{}] = {v} is negative; using its magnitude",
            axis + 1
        );
        -v
    } else {
        log::warn!(
            "pixdim[{}] = {v} is not a valid spacing; using 1.0",
            axis + 1
        );
        1.0
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.len() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes).read_to_end(&mut out)?;
        Ok(std::borrow::Cow::Owned(out))
    } else {
        Ok(std::borrow::Cow::Borrowed(bytes))
    }
}

/// Parse a single-file NIfTI-1 volume, gunzipping first if the input starts
/// with the gzip magic.
pub fn parse_nifti(file_bytes: &[u8]) -> Result<Volume> {
    let bytes = maybe_gunzip(file_bytes)?;
    let bytes = bytes.as_ref();
    if bytes.len() < header::MIN_FILE_SIZE {
        return Err(NiftiError::TruncatedData {
            expected: header::MIN_FILE_SIZE,
            actual: bytes.len(),
        });
    }
    let magic = &bytes[header::OFF_MAGIC..header::OFF_MAGIC + 4];
    if magic != MAGIC_SINGLE {
        return Err(NiftiError::BadMagic);
    }

    // dim[0] must be 1..=7; if the little-endian read is not, the file is big-endian.
    let endianness = [Endianness::Little, Endianness::Big]
        .into_iter()
        .find(|&e| (1..=7).contains(&HeaderView::new(bytes, e).i16_at(header::OFF_DIM)))
        .ok_or_else(|| NiftiError::BadDims("dim[0] outside 1..=7 in both byte orders".into()))?;
    let view = HeaderView::new(bytes, endianness);

    let sizeof_hdr = view.i32_at(header::OFF_SIZEOF_HDR);
    if sizeof_hdr != header::HEADER_SIZE as i32 {
        return Err(NiftiError::BadHeaderSize(sizeof_hdr));
    }

    let dim = view.dim();
    let rank = dim[0] as usize;
    let dims = dim[1..=rank]
        .iter()
        .map(|&d| {
            if d >= 1 {
                Ok(d as usize)
            } else {
                Err(NiftiError::BadDims(format!("non-positive extent {d}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let code = view.i16_at(header::OFF_DATATYPE);
    let datatype = Datatype::from_code(code).ok_or(NiftiError::UnsupportedDatatype(code))?;

    let raw_offset = view.f32_at(header::OFF_VOX_OFFSET);
    if !raw_offset.is_finite()
        || raw_offset < header::HEADER_SIZE as f32
        || raw_offset.fract() != 0.0
    {
        return Err(NiftiError::BadVoxOffset(raw_offset));
    }
    let vox_offset = raw_offset as usize;

    let expected = byte_len(&dims, datatype)?
        .checked_add(vox_offset)
        .ok_or_else(|| NiftiError::BadDims(format!("extents {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(NiftiError::TruncatedData {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        log::warn!(
            "ignoring {} trailing bytes after voxel data",
            bytes.len() - expected
        );
    }

    let pixdim = view.pixdim();
    let spacing = (0..rank)
        .map(|ax| sanitize_spacing(pixdim[ax + 1], ax))
        .collect();

    Ok(Volume {
        dims,
        spacing,
        datatype,
        endianness,
        voxel_data: bytes[vox_offset..expected].to_vec(),
        header_blob: bytes[..vox_offset].to_vec(),
    })
}

/// Emit the header blob followed by the voxel bytes.
///
/// Fails with [`NiftiError::InconsistentHeader`] if the in-memory fields have
/// drifted from what the header records.
pub fn serialize_nifti(v: &Volume) -> Result<Vec<u8>> {
    v.check_header()?;
    let mut out = Vec::with_capacity(v.header_blob.len() + v.voxel_data.len());
    out.extend_from_slice(&v.header_blob);
    out.extend_from_slice(&v.voxel_data);
    Ok(out)
}

/// Voxel payload size in bytes, or `BadDims` if it does not fit in `usize`.
fn byte_len(dims: &[usize], datatype: Datatype) -> Result<usize> {
    dims.iter()
        .try_fold(datatype.bytes_per_voxel(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NiftiError::BadDims(format!("extents {dims:?} overflow")))
}

/// Build a volume from a bare voxel array (e.g. pixel data lifted out of a
/// DICOM series), synthesizing a minimal little-endian NIfTI-1 header.
pub fn ingest_raw(
    dims: &[usize],
    datatype: Datatype,
    spacing: &[f64],
    data: Vec<u8>,
) -> Result<Volume> {
    validate_dims(dims)?;
    if spacing.len() != dims.len() {
        return Err(NiftiError::BadDims(format!(
            "{} spacing values for rank {}",
            spacing.len(),
            dims.len()
        )));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(NiftiError::NonPositiveSpacing);
    }
    let expected = byte_len(dims, datatype)?;
    if data.len() != expected {
        return Err(NiftiError::SizeMismatch {
            expected,
            actual: data.len(),
        });
    }

    let mut blob = vec![0u8; header::MIN_FILE_SIZE];
    {
        let mut w = HeaderWriter::new(&mut blob, Endianness::Little);
        w.put_i32(header::OFF_SIZEOF_HDR, header::HEADER_SIZE as i32);
        w.put_u8(header::OFF_REGULAR, b'r');
        w.put_f32(header::OFF_SCL_SLOPE, 1.0);
        // NIFTI_UNITS_MM
        w.put_u8(header::OFF_XYZT_UNITS, 2);
        w.put_f32(header::OFF_PIXDIM, 1.0);
        w.put_bytes(header::OFF_MAGIC, MAGIC_SINGLE);
    }
    let mut v = Volume {
        dims: dims.to_vec(),
        spacing: spacing.to_vec(),
        datatype,
        endianness: Endianness::Little,
        voxel_data: data,
        header_blob: blob,
    };
    v.sync_header()?;
    Ok(v)
}

impl Volume {
    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes_per_voxel(&self) -> usize {
        self.datatype.bytes_per_voxel()
    }

    pub fn vox_offset(&self) -> usize {
        self.header_blob.len()
    }

    /// Rewrite dim, datatype, bitpix, pixdim and vox_offset in the header
    /// from the in-memory fields.
    pub fn sync_header(&mut self) -> Result<()> {
        validate_dims(&self.dims)?;
        if self.spacing.len() != self.dims.len() {
            return Err(NiftiError::BadDims(format!(
                "{} spacing values for rank {}",
                self.spacing.len(),
                self.dims.len()
            )));
        }
        if self.header_blob.len() < header::HEADER_SIZE {
            return Err(NiftiError::InconsistentHeader(format!(
                "header blob is {} bytes",
                self.header_blob.len()
            )));
        }
        let vox_offset = self.header_blob.len() as f32;
        let mut w = HeaderWriter::new(&mut self.header_blob, self.endianness);
        for i in 0..8 {
            let d = match i {
                0 => self.dims.len() as i16,
                i if i <= self.dims.len() => self.dims[i - 1] as i16,
                _ => 1,
            };
            w.put_i16(header::OFF_DIM + 2 * i, d);
        }
        w.put_i16(header::OFF_DATATYPE, self.datatype.code());
        w.put_i16(header::OFF_BITPIX, self.datatype.bitpix());
        for (ax, s) in self.spacing.iter().enumerate() {
            w.put_f32(header::OFF_PIXDIM + 4 * (ax + 1), *s as f32);
        }
        w.put_f32(header::OFF_VOX_OFFSET, vox_offset);
        Ok(())
    }

    fn check_header(&self) -> Result<()> {
        let bad = |msg: String| Err(NiftiError::InconsistentHeader(msg));
        if self.header_blob.len() < header::HEADER_SIZE {
            return bad(format!("header blob is {} bytes", self.header_blob.len()));
        }
        let view = HeaderView::new(&self.header_blob, self.endianness);
        let dim = view.dim();
        let rank = self.dims.len();
        if dim[0] as usize != rank
            || rank > 7
            || dim[1..=rank]
                .iter()
                .zip(&self.dims)
                .any(|(&h, &d)| h as usize != d)
        {
            return bad(format!(
                "header dim {:?} vs volume dims {:?}",
                dim, self.dims
            ));
        }
        if view.i16_at(header::OFF_DATATYPE) != self.datatype.code() {
            return bad(format!(
                "header datatype {} vs volume {}",
                view.i16_at(header::OFF_DATATYPE),
                self.datatype
            ));
        }
        if view.f32_at(header::OFF_VOX_OFFSET) != self.header_blob.len() as f32 {
            return bad(format!(
                "vox_offset {} vs header blob length {}",
                view.f32_at(header::OFF_VOX_OFFSET),
                self.header_blob.len()
            ));
        }
        let expected = self.len() * self.bytes_per_voxel();
        if self.voxel_data.len() != expected {
            return bad(format!(
                "voxel buffer is {} bytes, dims need {expected}",
                self.voxel_data.len()
            ));
        }
        Ok(())
    }

    /// A volume with the same header lineage but new geometry and payload.
    /// The header is re-synced; orientation and other fields carry over.
    pub fn derive(
        &self,
        dims: Vec<usize>,
        spacing: Vec<f64>,
        datatype: Datatype,
        voxel_data: Vec<u8>,
    ) -> Result<Volume> {
        let expected = byte_len(&dims, datatype)?;
        if voxel_data.len() != expected {
            return Err(NiftiError::SizeMismatch {
                expected,
                actual: voxel_data.len(),
            });
        }
        let mut v = Volume {
            dims,
            spacing,
            datatype,
            endianness: self.endianness,
            voxel_data,
            header_blob: self.header_blob.clone(),
        };
        v.sync_header()?;
        Ok(v)
    }

    /// Decoded value of voxel `i` (linear index), as stored (no scaling).
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        let bpv = self.bytes_per_voxel();
        let b = &self.voxel_data[i * bpv..(i + 1) * bpv];
        let le = self.endianness == Endianness::Little;
        match self.datatype {
            Datatype::U8 => b[0] as f64,
            Datatype::I16 => {
                let a = [b[0], b[1]];
                (if le {
                    i16::from_le_bytes(a)
                } else {
                    i16::from_be_bytes(a)
                }) as f64
            }
            Datatype::U16 => {
                let a = [b[0], b[1]];
                (if le {
                    u16::from_le_bytes(a)
                } else {
                    u16::from_be_bytes(a)
                }) as f64
            }
            Datatype::F32 => {
                let a = [b[0], b[1], b[2], b[3]];
                (if le {
                    f32::from_le_bytes(a)
                } else {
                    f32::from_be_bytes(a)
                }) as f64
            }
        }
    }

    /// All voxel values decoded to `f64`.
    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// Encode `values` into this volume's datatype and byte order. Values are
    /// rounded and saturated for integer types.
    pub fn encode_values(datatype: Datatype, endianness: Endianness, values: &[f64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(values.len() * datatype.bytes_per_voxel());
        let le = endianness == Endianness::Little;
        for &v in values {
            match datatype {
                Datatype::U8 => out.push(v.round().clamp(0.0, 255.0) as u8),
                Datatype::I16 => {
                    let x = v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                    out.extend_from_slice(&if le { x.to_le_bytes() } else { x.to_be_bytes() });
                }
                Datatype::U16 => {
                    let x = v.round().clamp(0.0, u16::MAX as f64) as u16;
                    out.extend_from_slice(&if le { x.to_le_bytes() } else { x.to_be_bytes() });
                }
                Datatype::F32 => {
                    let x = v as f32;
                    out.extend_from_slice(&if le { x.to_le_bytes() } else { x.to_be_bytes() });
                }
            }
        }
        out
    }

    /// Convenience constructor: encode `values` and wrap them with a fresh header.
    pub fn from_values(
        dims: &[usize],
        datatype: Datatype,
        spacing: &[f64],
        values: &[f64],
    ) -> Result<Volume> {
        ingest_raw(
            dims,
            datatype,
            spacing,
            Self::encode_values(datatype, Endianness::Little, values),
        )
    }
}

/// Read and parse a `.nii` or `.nii.gz` file.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let bytes = fs::read(path)?;
    parse_nifti(&bytes)
}

/// Serialize and write atomically; gzip when the path ends in `.gz`.
pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    let bytes = serialize_nifti(v)?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?
    } else {
        bytes
    };
    atomic_write(path, &bytes)?;
    Ok(())
}

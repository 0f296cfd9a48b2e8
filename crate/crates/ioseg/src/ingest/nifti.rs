//! Minimal NIfTI-1 reader/writer.
//!
//! Supported subset: single-file `.nii` / `.nii.gz`, 348-byte NIfTI-1
//! header, 3-D volumes, datatypes {u8, i16, u16, f32, f64}, either byte
//! order on read (written little-endian), `scl_slope`/`scl_inter` applied
//! when the slope is non-zero, `vox_offset` respected. Orientation fields
//! (qform/sform) are ignored; slices are taken in stored axis order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Modality, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

// Header field byte offsets.
const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_MAGIC: usize = 344;

/// On-disk element type of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDtype {
    U8,
    I16,
    U16,
    F32,
    F64,
}

impl NiftiDtype {
    pub fn from_code(code: i16) -> Result<NiftiDtype> {
        match code {
            2 => Ok(NiftiDtype::U8),
            4 => Ok(NiftiDtype::I16),
            16 => Ok(NiftiDtype::F32),
            64 => Ok(NiftiDtype::F64),
            512 => Ok(NiftiDtype::U16),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        match self {
            NiftiDtype::U8 => 2,
            NiftiDtype::I16 => 4,
            NiftiDtype::F32 => 16,
            NiftiDtype::F64 => 64,
            NiftiDtype::U16 => 512,
        }
    }

    pub fn byte_size(self) -> usize {
        match self {
            NiftiDtype::U8 => 1,
            NiftiDtype::I16 | NiftiDtype::U16 => 2,
            NiftiDtype::F32 => 4,
            NiftiDtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Header {
    dims: (usize, usize, usize),
    spacing: (f32, f32, f32),
    dtype: NiftiDtype,
    vox_offset: usize,
    slope: f32,
    inter: f32,
    endian: Endian,
}

fn read_i16(bytes: &[u8], offset: usize, endian: Endian) -> i16 {
    let raw = [bytes[offset], bytes[offset + 1]];
    match endian {
        Endian::Little => i16::from_le_bytes(raw),
        Endian::Big => i16::from_be_bytes(raw),
    }
}

fn read_f32(bytes: &[u8], offset: usize, endian: Endian) -> f32 {
    let raw = [
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ];
    match endian {
        Endian::Little => f32::from_le_bytes(raw),
        Endian::Big => f32::from_be_bytes(raw),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!(
            "file holds {} bytes, NIfTI-1 header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let le = i32::from_le_bytes(bytes[OFF_SIZEOF_HDR..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[OFF_SIZEOF_HDR..4].try_into().unwrap());
    let endian = if le == HEADER_SIZE as i32 {
        Endian::Little
    } else if be == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::MalformedHeader(format!(
            "sizeof_hdr is {le}, expected {HEADER_SIZE}"
        )));
    };
    if &bytes[OFF_MAGIC..OFF_MAGIC + 4] != MAGIC {
        return Err(Error::MalformedHeader(
            "magic is not 'n+1' (single-file NIfTI-1)".to_string(),
        ));
    }

    let ndim = read_i16(bytes, OFF_DIM, endian);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] is {ndim}")));
    }
    let mut dim = [1i64; 7];
    for (i, d) in dim.iter_mut().enumerate().take(ndim as usize) {
        *d = read_i16(bytes, OFF_DIM + 2 * (i + 1), endian) as i64;
        if *d < 1 {
            return Err(Error::MalformedHeader(format!(
                "dim[{}] is {d:?}, must be >= 1",
                i + 1
            )));
        }
    }
    // Accept 3-D volumes, including declared-4D files whose trailing axes
    // are singletons; reject anything genuinely below or above 3-D.
    if (ndim as usize) < 3 {
        return Err(Error::DimensionalityError(ndim as usize));
    }
    let effective_ndim = (1..=7).rev().find(|&i| dim[i - 1] > 1).unwrap_or(1);
    if effective_ndim > 3 {
        return Err(Error::DimensionalityError(effective_ndim));
    }

    let dtype = NiftiDtype::from_code(read_i16(bytes, OFF_DATATYPE, endian))?;

    let mut spacing = [0f32; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = read_f32(bytes, OFF_PIXDIM + 4 * (i + 1), endian);
        if !(s.is_finite() && *s > 0.0) {
            return Err(Error::MalformedHeader(format!(
                "pixdim[{}] is {s}, must be strictly positive",
                i + 1
            )));
        }
    }

    let vox_offset_f = read_f32(bytes, OFF_VOX_OFFSET, endian);
    if !vox_offset_f.is_finite() || vox_offset_f < HEADER_SIZE as f32 {
        return Err(Error::MalformedHeader(format!(
            "vox_offset is {vox_offset_f}"
        )));
    }
    let slope = read_f32(bytes, OFF_SCL_SLOPE, endian);
    let inter = read_f32(bytes, OFF_SCL_INTER, endian);
    if !slope.is_finite() || !inter.is_finite() {
        return Err(Error::MalformedHeader(
            "scl_slope/scl_inter are not finite".to_string(),
        ));
    }

    Ok(Header {
        dims: (dim[0] as usize, dim[1] as usize, dim[2] as usize),
        spacing: (spacing[0], spacing[1], spacing[2]),
        dtype,
        vox_offset: vox_offset_f as usize,
        slope,
        inter,
        endian,
    })
}

fn decode_voxels(bytes: &[u8], header: &Header) -> Result<Vec<f64>> {
    let (nx, ny, nz) = header.dims;
    let count = nx * ny * nz;
    let size = header.dtype.byte_size();
    let needed = header.vox_offset + count * size;
    if bytes.len() < needed {
        return Err(Error::MalformedHeader(format!(
            "file truncated: {} bytes, voxel data needs {needed}",
            bytes.len()
        )));
    }
    let data = &bytes[header.vox_offset..needed];
    let mut voxels = Vec::with_capacity(count);
    for i in 0..count {
        let chunk = &data[i * size..(i + 1) * size];
        let raw = match (header.dtype, header.endian) {
            (NiftiDtype::U8, _) => chunk[0] as f64,
            (NiftiDtype::I16, Endian::Little) => {
                i16::from_le_bytes(chunk.try_into().unwrap()) as f64
            }
            (NiftiDtype::I16, Endian::Big) => i16::from_be_bytes(chunk.try_into().unwrap()) as f64,
            (NiftiDtype::U16, Endian::Little) => {
                u16::from_le_bytes(chunk.try_into().unwrap()) as f64
            }
            (NiftiDtype::U16, Endian::Big) => u16::from_be_bytes(chunk.try_into().unwrap()) as f64,
            (NiftiDtype::F32, Endian::Little) => {
                f32::from_le_bytes(chunk.try_into().unwrap()) as f64
            }
            (NiftiDtype::F32, Endian::Big) => f32::from_be_bytes(chunk.try_into().unwrap()) as f64,
            (NiftiDtype::F64, Endian::Little) => f64::from_le_bytes(chunk.try_into().unwrap()),
            (NiftiDtype::F64, Endian::Big) => f64::from_be_bytes(chunk.try_into().unwrap()),
        };
        // scl_slope == 0 means "no scaling" by convention.
        let value = if header.slope != 0.0 {
            header.slope as f64 * raw + header.inter as f64
        } else {
            raw
        };
        voxels.push(value);
    }
    Ok(voxels)
}

fn read_file_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    // Sniff the gzip magic rather than trusting the extension.
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut decoded = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut decoded)?;
        Ok(decoded)
    } else {
        Ok(raw)
    }
}

/// Load a NIfTI-1 volume, inferring the modality from the filename suffix.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    load_nifti_with_modality(path, Modality::from_path(path))
}

/// Load a NIfTI-1 volume with an explicit modality tag, overriding the
/// filename convention.
pub fn load_nifti_with_modality(path: impl AsRef<Path>, modality: Modality) -> Result<Volume> {
    let bytes = read_file_bytes(path.as_ref())?;
    let header = parse_header(&bytes)?;
    let voxels = decode_voxels(&bytes, &header)?;
    Volume::with_dtype(header.dims, header.spacing, voxels, modality, header.dtype)
}

fn put_i16(buf: &mut [u8], offset: usize, value: i16) {
    buf[offset..offset + 2].copy_from_slice(&value.to_le_bytes());
}

fn put_i32(buf: &mut [u8], offset: usize, value: i32) {
    buf[offset..offset + 4].copy_from_slice(&value.to_le_bytes());
}

fn put_f32(buf: &mut [u8], offset: usize, value: f32) {
    buf[offset..offset + 4].copy_from_slice(&value.to_le_bytes());
}

fn encode_voxel(value: f64, dtype: NiftiDtype, out: &mut Vec<u8>) -> Result<()> {
    let integral = |lo: f64, hi: f64| -> Result<f64> {
        if value.fract() == 0.0 && (lo..=hi).contains(&value) {
            Ok(value)
        } else {
            Err(Error::DomainError(format!(
                "voxel value {value} is not representable as {dtype:?}"
            )))
        }
    };
    match dtype {
        NiftiDtype::U8 => out.push(integral(0.0, u8::MAX as f64)? as u8),
        NiftiDtype::I16 => {
            out.extend_from_slice(&(integral(i16::MIN as f64, i16::MAX as f64)? as i16).to_le_bytes())
        }
        NiftiDtype::U16 => {
            out.extend_from_slice(&(integral(0.0, u16::MAX as f64)? as u16).to_le_bytes())
        }
        NiftiDtype::F32 => out.extend_from_slice(&(value as f32).to_le_bytes()),
        NiftiDtype::F64 => out.extend_from_slice(&value.to_le_bytes()),
    }
    Ok(())
}

/// Write a volume in the supported NIfTI-1 subset (little-endian, identity
/// scaling, element type [`Volume::dtype`]); gzip-compressed when the path
/// ends in `.gz`. Integer element types reject values they cannot represent
/// exactly.
pub fn write_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (nx, ny, nz) = volume.dims();
    if nx > i16::MAX as usize || ny > i16::MAX as usize || nz > i16::MAX as usize {
        return Err(Error::DomainError(format!(
            "dims {nx}x{ny}x{nz} exceed the NIfTI-1 16-bit dimension limit"
        )));
    }
    let dtype = volume.dtype();
    let (sx, sy, sz) = volume.spacing();

    let mut buf = vec![0u8; DEFAULT_VOX_OFFSET];
    put_i32(&mut buf, OFF_SIZEOF_HDR, HEADER_SIZE as i32);
    put_i16(&mut buf, OFF_DIM, 3);
    put_i16(&mut buf, OFF_DIM + 2, nx as i16);
    put_i16(&mut buf, OFF_DIM + 4, ny as i16);
    put_i16(&mut buf, OFF_DIM + 6, nz as i16);
    for i in 4..8 {
        put_i16(&mut buf, OFF_DIM + 2 * i, 1);
    }
    put_i16(&mut buf, OFF_DATATYPE, dtype.code());
    put_i16(&mut buf, OFF_BITPIX, (dtype.byte_size() * 8) as i16);
    put_f32(&mut buf, OFF_PIXDIM, 1.0); // qfac
    put_f32(&mut buf, OFF_PIXDIM + 4, sx);
    put_f32(&mut buf, OFF_PIXDIM + 8, sy);
    put_f32(&mut buf, OFF_PIXDIM + 12, sz);
    put_f32(&mut buf, OFF_VOX_OFFSET, DEFAULT_VOX_OFFSET as f32);
    put_f32(&mut buf, OFF_SCL_SLOPE, 1.0);
    put_f32(&mut buf, OFF_SCL_INTER, 0.0);
    buf[OFF_XYZT_UNITS] = 2; // millimeters
    buf[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC);

    buf.reserve(volume.voxels().len() * dtype.byte_size());
    for &v in volume.voxels() {
        encode_voxel(v, dtype, &mut buf)?;
    }

    let mut file = File::create(path)?;
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    if gz {
        let mut encoder = GzEncoder::new(&mut file, Compression::default());
        encoder.write_all(&buf)?;
        encoder.finish()?;
    } else {
        file.write_all(&buf)?;
    }
    file.flush()?;
    Ok(())
}

//! NIfTI-1 reader/writer (single-file `.nii`, header/image pairs, and gzip).
//!
//! Reads uint8, int16, int32, float32 and float64 payloads, honouring
//! `scl_slope`/`scl_inter`. Writes float32 images and uint8 labels with
//! identity scaling. Only little-endian files are accepted.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Affine, Grid, ImageVolume, LabelVolume, IDENTITY_AFFINE};

const HEADER_SIZE: usize = 348;
const SINGLE_FILE_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

pub const INTENT_NONE: i16 = 0;
pub const INTENT_DISPVECT: i16 = 1006;

/// Intent name stamped on displacement fields stored in voxel units.
pub const DISPFIELD_INTENT_NAME: &str = "dispfield-voxel";

/// Decoded header fields this crate cares about.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    /// All declared dimensions (`dim[1..=dim[0]]`).
    pub dims: Vec<usize>,
    pub spacing: [f64; 3],
    pub affine: Affine,
    pub datatype: i16,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub intent_code: i16,
    pub intent_name: String,
    pub vox_offset: usize,
    pub descrip: String,
}

/// A decoded NIfTI file: header plus scaled voxel values in file order.
#[derive(Debug, Clone)]
pub struct RawNifti {
    pub header: Header,
    pub values: Vec<f64>,
}

impl RawNifti {
    pub fn is_integer_typed(&self) -> bool {
        matches!(self.header.datatype, DT_UINT8 | DT_INT16 | DT_INT32)
    }

    /// Dims with trailing singleton dimensions removed.
    pub fn squeezed_dims(&self) -> Vec<usize> {
        let mut d = self.header.dims.clone();
        while d.len() > 1 && *d.last().unwrap() == 1 {
            d.pop();
        }
        d
    }

    fn grid3(&self) -> Result<Grid> {
        let mut d = self.squeezed_dims();
        if d.len() > 3 {
            return Err(Error::UnsupportedDims(format!("expected a 3D volume, got dims {:?}", self.header.dims)));
        }
        d.resize(3, 1);
        Grid::new([d[0], d[1], d[2]], self.header.spacing, self.header.affine)
    }
}

/// Either kind of volume, decided by the on-disk datatype.
#[derive(Debug, Clone)]
pub enum NiftiVolume {
    Image(ImageVolume),
    Labels(LabelVolume),
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::MalformedHeader(format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn cstr(b: &[u8]) -> String {
    let end = b.iter().position(|&c| c == 0).unwrap_or(b.len());
    String::from_utf8_lossy(&b[..end]).into_owned()
}

fn bytes_per_voxel(datatype: i16) -> Result<usize> {
    match datatype {
        DT_UINT8 => Ok(1),
        DT_INT16 => Ok(2),
        DT_INT32 | DT_FLOAT32 => Ok(4),
        DT_FLOAT64 => Ok(8),
        other => Err(Error::UnsupportedDatatype(other)),
    }
}

fn quaternion_affine(b: &[u8], pixdim: &[f32; 8]) -> Affine {
    let qb = f32_at(b, 256) as f64;
    let qc = f32_at(b, 260) as f64;
    let qd = f32_at(b, 264) as f64;
    let qa = (1.0 - (qb * qb + qc * qc + qd * qd)).max(0.0).sqrt();
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let (dx, dy, dz) = (pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64 * qfac);
    let r = [
        [qa * qa + qb * qb - qc * qc - qd * qd, 2.0 * (qb * qc - qa * qd), 2.0 * (qb * qd + qa * qc)],
        [2.0 * (qb * qc + qa * qd), qa * qa + qc * qc - qb * qb - qd * qd, 2.0 * (qc * qd - qa * qb)],
        [2.0 * (qb * qd - qa * qc), 2.0 * (qc * qd + qa * qb), qa * qa + qd * qd - qc * qc - qb * qb],
    ];
    let offs = [f32_at(b, 268) as f64, f32_at(b, 272) as f64, f32_at(b, 276) as f64];
    let mut a = IDENTITY_AFFINE;
    for row in 0..3 {
        a[row][0] = r[row][0] * dx;
        a[row][1] = r[row][1] * dy;
        a[row][2] = r[row][2] * dz;
        a[row][3] = offs[row];
    }
    a
}

pub fn parse_header(b: &[u8]) -> Result<Header> {
    if b.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!("file is {} bytes, shorter than the 348-byte header", b.len())));
    }
    let sizeof_hdr = i32_at(b, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::MalformedHeader("big-endian files are not supported".into()));
        }
        if sizeof_hdr == 540 {
            return Err(Error::MalformedHeader("NIfTI-2 is not supported".into()));
        }
        return Err(Error::MalformedHeader(format!("sizeof_hdr = {sizeof_hdr}")));
    }
    let magic = &b[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(Error::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let ndim = i16_at(b, 40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for d in 1..=ndim as usize {
        let v = i16_at(b, 40 + 2 * d);
        if v < 1 {
            return Err(Error::MalformedHeader(format!("dim[{d}] = {v}")));
        }
        dims.push(v as usize);
    }
    let datatype = i16_at(b, 70);
    bytes_per_voxel(datatype)?;
    let mut pixdim = [0f32; 8];
    for (n, p) in pixdim.iter_mut().enumerate() {
        *p = f32_at(b, 76 + 4 * n);
    }
    let spacing = [
        pixdim[1].abs() as f64,
        if ndim >= 2 { pixdim[2].abs() as f64 } else { 1.0 },
        if ndim >= 3 { pixdim[3].abs() as f64 } else { 1.0 },
    ]
    .map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
    let vox_offset = f32_at(b, 108);
    if !(vox_offset >= 0.0 && vox_offset.is_finite()) {
        return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let scl_slope = f32_at(b, 112);
    let scl_inter = f32_at(b, 116);
    let qform_code = i16_at(b, 252);
    let sform_code = i16_at(b, 254);
    let affine = if sform_code > 0 {
        let mut a = IDENTITY_AFFINE;
        for (row, off) in [280usize, 296, 312].into_iter().enumerate() {
            for col in 0..4 {
                a[row][col] = f32_at(b, off + 4 * col) as f64;
            }
        }
        a
    } else if qform_code > 0 {
        quaternion_affine(b, &pixdim)
    } else {
        let mut a = IDENTITY_AFFINE;
        for (axis, s) in spacing.iter().enumerate() {
            a[axis][axis] = *s;
        }
        a
    };
    Ok(Header {
        dims,
        spacing,
        affine,
        datatype,
        scl_slope,
        scl_inter,
        intent_code: i16_at(b, 68),
        intent_name: cstr(&b[328..344]),
        vox_offset: vox_offset as usize,
        descrip: cstr(&b[148..228]),
    })
}

fn decode_payload(header: &Header, payload: &[u8]) -> Result<Vec<f64>> {
    let n: usize = header.dims.iter().product();
    let bpv = bytes_per_voxel(header.datatype)?;
    if payload.len() < n * bpv {
        return Err(Error::MalformedHeader(format!("payload has {} bytes, expected {}", payload.len(), n * bpv)));
    }
    let payload = &payload[..n * bpv];
    let raw: Vec<f64> = match header.datatype {
        DT_UINT8 => payload.iter().map(|&v| v as f64).collect(),
        DT_INT16 => payload.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        DT_INT32 => payload.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DT_FLOAT32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DT_FLOAT64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    // slope 0 (or non-finite) means "no scaling" per the format definition
    let slope = header.scl_slope;
    let values = if slope != 0.0 && slope.is_finite() && !(slope == 1.0 && header.scl_inter == 0.0) {
        let (m, c) = (slope as f64, header.scl_inter as f64);
        raw.into_iter().map(|v| v * m + c).collect()
    } else {
        raw
    };
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    Ok(values)
}

fn companion_image_path(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    if let Some(stem) = s.strip_suffix(".hdr.gz") {
        PathBuf::from(format!("{stem}.img.gz"))
    } else if let Some(stem) = s.strip_suffix(".hdr") {
        PathBuf::from(format!("{stem}.img"))
    } else {
        path.with_extension("img")
    }
}

/// Reads any supported NIfTI-1 file into header + scaled values.
pub fn read_raw(path: impl AsRef<Path>) -> Result<RawNifti> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = parse_header(&bytes)?;
    let values = if &bytes[344..347] == b"ni1" {
        let img = read_bytes(&companion_image_path(path))?;
        decode_payload(&header, img.get(header.vox_offset..).unwrap_or(&[]))?
    } else {
        let off = header.vox_offset.max(HEADER_SIZE);
        decode_payload(&header, bytes.get(off..).unwrap_or(&[]))?
    };
    Ok(RawNifti { header, values })
}

/// Loads a 3D volume; integer-typed files whose values are valid labels come
/// back as [`NiftiVolume::Labels`].
pub fn load_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let raw = read_raw(path)?;
    let grid = raw.grid3()?;
    let as_labels = raw.is_integer_typed() && raw.values.iter().all(|&v| v >= 0.0 && v <= 255.0 && v.fract() == 0.0);
    if as_labels {
        let data = raw.values.iter().map(|&v| v as u8).collect();
        if let Ok(labels) = LabelVolume::new(grid.clone(), data) {
            return Ok(NiftiVolume::Labels(labels));
        }
    }
    let data = raw.values.iter().map(|&v| v as f32).collect();
    Ok(NiftiVolume::Image(ImageVolume::new(grid, data)?))
}

/// Loads a 3D volume as intensities regardless of on-disk datatype.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageVolume> {
    let raw = read_raw(path)?;
    let grid = raw.grid3()?;
    let data = raw.values.iter().map(|&v| v as f32).collect();
    ImageVolume::new(grid, data)
}

/// Loads an integer-typed 3D label volume.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let raw = read_raw(path)?;
    if !raw.is_integer_typed() {
        return Err(Error::UnsupportedDatatype(raw.header.datatype));
    }
    let grid = raw.grid3()?;
    let mut data = Vec::with_capacity(raw.values.len());
    for &v in &raw.values {
        if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
            return Err(Error::InvalidVolume(format!("label value {v} out of range")));
        }
        data.push(v as u8);
    }
    LabelVolume::new(grid, data)
}

/// Builds a 348-byte header for a single-file `.nii`.
pub fn build_header(
    dims: &[usize],
    grid: &Grid,
    datatype: i16,
    intent_code: i16,
    intent_name: &str,
) -> Result<[u8; HEADER_SIZE]> {
    if dims.is_empty() || dims.len() > 7 {
        return Err(Error::InvalidArgument(format!("{} dimensions", dims.len())));
    }
    let bpv = bytes_per_voxel(datatype)?;
    let mut h = [0u8; HEADER_SIZE];
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    put_i16(&mut h, 40, dims.len() as i16);
    for (n, &d) in dims.iter().enumerate() {
        let d = i16::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds NIfTI-1 limit")))?;
        put_i16(&mut h, 42 + 2 * n, d);
    }
    for n in dims.len()..7 {
        put_i16(&mut h, 42 + 2 * n, 1);
    }
    put_i16(&mut h, 68, intent_code);
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, (bpv * 8) as i16);
    put_f32(&mut h, 76, 1.0);
    for axis in 0..3 {
        put_f32(&mut h, 80 + 4 * axis, grid.spacing[axis] as f32);
    }
    for n in 4..8 {
        put_f32(&mut h, 76 + 4 * n, 1.0);
    }
    put_f32(&mut h, 108, SINGLE_FILE_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    h[123] = 2; // mm
    let descrip = b"hips";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    put_i16(&mut h, 252, 0);
    put_i16(&mut h, 254, 2); // aligned
    for (row, off) in [280usize, 296, 312].into_iter().enumerate() {
        for col in 0..4 {
            put_f32(&mut h, off + 4 * col, grid.affine[row][col] as f32);
        }
    }
    let name = intent_name.as_bytes();
    let n = name.len().min(15);
    h[328..328 + n].copy_from_slice(&name[..n]);
    h[344..348].copy_from_slice(b"n+1\0");
    Ok(h)
}

/// Writes header, 4-byte extension flag and payload; gzip when the path
/// ends in `.gz`.
pub fn write_raw(path: impl AsRef<Path>, header: &[u8; HEADER_SIZE], payload: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(SINGLE_FILE_OFFSET + payload.len());
    buf.extend_from_slice(header);
    buf.extend_from_slice(&[0u8; 4]);
    buf.extend_from_slice(payload);
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let bytes = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&buf).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        buf
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_image(vol: &ImageVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = build_header(&vol.dims(), vol.grid(), DT_FLOAT32, INTENT_NONE, "")?;
    let payload: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_raw(path, &header, &payload)
}

pub fn save_labels(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = build_header(&vol.dims(), vol.grid(), DT_UINT8, INTENT_NONE, "")?;
    write_raw(path, &header, vol.data())
}

pub fn save_nifti(vol: &NiftiVolume, path: impl AsRef<Path>) -> Result<()> {
    match vol {
        NiftiVolume::Image(v) => save_image(v, path),
        NiftiVolume::Labels(v) => save_labels(v, path),
    }
}

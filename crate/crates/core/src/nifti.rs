//! NIfTI-1 reading and writing (`.nii` and `.nii.gz`).
//!
//! Only single-file volumes with one of five scalar datatypes are supported.
//! Orientation (qform/sform) is ignored; voxels are kept in stored order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

pub const HEADER_SIZE: usize = 348;
/// Single-file magic.
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
/// Header/image pair magic.
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";
/// Data offset used by [`write_volume`]: header plus the 4-byte extension flag.
pub const DEFAULT_VOX_OFFSET: usize = 352;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("bad magic {0:?}, expected \"n+1\\0\" or \"ni1\\0\"")]
    BadMagic([u8; 4]),
    #[error("sizeof_hdr is not 348 under either byte order")]
    BadSize,
    #[error("header block must be exactly {HEADER_SIZE} bytes, got {0}")]
    ShortHeader(usize),
    #[error("unsupported rank {0}: only volumes up to 3 dimensions (after squeezing) are read")]
    UnsupportedRank(i16),
    #[error("invalid dim field {0:?}")]
    InvalidDim([i16; 8]),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("bitpix {bitpix} inconsistent with datatype {datatype}")]
    BitpixMismatch { datatype: i16, bitpix: i16 },
    #[error("truncated voxel data: need {needed} bytes after offset {offset}, found {found}")]
    TruncatedData {
        needed: usize,
        offset: usize,
        found: usize,
    },
    #[error("voxel {index} is not finite after scaling")]
    NonFiniteVoxel { index: usize },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("value {value} at voxel {index} is not exactly representable as {datatype:?}")]
    NotRepresentable {
        index: usize,
        value: f32,
        datatype: Datatype,
    },
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

/// The five voxel encodings the loader accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [
        Datatype::Uint8,
        Datatype::Int16,
        Datatype::Int32,
        Datatype::Float32,
        Datatype::Float64,
    ];

    pub fn code(self) -> i16 {
        match self {
            Datatype::Uint8 => 2,
            Datatype::Int16 => 4,
            Datatype::Int32 => 8,
            Datatype::Float32 => 16,
            Datatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        Ok(match code {
            2 => Datatype::Uint8,
            4 => Datatype::Int16,
            8 => Datatype::Int32,
            16 => Datatype::Float32,
            64 => Datatype::Float64,
            other => return Err(NiftiError::UnsupportedDatatype(other)),
        })
    }

    pub fn bitpix(self) -> i16 {
        match self {
            Datatype::Uint8 => 8,
            Datatype::Int16 => 16,
            Datatype::Int32 => 32,
            Datatype::Float32 => 32,
            Datatype::Float64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bitpix() as usize / 8
    }
}

/// Bits per voxel for every standard NIfTI-1 datatype code, supported or not.
fn standard_bitpix(code: i16) -> Option<i16> {
    Some(match code {
        1 => 1,
        2 | 256 => 8,
        4 | 512 => 16,
        8 | 16 | 768 => 32,
        32 | 64 | 1024 | 1280 => 64,
        128 => 24,
        1536 | 1792 | 2304 => 128,
        2048 => 256,
        _ => return None,
    })
}

/// Decoded NIfTI-1 header. Only the fields the pipeline uses are kept;
/// everything else is written as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub dim: [i16; 8],
    pub datatype_code: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub magic: [u8; 4],
    /// Byte order the header was stored in; voxel data shares it.
    pub endian: Endian,
}

impl NiftiHeader {
    /// Header for a single-file float32 volume with identity scaling.
    pub fn for_volume(v: &Volume, datatype: Datatype) -> Self {
        let mut dim = [1i16; 8];
        dim[0] = 3;
        for (d, &n) in dim[1..4].iter_mut().zip(&v.shape) {
            *d = n as i16;
        }
        let mut pixdim = [1.0f32; 8];
        pixdim[1..4].copy_from_slice(&v.spacing);
        Self {
            sizeof_hdr: HEADER_SIZE as i32,
            dim,
            datatype_code: datatype.code(),
            bitpix: datatype.bitpix(),
            pixdim,
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            magic: MAGIC_SINGLE,
            endian: Endian::Little,
        }
    }

    /// Spatial extents with trailing singleton dimensions squeezed away and
    /// missing axes padded with 1.
    pub fn shape(&self) -> [usize; 3] {
        let mut shape = [1usize; 3];
        for (i, s) in shape.iter_mut().enumerate() {
            if i < self.dim[0] as usize {
                *s = self.dim[i + 1] as usize;
            }
        }
        shape
    }

    pub fn spacing(&self) -> [f32; 3] {
        let mut sp = [1.0f32; 3];
        for (i, s) in sp.iter_mut().enumerate() {
            let p = self.pixdim[i + 1].abs();
            if i < self.dim[0] as usize && p > 0.0 && p.is_finite() {
                *s = p;
            }
        }
        sp
    }

    pub fn datatype(&self) -> Result<Datatype, NiftiError> {
        Datatype::from_code(self.datatype_code)
    }

    /// Encodes the header as a 348-byte block in the requested byte order.
    pub fn to_bytes(&self, endian: Endian) -> [u8; HEADER_SIZE] {
        match endian {
            Endian::Little => self.encode::<LittleEndian>(),
            Endian::Big => self.encode::<BigEndian>(),
        }
    }

    fn encode<B: ByteOrder>(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        B::write_i32(&mut b[0..4], self.sizeof_hdr);
        b[38] = b'r';
        for (i, &d) in self.dim.iter().enumerate() {
            B::write_i16(&mut b[40 + 2 * i..], d);
        }
        B::write_i16(&mut b[70..], self.datatype_code);
        B::write_i16(&mut b[72..], self.bitpix);
        for (i, &p) in self.pixdim.iter().enumerate() {
            B::write_f32(&mut b[76 + 4 * i..], p);
        }
        B::write_f32(&mut b[108..], self.vox_offset);
        B::write_f32(&mut b[112..], self.scl_slope);
        B::write_f32(&mut b[116..], self.scl_inter);
        b[344..348].copy_from_slice(&self.magic);
        b
    }

    fn decode<B: ByteOrder>(b: &[u8], endian: Endian) -> Self {
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = B::read_i16(&b[40 + 2 * i..]);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = B::read_f32(&b[76 + 4 * i..]);
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&b[344..348]);
        Self {
            sizeof_hdr: B::read_i32(&b[0..4]),
            dim,
            datatype_code: B::read_i16(&b[70..]),
            bitpix: B::read_i16(&b[72..]),
            pixdim,
            vox_offset: B::read_f32(&b[108..]),
            scl_slope: B::read_f32(&b[112..]),
            scl_inter: B::read_f32(&b[116..]),
            magic,
            endian,
        }
    }
}

/// Decodes a 348-byte NIfTI-1 header, detecting byte order from `sizeof_hdr`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if bytes.len() != HEADER_SIZE {
        return Err(NiftiError::ShortHeader(bytes.len()));
    }
    let mut hdr = if LittleEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        NiftiHeader::decode::<LittleEndian>(bytes, Endian::Little)
    } else if BigEndian::read_i32(&bytes[0..4]) == HEADER_SIZE as i32 {
        NiftiHeader::decode::<BigEndian>(bytes, Endian::Big)
    } else {
        return Err(NiftiError::BadSize);
    };
    if hdr.magic != MAGIC_SINGLE && hdr.magic != MAGIC_PAIR {
        return Err(NiftiError::BadMagic(hdr.magic));
    }
    let rank = hdr.dim[0];
    if !(1..=7).contains(&rank) || hdr.dim[1..=rank as usize].iter().any(|&d| d < 1) {
        return Err(NiftiError::InvalidDim(hdr.dim));
    }
    let mut squeezed = rank;
    while squeezed > 3 && hdr.dim[squeezed as usize] == 1 {
        squeezed -= 1;
    }
    if squeezed > 3 {
        return Err(NiftiError::UnsupportedRank(rank));
    }
    hdr.dim[0] = squeezed;
    if let Some(bits) = standard_bitpix(hdr.datatype_code) {
        if bits != hdr.bitpix {
            return Err(NiftiError::BitpixMismatch {
                datatype: hdr.datatype_code,
                bitpix: hdr.bitpix,
            });
        }
    }
    Ok(hdr)
}

/// A 3D scalar grid. `data` is X-fastest: voxel `(x, y, z)` lives at
/// `x + X * (y + Y * z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub shape: [usize; 3],
    pub spacing: [f32; 3],
    pub data: Vec<f32>,
    pub source_id: String,
}

impl Volume {
    pub fn new(
        shape: [usize; 3],
        spacing: [f32; 3],
        data: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self, NiftiError> {
        let v = Self {
            shape,
            spacing,
            data,
            source_id: source_id.into(),
        };
        v.validate()?;
        Ok(v)
    }

    pub fn filled(shape: [usize; 3], value: f32) -> Self {
        Self {
            shape,
            spacing: [1.0; 3],
            data: vec![value; shape.iter().product()],
            source_id: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), NiftiError> {
        let n: usize = self.shape.iter().product();
        if n == 0 || self.data.len() != n {
            return Err(NiftiError::InvalidVolume(format!(
                "shape {:?} vs {} voxels",
                self.shape,
                self.data.len()
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(NiftiError::InvalidVolume(format!(
                "spacing {:?} must be positive",
                self.spacing
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(NiftiError::NonFiniteVoxel { index });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn maybe_gunzip(raw: Vec<u8>) -> io::Result<Vec<u8>> {
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::with_capacity(raw.len() * 4);
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads and decodes just the header of a `.nii` / `.nii.gz` file.
pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader, NiftiError> {
    let bytes = maybe_gunzip(fs::read(path)?)?;
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::ShortHeader(bytes.len()));
    }
    parse_header(&bytes[..HEADER_SIZE])
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, NiftiError> {
    let path = path.as_ref();
    let bytes = maybe_gunzip(fs::read(path)?)?;
    decode_volume(&bytes, path.display().to_string())
}

/// Decodes an in-memory (already decompressed) single-file NIfTI-1 image.
pub fn decode_volume(bytes: &[u8], source_id: impl Into<String>) -> Result<Volume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::ShortHeader(bytes.len()));
    }
    let hdr = parse_header(&bytes[..HEADER_SIZE])?;
    let datatype = hdr.datatype()?;
    let shape = hdr.shape();
    let count: usize = shape.iter().product();
    let offset = (hdr.vox_offset.max(0.0) as usize).max(HEADER_SIZE);
    let needed = count * datatype.bytes();
    let found = bytes.len().saturating_sub(offset);
    if found < needed {
        return Err(NiftiError::TruncatedData {
            needed,
            offset,
            found,
        });
    }
    let payload = &bytes[offset..offset + needed];
    let mut data = match hdr.endian {
        Endian::Little => decode_payload::<LittleEndian>(payload, datatype),
        Endian::Big => decode_payload::<BigEndian>(payload, datatype),
    };
    if hdr.scl_slope != 0.0 && hdr.scl_slope.is_finite() {
        let (slope, inter) = (hdr.scl_slope, hdr.scl_inter);
        if slope != 1.0 || inter != 0.0 {
            for v in &mut data {
                *v = *v * slope + inter;
            }
        }
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(NiftiError::NonFiniteVoxel { index });
    }
    Ok(Volume {
        shape,
        spacing: hdr.spacing(),
        data,
        source_id: source_id.into(),
    })
}

fn decode_payload<B: ByteOrder>(p: &[u8], dt: Datatype) -> Vec<f32> {
    match dt {
        Datatype::Uint8 => p.iter().map(|&b| b as f32).collect(),
        Datatype::Int16 => p.chunks_exact(2).map(|c| B::read_i16(c) as f32).collect(),
        Datatype::Int32 => p.chunks_exact(4).map(|c| B::read_i32(c) as f32).collect(),
        Datatype::Float32 => p.chunks_exact(4).map(B::read_f32).collect(),
        Datatype::Float64 => p.chunks_exact(8).map(|c| B::read_f64(c) as f32).collect(),
    }
}

/// Writes `v` as a single-file float32 NIfTI-1 image; gzip when the path
/// ends in `.gz`.
pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<(), NiftiError> {
    write_volume_as(path, v, Datatype::Float32)
}

/// Like [`write_volume`] but stores voxels with the given datatype. Values
/// that the datatype cannot hold exactly are rejected rather than rounded.
pub fn write_volume_as(
    path: impl AsRef<Path>,
    v: &Volume,
    datatype: Datatype,
) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let bytes = encode_volume(v, datatype, Endian::Little)?;
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

/// Serializes a volume into an uncompressed single-file NIfTI-1 image.
pub fn encode_volume(v: &Volume, datatype: Datatype, endian: Endian) -> Result<Vec<u8>, NiftiError> {
    v.validate()?;
    if v.shape.iter().any(|&n| n > i16::MAX as usize) {
        return Err(NiftiError::InvalidVolume(format!(
            "extent {:?} does not fit the header",
            v.shape
        )));
    }
    for (index, &value) in v.data.iter().enumerate() {
        if !representable(value, datatype) {
            return Err(NiftiError::NotRepresentable {
                index,
                value,
                datatype,
            });
        }
    }
    let mut hdr = NiftiHeader::for_volume(v, datatype);
    hdr.endian = endian;
    let mut out = Vec::with_capacity(DEFAULT_VOX_OFFSET + v.len() * datatype.bytes());
    out.extend_from_slice(&hdr.to_bytes(endian));
    out.extend_from_slice(&[0u8; DEFAULT_VOX_OFFSET - HEADER_SIZE]);
    match endian {
        Endian::Little => encode_payload::<LittleEndian>(&mut out, &v.data, datatype),
        Endian::Big => encode_payload::<BigEndian>(&mut out, &v.data, datatype),
    }
    Ok(out)
}

fn representable(v: f32, dt: Datatype) -> bool {
    match dt {
        Datatype::Uint8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
        Datatype::Int16 => v.fract() == 0.0 && (i16::MIN as f32..=i16::MAX as f32).contains(&v),
        Datatype::Int32 => {
            v.fract() == 0.0 && v >= i32::MIN as f32 && v < 2147483648.0
        }
        Datatype::Float32 | Datatype::Float64 => true,
    }
}

fn encode_payload<B: ByteOrder>(out: &mut Vec<u8>, data: &[f32], dt: Datatype) {
    let mut buf = [0u8; 8];
    for &v in data {
        let n = dt.bytes();
        match dt {
            Datatype::Uint8 => buf[0] = v as u8,
            Datatype::Int16 => B::write_i16(&mut buf, v as i16),
            Datatype::Int32 => B::write_i32(&mut buf, v as i32),
            Datatype::Float32 => B::write_f32(&mut buf, v),
            Datatype::Float64 => B::write_f64(&mut buf, v as f64),
        }
        out.extend_from_slice(&buf[..n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn sample_header() -> NiftiHeader {
        let v = Volume::filled([128, 128, 64], 0.0);
        let mut h = NiftiHeader::for_volume(&v, Datatype::Int16);
        h.pixdim[1..4].copy_from_slice(&[1.5, 1.25, 2.0]);
        h.scl_slope = 2.0;
        h.scl_inter = -3.5;
        h
    }

    #[test]
    fn parses_full_size_header() {
        let h = sample_header();
        let parsed = parse_header(&h.to_bytes(Endian::Little)).unwrap();
        assert_eq!(parsed.shape(), [128, 128, 64]);
        assert_eq!(parsed, h);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut b = sample_header().to_bytes(Endian::Little);
        b[344..348].copy_from_slice(b"xxxx");
        assert!(matches!(parse_header(&b), Err(NiftiError::BadMagic(m)) if &m == b"xxxx"));
    }

    #[test]
    fn rejects_bad_size() {
        let mut b = sample_header().to_bytes(Endian::Little);
        LittleEndian::write_i32(&mut b[0..4], 540);
        assert!(matches!(parse_header(&b), Err(NiftiError::BadSize)));
        assert!(matches!(parse_header(&b[..100]), Err(NiftiError::ShortHeader(100))));
    }

    #[test]
    fn byte_swapped_header_decodes_identically() {
        let h = sample_header();
        let le = parse_header(&h.to_bytes(Endian::Little)).unwrap();
        let be = parse_header(&h.to_bytes(Endian::Big)).unwrap();
        assert_eq!(be.endian, Endian::Big);
        assert_eq!(NiftiHeader { endian: Endian::Little, ..be }, le);
    }

    #[test]
    fn squeezes_trailing_singletons() {
        let mut h = sample_header();
        h.dim = [4, 10, 11, 12, 1, 1, 1, 1];
        let p = parse_header(&h.to_bytes(Endian::Little)).unwrap();
        assert_eq!(p.dim[0], 3);
        assert_eq!(p.shape(), [10, 11, 12]);

        h.dim = [4, 10, 11, 12, 5, 1, 1, 1];
        assert!(matches!(
            parse_header(&h.to_bytes(Endian::Little)),
            Err(NiftiError::UnsupportedRank(4))
        ));
        h.dim = [3, 10, 0, 12, 1, 1, 1, 1];
        assert!(matches!(
            parse_header(&h.to_bytes(Endian::Little)),
            Err(NiftiError::InvalidDim(_))
        ));
    }

    #[test]
    fn bitpix_must_match_datatype() {
        let mut h = sample_header();
        h.datatype_code = 16;
        h.bitpix = 16;
        assert!(matches!(
            parse_header(&h.to_bytes(Endian::Little)),
            Err(NiftiError::BitpixMismatch { .. })
        ));
    }

    fn write_raw(path: &Path, hdr: &NiftiHeader, payload: &[u8]) {
        let mut bytes = hdr.to_bytes(Endian::Little).to_vec();
        bytes.extend_from_slice(&[0; 4]);
        bytes.extend_from_slice(payload);
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn int16_identity_scaling() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.nii");
        let v = Volume::filled([2, 2, 1], 0.0);
        let hdr = NiftiHeader::for_volume(&v, Datatype::Int16);
        let raw: [i16; 4] = [-7, 0, 300, 32767];
        let mut payload = vec![0u8; 8];
        LittleEndian::write_i16_into(&raw, &mut payload);
        write_raw(&p, &hdr, &payload);
        let got = read_volume(&p).unwrap();
        assert_eq!(got.data, vec![-7.0, 0.0, 300.0, 32767.0]);
    }

    #[test]
    fn applies_scl_fields() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.nii");
        let v = Volume::filled([1, 1, 1], 0.0);
        let mut hdr = NiftiHeader::for_volume(&v, Datatype::Float32);
        hdr.scl_slope = 2.0;
        hdr.scl_inter = -1.0;
        write_raw(&p, &hdr, &0.5f32.to_le_bytes());
        assert_eq!(read_volume(&p).unwrap().data, vec![0.0]);

        hdr.scl_slope = 0.0;
        hdr.scl_inter = 9.0;
        write_raw(&p, &hdr, &0.5f32.to_le_bytes());
        assert_eq!(read_volume(&p).unwrap().data, vec![0.5]);
    }

    #[test]
    fn unsupported_datatype_and_truncation() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.nii");
        let v = Volume::filled([2, 2, 2], 0.0);
        let mut hdr = NiftiHeader::for_volume(&v, Datatype::Float32);
        hdr.datatype_code = 512; // uint16
        hdr.bitpix = 16;
        write_raw(&p, &hdr, &[0u8; 16]);
        assert!(matches!(read_volume(&p), Err(NiftiError::UnsupportedDatatype(512))));

        let hdr = NiftiHeader::for_volume(&v, Datatype::Float32);
        write_raw(&p, &hdr, &[0u8; 31]);
        assert!(matches!(
            read_volume(&p),
            Err(NiftiError::TruncatedData { needed: 32, found: 31, .. })
        ));
    }

    #[test]
    fn zero_volume_file_size() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("z.nii");
        write_volume(&p, &Volume::filled([2, 2, 2], 0.0)).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 352 + 32);
    }

    #[test]
    fn gz_output_and_transparency() {
        let dir = tempdir().unwrap();
        let v = Volume::new([3, 2, 2], [1.0, 2.0, 0.5], (0..12).map(|i| i as f32).collect(), "x")
            .unwrap();
        let plain = dir.path().join("x.nii");
        let gz = dir.path().join("x.nii.gz");
        write_volume(&plain, &v).unwrap();
        write_volume(&gz, &v).unwrap();
        assert_eq!(&fs::read(&gz).unwrap()[..2], &GZIP_MAGIC);
        let a = read_volume(&plain).unwrap();
        let b = read_volume(&gz).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.shape, b.shape);
        assert_eq!(a.spacing, b.spacing);
        assert_eq!(read_header(&gz).unwrap(), read_header(&plain).unwrap());
    }

    #[test]
    fn big_endian_payload_reads_back() {
        let v = Volume::new([2, 1, 2], [1.0; 3], vec![1.0, -2.0, 300.0, 7.0], "be").unwrap();
        for dt in Datatype::ALL {
            if dt == Datatype::Uint8 {
                continue;
            }
            let bytes = encode_volume(&v, dt, Endian::Big).unwrap();
            let got = decode_volume(&bytes, "be").unwrap();
            assert_eq!(got.data, v.data, "{dt:?}");
        }
    }

    #[test]
    fn write_rejects_unrepresentable() {
        let v = Volume::new([2, 1, 1], [1.0; 3], vec![0.5, 1.0], "").unwrap();
        assert!(matches!(
            encode_volume(&v, Datatype::Int16, Endian::Little),
            Err(NiftiError::NotRepresentable { index: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn float_round_trip_is_bit_exact(
            dims in (1usize..5, 1usize..5, 1usize..5),
            spacing in (0.1f32..4.0, 0.1f32..4.0, 0.1f32..4.0),
            seed in any::<u64>(),
            gz in any::<bool>(),
        ) {
            let shape = [dims.0, dims.1, dims.2];
            let n = shape.iter().product::<usize>();
            let mut s = seed;
            let data: Vec<f32> = (0..n).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits(((s >> 33) as u32 & 0x3fff_ffff) | 0x3000_0000) * if s & 1 == 0 { 1.0 } else { -1.0 }
            }).collect();
            let v = Volume::new(shape, [spacing.0, spacing.1, spacing.2], data, "p").unwrap();
            let dir = tempdir().unwrap();
            let p = dir.path().join(if gz { "v.nii.gz" } else { "v.nii" });
            write_volume(&p, &v).unwrap();
            let back = read_volume(&p).unwrap();
            prop_assert_eq!(back.shape, v.shape);
            prop_assert_eq!(back.spacing, v.spacing);
            prop_assert_eq!(
                back.data.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
                v.data.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

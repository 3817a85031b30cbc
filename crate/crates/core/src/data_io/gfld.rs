//! GFLD: a 16-byte magic/version preamble, five little-endian `u32` header
//! words `d, n0, n1, n2, channels` (unused axes are 1), then `f64` samples in
//! row-major node order with channels interleaved per node.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{ChannelField, Grid, ScalarField, VectorField};

use super::atomic_write;

pub const MAGIC: &[u8; 12] = b"GFLDgeoflow\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16 + 5 * 4;

pub fn encode(f: &ChannelField) -> Vec<u8> {
    let grid = f.grid();
    let n = grid.len();
    let c = f.channels();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.ndim() as u32).to_le_bytes());
    for d in grid.dims3() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(c as u32).to_le_bytes());
    for i in 0..n {
        for ch in 0..c {
            out.extend_from_slice(&f.channel(ch)[i].to_le_bytes());
        }
    }
    out
}

fn word(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<ChannelField> {
    if bytes.len() < 16 || &bytes[..12] != MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    let version = word(bytes, 12);
    if version != VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: VERSION });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let ndim = word(bytes, 16) as usize;
    let dims3 = [word(bytes, 20) as usize, word(bytes, 24) as usize, word(bytes, 28) as usize];
    let channels = word(bytes, 32) as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::DimOverflow(format!("dimensionality {ndim}")));
    }
    if dims3[ndim..].iter().any(|&d| d != 1) {
        return Err(Error::DimOverflow(format!("unused axes of {dims3:?} must be 1")));
    }
    let payload = dims3
        .iter()
        .try_fold(channels, |acc, &d| acc.checked_mul(d))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::DimOverflow(format!("{dims3:?} x {channels} channels")))?;
    if channels == 0 {
        return Err(Error::DimOverflow("zero channels".into()));
    }
    if bytes.len() < payload {
        return Err(Error::Truncated { expected: payload, found: bytes.len() });
    }
    let grid = Grid::new(&dims3[..ndim])?;
    let n = grid.len();
    let mut data = vec![0.0; n * channels];
    for (k, chunk) in bytes[HEADER_LEN..payload].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        data[(k % channels) * n + k / channels] = v;
    }
    ChannelField::new(grid, channels, data)
}

pub fn write_field(path: &Path, f: &ChannelField) -> Result<()> {
    atomic_write(path, &encode(f))
}

pub fn write_scalar(path: &Path, f: &ScalarField) -> Result<()> {
    write_field(path, &ChannelField::from(f.clone()))
}

pub fn write_vector(path: &Path, v: &VectorField) -> Result<()> {
    write_field(path, &ChannelField::from(v.clone()))
}

pub fn read_field(path: &Path) -> Result<ChannelField> {
    decode(&fs::read(path)?, path)
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let f = read_field(path)?;
    if f.channels() != 1 {
        return Err(Error::Shape(format!(
            "{}: {} channels, expected a scalar field",
            path.display(),
            f.channels()
        )));
    }
    let grid = *f.grid();
    ScalarField::new(grid, f.into_data())
}

pub fn read_vector(path: &Path) -> Result<VectorField> {
    VectorField::try_from(read_field(path)?)
}

//! Binary dataset pack.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      8 bytes  "STRMPK1\0"
//! version    u32      currently 1
//! grid       lat0, lon0, dlat, dlon as f64; height, width as u32
//! seed       u64
//! count      u32
//! per sample:
//!   timestamp   i64 unix seconds
//!   label_cell  u32 flat index
//!   true_cell   u32 flat index, 0xFFFFFFFF when unknown
//!   corrupted   u8
//!   split       u8 (0 train, 1 val, 2 test)
//!   u, v        f32[height*width] each, row-major
//! crc32      u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::crc::crc32;
use crate::error::{PackError, Result};
use crate::grid::{CellIndex, GridSpec};
use crate::synth::{Dataset, Sample, Split, WindField};

pub const PACK_MAGIC: [u8; 8] = *b"STRMPK1\0";
pub const PACK_VERSION: u32 = 1;
const NO_TRUTH: u32 = u32::MAX;
const HEADER_LEN: usize = 8 + 4 + 4 * 8 + 2 * 4 + 8 + 4;

pub fn encode_pack(d: &Dataset) -> Vec<u8> {
    let cells = d.grid.cells();
    let mut out = Vec::with_capacity(HEADER_LEN + d.len() * (18 + 8 * cells) + 4);
    out.extend_from_slice(&PACK_MAGIC);
    out.extend_from_slice(&PACK_VERSION.to_le_bytes());
    put_grid(&mut out, &d.grid);
    out.extend_from_slice(&d.seed.to_le_bytes());
    out.extend_from_slice(&(d.len() as u32).to_le_bytes());
    for (s, split) in d.samples.iter().zip(&d.splits) {
        out.extend_from_slice(&s.field.timestamp.timestamp().to_le_bytes());
        out.extend_from_slice(&(s.label_cell.flat as u32).to_le_bytes());
        let truth = s.true_cell.map_or(NO_TRUTH, |c| c.flat as u32);
        out.extend_from_slice(&truth.to_le_bytes());
        out.push(u8::from(s.corrupted));
        out.push(split.code());
        for x in s.field.u.iter().chain(&s.field.v) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn put_grid(out: &mut Vec<u8>, g: &GridSpec) {
    for x in [g.lat0, g.lon0, g.dlat, g.dlon] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(g.height as u32).to_le_bytes());
    out.extend_from_slice(&(g.width as u32).to_le_bytes());
}

/// Checks magic, version, exact length and the trailing checksum, returning
/// the body between the version word and the checksum.
pub(crate) fn verify_envelope<'a>(
    bytes: &'a [u8],
    magic: [u8; 8],
    version: u32,
    expected_len: impl FnOnce(&[u8]) -> std::result::Result<usize, PackError>,
) -> std::result::Result<&'a [u8], PackError> {
    let head = &bytes[..bytes.len().min(8)];
    if head != &magic[..head.len()] {
        return Err(PackError::BadMagic { expected: magic, found: head.to_vec() });
    }
    if bytes.len() < 12 {
        return Err(PackError::Truncated { needed: 12, actual: bytes.len() });
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(PackError::VersionMismatch { expected: version, found });
    }
    let needed = expected_len(bytes)?;
    if bytes.len() < needed {
        return Err(PackError::Truncated { needed, actual: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(PackError::Malformed(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let (body, tail) = bytes.split_at(needed - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(PackError::Checksum { stored, computed });
    }
    Ok(&body[12..])
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], PackError> {
        let end = self.pos + n;
        let s = self.bytes.get(self.pos..end).ok_or(PackError::Truncated { needed: end, actual: self.bytes.len() })?;
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, PackError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, PackError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, PackError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn i64(&mut self) -> std::result::Result<i64, PackError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> std::result::Result<f64, PackError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, PackError> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    pub(crate) fn grid(&mut self) -> std::result::Result<GridSpec, PackError> {
        let (lat0, lon0, dlat, dlon) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        let (height, width) = (self.u32()? as usize, self.u32()? as usize);
        GridSpec::new(lat0, lon0, dlat, dlon, height, width).map_err(|e| PackError::Malformed(e.to_string()))
    }
}

pub fn decode_pack(bytes: &[u8]) -> Result<Dataset> {
    let body = verify_envelope(bytes, PACK_MAGIC, PACK_VERSION, |b| {
        if b.len() < HEADER_LEN {
            return Err(PackError::Truncated { needed: HEADER_LEN, actual: b.len() });
        }
        let mut c = Cursor::new(&b[12..HEADER_LEN]);
        c.take(32)?;
        let cells = c.u32()? as usize * c.u32()? as usize;
        c.u64()?;
        let count = c.u32()? as usize;
        Ok(HEADER_LEN + count * (18 + 8 * cells) + 4)
    })?;
    let mut c = Cursor::new(body);
    let grid = c.grid()?;
    let seed = c.u64()?;
    let count = c.u32()? as usize;
    let cells = grid.cells();
    let mut samples = Vec::with_capacity(count);
    let mut splits = Vec::with_capacity(count);
    let cell = |flat: u32| {
        CellIndex::from_flat(flat as usize, &grid).map_err(|e| PackError::Malformed(e.to_string()))
    };
    for i in 0..count {
        let ts = c.i64()?;
        let timestamp = DateTime::<Utc>::from_timestamp(ts, 0)
            .ok_or_else(|| PackError::Malformed(format!("sample {i}: timestamp {ts} out of range")))?;
        let label_cell = cell(c.u32()?)?;
        let true_cell = match c.u32()? {
            NO_TRUTH => None,
            flat => Some(cell(flat)?),
        };
        let corrupted = match c.u8()? {
            0 => false,
            1 => true,
            other => return Err(PackError::Malformed(format!("sample {i}: corrupted flag {other}")).into()),
        };
        let split = c.u8()?;
        let split = Split::from_code(split).ok_or_else(|| PackError::Malformed(format!("sample {i}: split code {split}")))?;
        let u = c.f32s(cells)?;
        let v = c.f32s(cells)?;
        let field = WindField::new(grid, timestamp, u, v)?;
        samples.push(Sample { field, label_cell, true_cell, corrupted });
        splits.push(split);
    }
    Ok(Dataset { grid, seed, samples, splits })
}

/// Writes through a sibling temporary file so readers never see a partial pack.
pub fn write_pack(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pack(d))
}

pub fn read_pack(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_pack(&fs::read(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

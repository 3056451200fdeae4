//! On-disk feature cache: one file per clip.
//!
//! Layout (little-endian): magic `CSFC`, u32 format version, u32 id byte
//! length, UTF-8 clip id, u64 frame count, u32 width (189), then
//! `T * width` f64 values row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FeatureError, FeatureMatrix, FEATURE_DIM};

pub const CACHE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CSFC";

pub fn write_feature_cache(path: &Path, m: &FeatureMatrix) -> Result<(), FeatureError> {
    let id = m.clip_id.as_bytes();
    let mut buf = Vec::with_capacity(24 + id.len() + m.data().len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CACHE_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&(m.n_frames() as u64).to_le_bytes());
    buf.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FeatureError> {
        if self.pos + n > self.buf.len() {
            return Err(FeatureError::Corrupt("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FeatureError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMatrix, FeatureError> {
    let bytes = fs::read(path)?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(FeatureError::Corrupt("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CACHE_FORMAT_VERSION {
        return Err(FeatureError::VersionMismatch {
            expected: CACHE_FORMAT_VERSION,
            found: version,
        });
    }
    let id_len = c.u32()? as usize;
    let id = std::str::from_utf8(c.take(id_len)?)
        .map_err(|_| FeatureError::Corrupt("clip id is not UTF-8".into()))?
        .to_string();
    let frames = c.u64()? as usize;
    let width = c.u32()? as usize;
    if width != FEATURE_DIM {
        return Err(FeatureError::WidthMismatch {
            expected: FEATURE_DIM,
            found: width,
        });
    }
    let n = frames
        .checked_mul(width)
        .ok_or_else(|| FeatureError::Corrupt("frame count overflow".into()))?;
    let body = c.take(n.checked_mul(8).ok_or_else(|| FeatureError::Corrupt("size overflow".into()))?)?;
    if c.pos != bytes.len() {
        return Err(FeatureError::Corrupt("trailing bytes".into()));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMatrix::new(id, data)
}

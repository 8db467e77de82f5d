//! BTRJ trajectory file format.
//!
//! Layout, all integers little-endian:
//!   magic "BTRJ"
//!   u32 version (= 1)
//!   u32 T, u32 H, u32 W, u32 C
//!   u32 C_valid
//!   f64 dt, f64 dx
//!   u32 name-table byte length, then channel names UTF-8, NUL-separated
//!   T*H*W*C f32 values in [T][H][W][C] order
//!
//! The family tag and source seed live in the dataset manifest, not here.

use super::{DataError, Trajectory};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BTRJ";
const VERSION: u32 = 1;

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(40 + traj.frames().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [traj.t_total, traj.height, traj.width, traj.channels, traj.valid_channels] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&traj.dt.to_le_bytes());
    buf.extend_from_slice(&traj.dx.to_le_bytes());
    let names = traj.channel_names.join("\0");
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    buf.extend_from_slice(names.as_bytes());
    for v in traj.frames() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let io_err = |source| DataError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&buf).map_err(io_err)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let p = path.display().to_string();
    let fail = |reason: String| DataError::Format { path: p.clone(), reason };

    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(4).ok_or_else(|| fail("truncated header".into()))?;
    if magic != MAGIC {
        return Err(fail(format!("bad magic {:?}", &magic[..4])));
    }
    let version = cur.u32().ok_or_else(|| fail("truncated header".into()))?;
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = cur.u32().ok_or_else(|| fail("truncated header".into()))? as usize;
    }
    let [t, h, w, c, c_valid] = dims;
    if c_valid > c {
        return Err(fail(format!("C_valid {c_valid} > C {c}")));
    }
    let dt = cur.f64().ok_or_else(|| fail("truncated header".into()))?;
    let dx = cur.f64().ok_or_else(|| fail("truncated header".into()))?;
    let name_len = cur.u32().ok_or_else(|| fail("truncated header".into()))? as usize;
    let name_bytes = cur.take(name_len).ok_or_else(|| fail("truncated name table".into()))?;
    let names_str = std::str::from_utf8(name_bytes)
        .map_err(|_| fail("name table is not UTF-8".into()))?;
    let channel_names: Vec<String> = if name_len == 0 {
        Vec::new()
    } else {
        names_str.split('\0').map(str::to_string).collect()
    };
    if channel_names.len() != c {
        return Err(fail(format!("{} channel names for {} channels", channel_names.len(), c)));
    }

    let payload = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| fail("dimension overflow".into()))?;
    let raw = cur
        .take(payload * 4)
        .ok_or_else(|| fail(format!("truncated payload: want {} bytes", payload * 4)))?;
    if cur.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let frames: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    Trajectory::new(frames, t, h, w, c, c_valid, dt, dx, channel_names)
        .map_err(|e| fail(e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return None;
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }
}

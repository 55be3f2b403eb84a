//! Field snapshots, pressure frames and the resting-noise calibration file.
//!
//! Snapshot layout, all integers little-endian:
//!
//! ```text
//! magic   b"SSFIELD\0"
//! version u32 = 1
//! count   u32                      number of fields
//! per field:
//!   name  u32 length + UTF-8 bytes
//!   dtype u8 = 1                   f64
//!   ndim  u32, dims u64 * ndim     row-major shape
//!   data  f64 * prod(dims)
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SSFIELD\0";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn write_fields(path: &Path, fields: &[(&str, &Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for (name, t) in fields {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F64);
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated field file"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_fields(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { path, bytes: &bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::format(path, "not a field file"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name =
            String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(path, "field name is not UTF-8"))?;
        if r.take(1)?[0] != DTYPE_F64 {
            return Err(Error::format(path, format!("field {name}: unknown dtype")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n =
            n.filter(|&n| n <= (bytes.len() - r.at) / 8).ok_or_else(|| Error::format(path, "truncated field file"))?;
        let data = r.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data)));
    }
    if r.at != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last field"));
    }
    Ok(out)
}

/// CSV fallback: one row per element with `field,row,col,value`; 1-D fields use row 0.
pub fn write_fields_csv(path: &Path, fields: &[(&str, &Tensor)]) -> Result<()> {
    let mut s = String::from("field,row,col,value\n");
    for (name, t) in fields {
        let cols = *t.shape().last().unwrap_or(&1);
        for (k, x) in t.data().iter().enumerate() {
            let _ = writeln!(s, "{name},{},{},{x}", k / cols.max(1), k % cols.max(1));
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Blue-white-red map of `v` in `[-1, 1]`.
fn diverging(v: f64) -> [f64; 3] {
    let v = v.clamp(-1.0, 1.0);
    if v < 0.0 {
        let t = -v;
        [1.0 - 0.8 * t, 1.0 - 0.7 * t, 1.0 - 0.25 * t]
    } else {
        [1.0 - 0.25 * v, 1.0 - 0.8 * v, 1.0 - 0.8 * v]
    }
}

/// Renders a centered field `[ny, nx]` with a symmetric color range, row 0 at the bottom.
/// Where `mask` is set the pixel is blended toward dark gray by the mask value.
pub fn write_pressure_png(path: &Path, p: &Tensor, mask: Option<&Tensor>) -> Result<()> {
    let &[ny, nx] = p.shape() else {
        return Err(Error::Shape(format!("pressure frame needs a 2-D field, got {:?}", p.shape())));
    };
    if let Some(m) = mask {
        if m.shape() != p.shape() {
            return Err(Error::Shape(format!("mask shape {:?} differs from field shape {:?}", m.shape(), p.shape())));
        }
    }
    let range = p.max_abs().max(f64::MIN_POSITIVE);
    let mut img = RgbImage::new(nx as u32, ny as u32);
    for i in 0..ny {
        for j in 0..nx {
            let k = i * nx + j;
            let mut c = diverging(p.data()[k] / range);
            if let Some(m) = mask {
                let b = m.data()[k].clamp(0.0, 1.0);
                c = c.map(|x| (1.0 - b) * x + b * 0.25);
            }
            let px = c.map(|x| (255.0 * x).round() as u8);
            img.put_pixel(j as u32, (ny - 1 - i) as u32, Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Largest surface force seen with the body held still, stored beside the weights file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// Max |f_total| in N/m over the calibration run.
    pub resting_force: f64,
    pub steps: usize,
    pub config_hash: String,
}

pub fn noise_path(weights: &Path) -> PathBuf {
    let mut name = weights.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".noise.json");
    weights.with_file_name(name)
}

impl NoiseCalibration {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("calibration serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NoiseCalibration> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

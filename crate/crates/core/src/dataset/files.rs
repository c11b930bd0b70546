//! Pattern and object files: binary PGM previews and raw `f64` grids.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Real;

/// Sidecar written next to a raw grid as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub rows: usize,
    pub cols: usize,
    pub config_hash: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

/// Little-endian `f64`, row-major, no header.
pub fn encode_f64<T: Real>(img: &Image<T>) -> Vec<u8> {
    img.as_slice()
        .iter()
        .flat_map(|v| v.to_f64_lossy().to_le_bytes())
        .collect()
}

pub fn write_f64_raw<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_f64(img)).map_err(|e| Error::io(path, e))
}

pub fn read_f64_raw(path: &Path, rows: usize, cols: usize) -> Result<Image<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * rows * cols {
        return Err(Error::Truncated {
            expected: 8 * rows * cols,
            found: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Image::from_vec(rows, cols, data)
}

/// Raw grid plus its JSON sidecar.
pub fn write_f64_with_sidecar<T: Real>(
    img: &Image<T>,
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    write_f64_raw(img, path)?;
    let meta = RawSidecar {
        rows: img.rows(),
        cols: img.cols(),
        config_hash: config_hash.to_owned(),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&side, e))
}

pub fn read_f64_with_sidecar(path: &Path) -> Result<(Image<f64>, RawSidecar)> {
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: RawSidecar = serde_json::from_slice(&text)?;
    Ok((read_f64_raw(path, meta.rows, meta.cols)?, meta))
}

fn quantize<T: Real>(img: &Image<T>, maxval: f64) -> impl Iterator<Item = u16> + '_ {
    let peak = img.max().to_f64_lossy();
    img.as_slice().iter().map(move |v| {
        let x = if peak > 0.0 {
            v.to_f64_lossy() / peak
        } else {
            0.0
        };
        (x.clamp(0.0, 1.0) * maxval).round() as u16
    })
}

/// Max-normalized 16-bit binary PGM (P5, big-endian samples).
pub fn encode_pgm16<T: Real>(img: &Image<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.cols(), img.rows()).into_bytes();
    for v in quantize(img, 65535.0) {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Max-normalized 8-bit binary PGM.
pub fn encode_pgm8<T: Real>(img: &Image<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
    out.extend(quantize(img, 255.0).map(|v| v as u8));
    out
}

pub fn write_pgm16<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm16(img)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm8<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm8(img)).map_err(|e| Error::io(path, e))
}

//! IDX image files (the MNIST container format).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// 8-bit grayscale images, row-major, stored back to back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImageSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImageSet {
    pub fn new(count: usize, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        let expected = count
            .checked_mul(rows)
            .and_then(|n| n.checked_mul(cols))
            .ok_or_else(|| Error::DimensionOverflow(format!("{count}x{rows}x{cols}")))?;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} pixels"),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Self {
            count,
            rows,
            cols,
            pixels,
        })
    }

    pub fn image(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }

    /// First `n` images (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.count);
        Self {
            count: n,
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..n * self.rows * self.cols].to_vec(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                expected: 16,
                found: bytes.len(),
            });
        }
        let word =
            |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let magic = word(0);
        if magic != IDX_IMAGE_MAGIC {
            return Err(Error::BadMagic {
                found: magic,
                expected: IDX_IMAGE_MAGIC,
            });
        }
        let (count, rows, cols) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let payload = count
            .checked_mul(rows)
            .and_then(|n| n.checked_mul(cols))
            .filter(|n| n.checked_add(16).is_some())
            .ok_or_else(|| Error::DimensionOverflow(format!("{count}x{rows}x{cols}")))?;
        let found = bytes.len() - 16;
        if found < payload {
            return Err(Error::Truncated {
                expected: payload,
                found,
            });
        }
        if found > payload {
            return Err(Error::DimensionMismatch {
                expected: format!("{payload} payload bytes"),
                actual: format!("{found} payload bytes"),
            });
        }
        Self::new(count, rows, cols, bytes[16..].to_vec())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dim = |v: usize| {
            u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        for v in [self.count, self.rows, self.cols] {
            out.extend_from_slice(&dim(v)?.to_be_bytes());
        }
        out.extend_from_slice(&self.pixels);
        Ok(out)
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxImageSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    IdxImageSet::from_bytes(&bytes)
}

pub fn write_idx(set: &IdxImageSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_bytes()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdxImageSet {
        IdxImageSet::new(2, 3, 3, (0u8..18).map(|v| v * 14).collect()).unwrap()
    }

    #[test]
    fn byte_layout_and_round_trip() {
        let set = fixture();
        let bytes = set.to_bytes().unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &[0, 0, 0, 2]);
        assert_eq!(&bytes[8..16], &[0, 0, 0, 3, 0, 0, 0, 3]);
        assert_eq!(IdxImageSet::from_bytes(&bytes).unwrap(), set);
        assert_eq!(set.image(1)[0], 9 * 14);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.idx3-ubyte");
        write_idx(&set, &p).unwrap();
        assert_eq!(load_idx(&p).unwrap(), set);
    }

    #[test]
    fn malformed_inputs() {
        let mut bytes = fixture().to_bytes().unwrap();
        assert!(matches!(
            IdxImageSet::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated {
                expected: 18,
                found: 17
            })
        ));
        assert!(matches!(
            IdxImageSet::from_bytes(&bytes[..10]),
            Err(Error::Truncated { .. })
        ));
        bytes[3] = 0x01;
        assert!(matches!(
            IdxImageSet::from_bytes(&bytes),
            Err(Error::BadMagic {
                found: 0x801,
                expected: 0x803
            })
        ));
        let mut huge = vec![0, 0, 8, 3];
        for _ in 0..3 {
            huge.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        let r = IdxImageSet::from_bytes(&huge);
        assert!(
            matches!(
                r,
                Err(Error::DimensionOverflow(_)) | Err(Error::Truncated { .. })
            ),
            "{r:?}"
        );
        assert!(matches!(
            load_idx("/nonexistent/file"),
            Err(Error::Io { .. })
        ));
    }
}

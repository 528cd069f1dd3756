//! IDX containers: big-endian `u32` magic and dimensions, then unsigned bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count·rows·cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.image_len();
        &self.pixels[i * len..(i + 1) * len]
    }
}

fn header(bytes: &[u8], words: usize, magic: u32) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(Error::Truncated {
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    let fields: Vec<u32> = bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if fields[0] != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: fields[0],
        });
    }
    Ok(fields)
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<Vec<u8>> {
    let expected = offset + len;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[offset..expected].to_vec())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let h = header(bytes, 4, IMAGES_MAGIC)?;
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let pixels = payload(bytes, 16, count * rows * cols)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = header(bytes, 2, LABELS_MAGIC)?;
    payload(bytes, 8, h[1] as usize)
}

pub fn read_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_images(&fs::read(path)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_labels(&fs::read(path)?)
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [
        IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    Ok(fs::write(path, encode_images(images))?)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_labels(labels))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> IdxImages {
        IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: (0..12).map(|v| v * 20).collect(),
        }
    }

    #[test]
    fn round_trip() {
        let img = toy();
        assert_eq!(parse_images(&encode_images(&img)).unwrap(), img);
        assert_eq!(img.image(1), &[80, 100, 120, 140]);
        let labels = vec![0u8, 1, 1];
        assert_eq!(parse_labels(&encode_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn header_is_big_endian() {
        let bytes = encode_images(&toy());
        assert_eq!(&bytes[..8], &[0, 0, 8, 3, 0, 0, 0, 3]);
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode_images(&toy());
        assert!(matches!(
            parse_labels(&bytes),
            Err(Error::BadMagic {
                expected: LABELS_MAGIC,
                found: IMAGES_MAGIC
            })
        ));
        assert!(matches!(
            parse_images(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated {
                expected: 28,
                found: 27
            })
        ));
        assert!(matches!(parse_images(&bytes[..10]), Err(Error::Truncated { .. })));
    }
}

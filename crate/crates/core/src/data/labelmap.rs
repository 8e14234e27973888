//! Binary label-map format.
//!
//! Layout: the 4-byte magic `LSEG`, width and height as little-endian `u32`,
//! then `width * height` little-endian `u16` class ids in row-major order.
//! The value 65535 marks ignore pixels.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::category::ClassId;
use super::mask::BinaryMask;

pub const LABELMAP_MAGIC: &[u8; 4] = b"LSEG";
const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum LabelMapError {
    #[error("bad magic bytes {0:?}, expected \"LSEG\"")]
    BadMagic([u8; 4]),
    #[error("file is {0} bytes, shorter than the 12-byte header")]
    Truncated(usize),
    #[error("payload is {actual} bytes, expected {expected} for a {width}x{height} map")]
    PayloadSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("pixel buffer has {actual} entries, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-pixel class ids for one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    pixels: Vec<u16>,
}

impl LabelMap {
    pub fn new(width: u32, height: u32, pixels: Vec<u16>) -> Result<Self, LabelMapError> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(LabelMapError::PixelCount {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    /// The set of non-ignore ids occurring in the map.
    pub fn present_ids(&self) -> BTreeSet<ClassId> {
        self.pixels
            .iter()
            .map(|&p| ClassId(p))
            .filter(|c| !c.is_ignore())
            .collect()
    }

    /// Pixels equal to `class` become set bits.
    pub fn binarize(&self, class: ClassId) -> BinaryMask {
        let bits = self.pixels.iter().map(|&p| p == class.0).collect();
        BinaryMask::from_bits(self.width, self.height, bits).expect("dimensions already checked")
    }

    /// Row-major flags marking pixels that take part in evaluation.
    pub fn valid_pixels(&self) -> impl Iterator<Item = bool> + '_ {
        self.pixels.iter().map(|&p| p != ClassId::IGNORE.0)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.pixels.len() * 2);
        out.extend_from_slice(LABELMAP_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for p in &self.pixels {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LabelMapError> {
        if bytes.len() < HEADER_LEN {
            return Err(LabelMapError::Truncated(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != LABELMAP_MAGIC {
            return Err(LabelMapError::BadMagic(magic));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let payload = &bytes[HEADER_LEN..];
        let expected = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(2));
        if expected != Some(payload.len()) {
            return Err(LabelMapError::PayloadSize {
                width,
                height,
                expected: expected.unwrap_or(usize::MAX),
                actual: payload.len(),
            });
        }
        let pixels = payload
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, LabelMapError> {
        Self::decode(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), LabelMapError> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

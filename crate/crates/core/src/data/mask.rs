use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask has {actual} bits, expected {expected}")]
    BitCount { expected: usize, actual: usize },
    #[error("run lengths sum to {sum}, expected {expected} for a {width}x{height} mask")]
    RunSum {
        width: u32,
        height: u32,
        expected: u64,
        sum: u64,
    },
    #[error("zero-length run at position {0}; only the first run may be empty")]
    EmptyRun(usize),
    #[error("invalid run length {token:?} in RLE text")]
    BadToken { token: String },
}

/// Row-major boolean mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BitCount {
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    /// Alternating run lengths, starting with a (possibly empty) run of zeros.
    pub fn rle_encode(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn rle_decode(runs: &[u32], width: u32, height: u32) -> Result<Self, MaskError> {
        let expected = width as u64 * height as u64;
        let sum: u64 = runs.iter().map(|&r| r as u64).sum();
        if sum != expected {
            return Err(MaskError::RunSum {
                width,
                height,
                expected,
                sum,
            });
        }
        if let Some(pos) = runs.iter().skip(1).position(|&r| r == 0) {
            return Err(MaskError::EmptyRun(pos + 1));
        }
        let mut bits = Vec::with_capacity(expected as usize);
        for (i, &r) in runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }
}

/// Comma-separated decimal run lengths, e.g. `"1,2,1"`.
pub fn format_rle(runs: &[u32]) -> String {
    runs.iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_rle(text: &str) -> Result<Vec<u32>, MaskError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|tok| {
            tok.trim().parse::<u32>().map_err(|_| MaskError::BadToken {
                token: tok.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rle_examples() {
        assert_eq!(BinaryMask::empty(2, 2).rle_encode(), vec![4]);
        let m = BinaryMask::from_bits(2, 2, vec![false, true, true, false]).unwrap();
        assert_eq!(m.rle_encode(), vec![1, 2, 1]);
        let full = BinaryMask::from_bits(1, 2, vec![true, true]).unwrap();
        assert_eq!(full.rle_encode(), vec![0, 2]);
        assert_eq!(BinaryMask::empty(0, 0).rle_encode(), vec![0]);
        assert_eq!(format_rle(&[1, 2, 1]), "1,2,1");
        assert_eq!(parse_rle("1,2,1").unwrap(), vec![1, 2, 1]);
    }

    #[test]
    fn decode_rejects_bad_runs() {
        assert!(matches!(
            BinaryMask::rle_decode(&[1, 2], 2, 2),
            Err(MaskError::RunSum { sum: 3, .. })
        ));
        assert_eq!(
            BinaryMask::rle_decode(&[2, 0, 2], 2, 2),
            Err(MaskError::EmptyRun(1))
        );
        assert!(parse_rle("1,x").is_err());
        assert!(parse_rle("1,-2").is_err());
    }

    #[test]
    fn seeded_16x16_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..50 {
            let bits = (0..256).map(|_| rng.random_bool(0.4)).collect();
            let m = BinaryMask::from_bits(16, 16, bits).unwrap();
            let runs = m.rle_encode();
            assert_eq!(BinaryMask::rle_decode(&runs, 16, 16).unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn rle_roundtrip_and_shape(w in 0u32..24, h in 0u32..24, bits in proptest::collection::vec(any::<bool>(), 576)) {
            let n = (w * h) as usize;
            let m = BinaryMask::from_bits(w, h, bits[..n].to_vec()).unwrap();
            let runs = m.rle_encode();
            prop_assert!(runs.iter().skip(1).all(|&r| r > 0));
            let text = format_rle(&runs);
            let back = BinaryMask::rle_decode(&parse_rle(&text).unwrap(), w, h).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}

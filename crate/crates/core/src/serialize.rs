//! Binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LSTA"            4 bytes magic
//! version           1 byte (currently 1)
//! rank              u32
//! shape[rank]       u32 each
//! payload           f32 each, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"LSTA";
pub const VERSION: u8 = 1;

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected \"LSTA\"".into(),
        });
    }
    let version = c.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let rank_at = c.pos;
    let rank = c.u32("rank")? as usize;
    if rank == 0 || rank > 16 {
        return Err(Error::Parse {
            offset: rank_at,
            message: format!("implausible rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let at = c.pos;
        let d = c.u32("shape")? as usize;
        if d == 0 {
            return Err(Error::Parse {
                offset: at,
                message: "zero-sized dimension".into(),
            });
        }
        shape.push(d);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse {
            offset: rank_at,
            message: "shape overflows".into(),
        })?;
    let payload = c.take(len * 4, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if c.pos != bytes.len() {
        return Err(Error::Parse {
            offset: c.pos,
            message: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    Tensor::new(shape, data)
}

pub fn save<T: Real>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    write_atomic(path, &encode(t))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new([1, 2], vec![1.0, -2.5]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"LSTA");
        assert_eq!(b[4], 1);
        assert_eq!(&b[5..9], &2u32.to_le_bytes());
        assert_eq!(&b[9..13], &1u32.to_le_bytes());
        assert_eq!(&b[13..17], &2u32.to_le_bytes());
        assert_eq!(&b[17..21], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 25);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::<f32>::ones([3]).unwrap();
        let mut b = encode(&t);
        assert!(matches!(decode(&b[..b.len() - 1]), Err(Error::Parse { .. })));
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Parse { offset: 0, .. })));
    }

    proptest! {
        #[test]
        fn round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let mut rng = crate::rng::Rng::new(seed);
            let t = rng.normal_tensor::<f32>(&shape).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}

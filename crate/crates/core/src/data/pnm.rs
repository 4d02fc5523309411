//! Binary portable pixmap (P6) frames and graymap (P5) masks, 8 bits per
//! sample.

use std::path::Path;

use super::Mask;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tensor::Tensor;

/// Mask samples at or above this level read as foreground.
pub const MASK_THRESHOLD: u8 = 128;

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    payload_at: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(parse_err(start, format!("expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| parse_err(start, format!("invalid {what}")))
}

fn parse_header(bytes: &[u8], expected: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != expected {
        return Err(parse_err(
            0,
            format!("bad magic number, expected {}", String::from_utf8_lossy(expected)),
        ));
    }
    let mut pos = 2;
    let width = read_number(bytes, &mut pos, "width")?;
    let height = read_number(bytes, &mut pos, "height")?;
    let max_at = skip_space_and_comments(bytes, pos);
    let maxval = read_number(bytes, &mut pos, "maxval")?;
    if maxval > 255 {
        return Err(parse_err(max_at, format!("maxval {maxval} needs 16-bit samples")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err(pos, "expected a single whitespace before the payload"));
    }
    Ok(Header {
        width,
        height,
        maxval,
        payload_at: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let have = bytes.len() - h.payload_at;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(parse_err(h.payload_at + need, "trailing bytes after payload"));
    }
    Ok(&bytes[h.payload_at..])
}

fn header_bytes(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

/// Encodes an `h × w × 3` frame with values in `[0, 1]` as P6.
pub fn encode_frame(frame: &Tensor<f32>) -> Result<Vec<u8>> {
    frame.expect_rank(3, "encode_frame")?;
    let s = frame.shape();
    if s[2] != 3 {
        return Err(Error::shape(format!("encode_frame: {s:?} is not an RGB frame")));
    }
    let mut out = header_bytes("P6", s[1], s[0]);
    out.extend(frame.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes, b"P6")?;
    let data = payload(bytes, &h, 3)?;
    let scale = h.maxval as f32;
    Tensor::new(
        [h.height, h.width, 3],
        data.iter().map(|&b| (b as f32 / scale).min(1.0)).collect(),
    )
}

/// Encodes a mask as P5 with samples 0 and 255.
pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = header_bytes("P5", mask.w(), mask.h());
    out.extend(mask.bits().iter().map(|&b| b * 255));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let h = parse_header(bytes, b"P5")?;
    let data = payload(bytes, &h, 1)?;
    let thresh = (MASK_THRESHOLD as usize * h.maxval).div_ceil(255);
    Mask::new(
        h.height,
        h.width,
        data.iter().map(|&b| (b as usize >= thresh) as u8).collect(),
    )
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn save_frame(path: impl AsRef<Path>, frame: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_frame(frame)?)
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    in_file(path, decode_frame(&read(path)?))
}

pub fn save_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    write_atomic(path, &encode_mask(mask))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    in_file(path, decode_mask(&read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn mask_round_trip() {
        let m = Mask::from_fn(5, 7, |y, x| (x + 2 * y) % 3 == 0).unwrap();
        assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
    }

    #[test]
    fn frame_round_trip_within_quantization() {
        let f = Rng::new(1).uniform_tensor::<f32>(&[6, 4, 3], 0.0, 1.0).unwrap();
        let g = decode_frame(&encode_frame(&f).unwrap()).unwrap();
        assert!(f.max_abs_diff(&g).unwrap() <= 1.0 / 255.0);
    }

    #[test]
    fn header_comments_and_small_maxval() {
        let mut bytes = b"P5 # mask\n2 1\n# depth\n15\n".to_vec();
        bytes.extend([15, 7]);
        let m = decode_mask(&bytes).unwrap();
        assert_eq!(m.bits(), &[1, 0]);
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = decode_mask(b"P6\n1 1\n255\n\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn reports_truncation_offset() {
        let bytes = b"P5\n4 4\n255\n\0\0\0";
        match decode_mask(bytes).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, bytes.len()),
            e => panic!("{e}"),
        }
        match decode_mask(b"P5\n4 x\n255\n").unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 5),
            e => panic!("{e}"),
        }
    }
}

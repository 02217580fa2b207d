//! Binary netpbm codecs: P5 (one byte per pixel) and P6 (RGB, three bytes).
//!
//! Decoding accepts any whitespace and `#` comments in the header, but only
//! `maxval` 255. Encoding is canonical: `P5\n<w> <h>\n255\n` then payload.

use crate::error::{Error, Result};

/// Decoded netpbm raster with raw samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        digits.parse().map_err(|_| Error::Decode {
            offset: start,
            reason: format!("{what} out of range"),
        })
    }
}

fn decode(bytes: &[u8], magic: &[u8; 2], channels: usize) -> Result<Raster> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(cur.err(format!(
            "missing magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    cur.pos = 2;
    if !bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected whitespace after magic"));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = {
        cur.skip_ws_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Decode {
            offset: maxval_at,
            reason: format!("maxval {maxval} unsupported, expected 255"),
        });
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(cur.err("expected single whitespace before payload"));
    }
    cur.pos += 1;
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let payload = &bytes[cur.pos..];
    if payload.len() < len {
        return Err(Error::Decode {
            offset: bytes.len(),
            reason: format!("truncated payload: expected {len} bytes, found {}", payload.len()),
        });
    }
    if payload.len() > len {
        return Err(Error::Decode {
            offset: cur.pos + len,
            reason: format!("{} trailing bytes after payload", payload.len() - len),
        });
    }
    Ok(Raster {
        width,
        height,
        samples: payload.to_vec(),
    })
}

fn encode(magic: &str, width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    out
}

pub fn decode_p5(bytes: &[u8]) -> Result<Raster> {
    decode(bytes, b"P5", 1)
}

pub fn decode_p6(bytes: &[u8]) -> Result<Raster> {
    decode(bytes, b"P6", 3)
}

pub fn encode_p5(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    debug_assert_eq!(samples.len(), width * height);
    encode("P5", width, height, samples)
}

pub fn encode_p6(width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    debug_assert_eq!(samples.len(), 3 * width * height);
    encode("P6", width, height, samples)
}

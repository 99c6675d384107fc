//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    /// Row-major, interleaved channels.
    pub data: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::Parse(format!("unsupported channel count {channels}")));
        }
        if width == 0 || height == 0 || data.len() != width * height * channels {
            return Err(Error::Parse(format!(
                "{width}x{height}x{channels} image with {} bytes",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Quantizes `[0, 1]` floats (clamped) to 8 bits.
    pub fn from_unit(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let channels = match cur.token()? {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Parse(format!("unsupported magic {m:?}"))),
        };
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if maxval != 255 {
            return Err(Error::Parse(format!("only maxval 255 is supported, got {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::Parse("missing raster separator".into())),
        }
        let n = width * height * channels;
        let raster = bytes
            .get(cur.pos..cur.pos + n)
            .ok_or_else(|| Error::Parse(format!("raster truncated: need {n} bytes")))?;
        Self::new(width, height, channels, raster.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Parse("non-ASCII header".into()))
    }

    fn number(&mut self) -> Result<usize> {
        let t = self.token()?;
        let v: usize = t
            .parse()
            .map_err(|_| Error::Parse(format!("bad header number {t:?}")))?;
        if v == 0 {
            return Err(Error::Parse("zero header value".into()));
        }
        Ok(v)
    }
}

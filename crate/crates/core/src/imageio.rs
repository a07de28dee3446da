//! Binary PGM (P5) and PPM (P6) reading and writing.
//!
//! Samples are mapped to `[0, 1]` by dividing by the header's maxval.
//! Writing supports maxval 255 (8-bit) and 65535 (16-bit, big-endian) and
//! quantizes with round-half-up. Header comments are accepted on read and
//! never written.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported magic number at byte 0 (expected P5 or P6)")]
    UnsupportedMagic,
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("truncated payload at byte {offset}: expected {expected} bytes, found {found}")]
    Truncated {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} channel(s), file has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("invalid image: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub path: Option<PathBuf>,
    pub maxval: u32,
}

/// Interleaved, row-major image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels (1 or 3 supported)")));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Invalid(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            provenance: None,
        })
    }

    /// Builds an image from per-channel `height × width` planes.
    pub fn from_planes(planes: &[DMatrix<f64>]) -> Result<Self, ImageError> {
        let first = planes
            .first()
            .ok_or_else(|| ImageError::Invalid("no channels".into()))?;
        let (height, width) = first.shape();
        if planes.iter().any(|p| p.shape() != (height, width)) {
            return Err(ImageError::Invalid("channel planes differ in size".into()));
        }
        let channels = planes.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for i in 0..height {
            for j in 0..width {
                data.extend(planes.iter().map(|p| p[(i, j)]));
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn plane(&self, channel: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.height, self.width, |i, j| {
            self.data[(i * self.width + j) * self.channels + channel]
        })
    }

    pub fn planes(&self) -> Vec<DMatrix<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    fn magic(&self) -> &'static [u8] {
        if self.channels == 1 {
            b"P5"
        } else {
            b"P6"
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::Header {
                offset: start,
                message: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Header {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Parses a P5 or P6 byte stream.
pub fn decode(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ImageError::UnsupportedMagic),
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    let width = reader.number("width")? as usize;
    let height = reader.number("height")? as usize;
    let maxval_offset = reader.pos;
    let maxval = reader.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::Header {
            offset: maxval_offset,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Header {
            offset: 2,
            message: "zero image dimension".into(),
        });
    }
    match bytes.get(reader.pos) {
        Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
        _ => {
            return Err(ImageError::Header {
                offset: reader.pos,
                message: "expected a single whitespace byte after maxval".into(),
            })
        }
    }
    let sample_bytes = if maxval > 255 { 2 } else { 1 };
    let count = width * height * channels;
    let expected = count * sample_bytes;
    let payload = &bytes[reader.pos..];
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            offset: reader.pos + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data = if sample_bytes == 1 {
        payload[..count].iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    Ok(ImageBuffer {
        width,
        height,
        channels,
        data,
        provenance: Some(Provenance { path: None, maxval }),
    })
}

fn quantize(v: f64, maxval: u32) -> u32 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * maxval as f64 + 0.5).floor() as u32).min(maxval)
}

pub fn encode(image: &ImageBuffer, depth: BitDepth) -> Vec<u8> {
    let maxval = depth.maxval();
    let mut out = Vec::with_capacity(20 + image.data.len() * 2);
    out.extend_from_slice(image.magic());
    out.extend_from_slice(format!("\n{} {}\n{}\n", image.width, image.height, maxval).as_bytes());
    for &v in &image.data {
        let q = quantize(v, maxval);
        match depth {
            BitDepth::Eight => out.push(q as u8),
            BitDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn load(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut image = decode(&bytes)?;
    if let Some(p) = image.provenance.as_mut() {
        p.path = Some(path.to_path_buf());
    }
    Ok(image)
}

/// Loads and checks the channel count.
pub fn load_expecting(path: impl AsRef<Path>, channels: usize) -> Result<ImageBuffer, ImageError> {
    let image = load(path)?;
    if image.channels != channels {
        return Err(ImageError::ChannelMismatch {
            expected: channels,
            found: image.channels,
        });
    }
    Ok(image)
}

pub fn save(path: impl AsRef<Path>, image: &ImageBuffer, depth: BitDepth) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode(image, depth)).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

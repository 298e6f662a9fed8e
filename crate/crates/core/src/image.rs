//! Dense float images plus the two on-disk formats used for exchange:
//! binary PPM (P6) for RGB and a raw little-endian float32 dump for depth.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed image file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("image dimensions {got_w}x{got_h} do not match expected {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Row-major interleaved image with `channels` samples per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Panics if `data.len() != width * height * channels`.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(
            data.len(),
            width * height * channels,
            "image buffer length does not match dimensions"
        );
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Fills an RGB image with a constant color.
    pub fn rgb_filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let mut img = Self::new(width, height, 3);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Luma (Rec. 601 weights) for RGB input; single-channel images are copied.
    pub fn to_gray(&self) -> Image {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect();
                Image::from_vec(self.width, self.height, 1, data)
            }
            c => {
                let data = self
                    .data
                    .chunks_exact(c)
                    .map(|p| p.iter().sum::<f32>() / c as f32)
                    .collect();
                Image::from_vec(self.width, self.height, 1, data)
            }
        }
    }

    /// Rounds every sample to the nearest multiple of 1/255, the values an
    /// 8-bit PPM can represent exactly.
    pub fn quantize_8bit(&self) -> Image {
        let data = self.data.iter().map(|&v| f32::from(to_u8(v)) / 255.0).collect();
        Image::from_vec(self.width, self.height, self.channels, data)
    }

    /// Multiplies every sample, then clamps to [0, 1].
    pub fn scaled(&self, factor: f32) -> Image {
        let data = self.data.iter().map(|&v| (v * factor).clamp(0.0, 1.0)).collect();
        Image::from_vec(self.width, self.height, self.channels, data)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), ImageError> {
        if self.channels != 3 {
            return Err(ImageError::Format {
                path: path.display().to_string(),
                reason: format!("PPM export needs 3 channels, image has {}", self.channels),
            });
        }
        let mut buf = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.data.iter().map(|&v| to_u8(v)));
        fs::write(path, buf).map_err(|source| io_err(path, source))
    }

    /// Reads a binary 8-bit PPM into an RGB image with samples in [0, 1].
    pub fn read_ppm(path: &Path) -> Result<Image, ImageError> {
        let file = fs::File::open(path).map_err(|source| io_err(path, source))?;
        let mut reader = BufReader::new(file);
        let fmt = |reason: &str| ImageError::Format {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };

        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            let mut line = String::new();
            let n = reader.read_line(&mut line).map_err(|source| io_err(path, source))?;
            if n == 0 {
                return Err(fmt("truncated header"));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P6" {
            return Err(fmt("not a binary PPM (P6)"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| fmt("bad header number"));
        let (w, h, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(fmt("only maxval 255 is supported"));
        }
        let mut raw = vec![0u8; w * h * 3];
        reader
            .read_exact(&mut raw)
            .map_err(|_| fmt("pixel data shorter than header declares"))?;
        let data = raw.into_iter().map(|b| f32::from(b) / 255.0).collect();
        Ok(Image::from_vec(w, h, 3, data))
    }

    /// Raw depth dump: three little-endian u32 (width, height, 1) followed by
    /// width*height little-endian f32 samples.
    pub fn write_depth(&self, path: &Path) -> Result<(), ImageError> {
        if self.channels != 1 {
            return Err(ImageError::Format {
                path: path.display().to_string(),
                reason: "depth export needs a single channel".into(),
            });
        }
        let mut buf = Vec::with_capacity(12 + self.data.len() * 4);
        for v in [self.width as u32, self.height as u32, 1u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|source| io_err(path, source))?;
        f.write_all(&buf).map_err(|source| io_err(path, source))
    }

    pub fn read_depth(path: &Path) -> Result<Image, ImageError> {
        let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
        let fmt = |reason: &str| ImageError::Format {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        if bytes.len() < 12 {
            return Err(fmt("truncated header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
        let (w, h, c) = (word(0) as usize, word(1) as usize, word(2));
        if c != 1 {
            return Err(fmt("channel count must be 1"));
        }
        if bytes.len() != 12 + w * h * 4 {
            return Err(fmt("payload size does not match header"));
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Image::from_vec(w, h, 1, data))
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn io_err(path: &Path, source: io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

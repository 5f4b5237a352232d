//! 8-bit RGB frames with PPM (P6) read/write and PNG read.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{data_err, AvError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height * 3] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn count_color(&self, rgb: [u8; 3]) -> usize {
        self.pixels.chunks_exact(3).filter(|p| *p == rgb).count()
    }

    /// Channels-first planes scaled to `[0, 1]`.
    pub fn to_chw(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (i, p) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = p[c] as f64 / 255.0;
            }
        }
        out
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(data_err("ppm: truncated header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(data_err(format!("ppm: expected P6, found {}", fields[0])));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| data_err(format!("ppm: bad header field {s}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(data_err(format!("ppm: only 8-bit maxval 255 is supported, found {maxval}")));
        }
        let data = &bytes[pos + 1..];
        if data.len() != width * height * 3 {
            return Err(data_err(format!("ppm: expected {} pixel bytes, found {}", width * height * 3, data.len())));
        }
        Ok(Self { width, height, pixels: data.to_vec() })
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let png_err = |e: png::DecodingError| AvError::Png(e.to_string());
        let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(png_err)?;
        let size = reader.output_buffer_size().ok_or_else(|| AvError::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => return Err(AvError::Png("palette was not expanded".into())),
        };
        let mut img = Self::new(w, h);
        for y in 0..h {
            let row = &buf[y * info.line_size..];
            for x in 0..w {
                let p = &row[x * channels..];
                let rgb = if channels < 3 { [p[0]; 3] } else { [p[0], p[1], p[2]] };
                img.set(x, y, rgb);
            }
        }
        Ok(img)
    }

    /// Reads a PPM or PNG file, chosen by its signature.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref())?;
        if bytes.starts_with(b"\x89PNG") {
            Self::from_png(&bytes)
        } else {
            Self::from_ppm(&bytes)
        }
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_ppm())?;
        Ok(())
    }
}

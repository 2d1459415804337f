//! Grayscale images, temporal cine stacks, and 16-bit PGM persistence.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A 2-D intensity image with values in `[0, 1]`, row-major.
///
/// Dimensions must be powers of two (the Fourier pipeline assumes even,
/// pow2-friendly grids). The phantom generator additionally insists on
/// sizes >= 32; smaller grids are allowed here so oracle tests can work
/// on 8x8 and 16x16 inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

pub const MIN_IMAGE_DIM: usize = 4;

fn check_dim(name: &str, n: usize) -> Result<()> {
    if n < MIN_IMAGE_DIM || !n.is_power_of_two() {
        return Err(Error::param(format!(
            "{name} must be a power of two >= {MIN_IMAGE_DIM}, got {n}"
        )));
    }
    Ok(())
}

impl ImageGray {
    /// Build an image from row-major intensities; values are validated
    /// to be finite and within `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("height", height)?;
        check_dim("width", width)?;
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "expected {} intensities, got {}",
                height * width,
                data.len()
            )));
        }
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("intensity {v} outside [0, 1]")));
            }
        }
        Ok(Self { height, width, data })
    }

    /// All-zero image.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dim("height", height)?;
        check_dim("width", width)?;
        Ok(Self { height, width, data: vec![0.0; height * width] })
    }

    /// Constant image of the given intensity.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value.clamp(0.0, 1.0);
    }

    /// Circularly shift the image by `shift` rows (pixel (r, c) moves to
    /// ((r + shift) mod H, c)).
    pub fn shift_rows(&self, shift: i64) -> ImageGray {
        let h = self.height as i64;
        let s = shift.rem_euclid(h) as usize;
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.height {
            let dst = (r + s) % self.height;
            data[dst * self.width..(dst + 1) * self.width]
                .copy_from_slice(&self.data[r * self.width..(r + 1) * self.width]);
        }
        ImageGray { height: self.height, width: self.width, data }
    }

    /// Largest absolute pixel difference; images must share dimensions.
    pub fn max_abs_diff(&self, other: &ImageGray) -> f64 {
        assert_eq!(self.height, other.height);
        assert_eq!(self.width, other.width);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of squared intensities.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Snap every intensity to the nearest 16-bit grid point so a PGM
    /// round trip reproduces the image exactly.
    pub fn quantize_u16(&self) -> ImageGray {
        let data = self
            .data
            .iter()
            .map(|&v| (v * 65535.0).round() / 65535.0)
            .collect();
        ImageGray { height: self.height, width: self.width, data }
    }

    /// Write as binary PGM (P5), maxval 65535, big-endian samples.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() * 2 + 32);
        write!(buf, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for &v in &self.data {
            let q = (v * 65535.0).round() as u16;
            buf.extend_from_slice(&q.to_be_bytes());
        }
        fs::write(path, buf)?;
        Ok(())
    }

    /// Read a binary PGM written by [`ImageGray::write_pgm`].
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let mut reader = PgmHeader::parse(&bytes)
            .map_err(|msg| Error::integrity(format!("{}: {msg}", path.display())))?;
        if reader.maxval != 65535 {
            return Err(Error::integrity(format!(
                "{}: expected maxval 65535, got {}",
                path.display(),
                reader.maxval
            )));
        }
        let n = reader.width * reader.height;
        let mut data = Vec::with_capacity(n);
        let mut sample = [0u8; 2];
        for _ in 0..n {
            reader.body.read_exact(&mut sample).map_err(|_| {
                Error::integrity(format!("{}: truncated pixel data", path.display()))
            })?;
            data.push(u16::from_be_bytes(sample) as f64 / 65535.0);
        }
        ImageGray::new(reader.height, reader.width, data)
    }
}

struct PgmHeader<'a> {
    width: usize,
    height: usize,
    maxval: u32,
    body: &'a [u8],
}

impl<'a> PgmHeader<'a> {
    fn parse(bytes: &'a [u8]) -> std::result::Result<Self, String> {
        // Header = magic + three whitespace-separated integers, then a
        // single whitespace byte before the raster.
        let mut pos = 0usize;
        let mut token = |skip_comments: bool| -> std::result::Result<&'a [u8], String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if skip_comments {
                while pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                        pos += 1;
                    }
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("unexpected end of header".into());
            }
            Ok(&bytes[start..pos])
        };
        let magic = token(false)?;
        if magic != b"P5" {
            return Err("not a binary PGM (P5)".into());
        }
        let parse_int = |t: &[u8]| -> std::result::Result<usize, String> {
            std::str::from_utf8(t)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| "bad integer in header".into())
        };
        let width = parse_int(token(true)?)?;
        let height = parse_int(token(true)?)?;
        let maxval = parse_int(token(true)?)? as u32;
        // exactly one whitespace separator before raster
        if pos >= bytes.len() {
            return Err("missing raster".into());
        }
        pos += 1;
        Ok(PgmHeader { width, height, maxval, body: &bytes[pos..] })
    }
}

/// An ordered temporal stack of frames with identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct CineStack {
    frames: Vec<ImageGray>,
}

impl CineStack {
    pub fn new(frames: Vec<ImageGray>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::param(format!(
                "cine stack needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (h, w) = (frames[0].height(), frames[0].width());
        for (t, f) in frames.iter().enumerate() {
            if f.height() != h || f.width() != w {
                return Err(Error::shape(format!(
                    "frame {t} is {}x{}, expected {h}x{w}",
                    f.height(),
                    f.width()
                )));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[ImageGray] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &ImageGray {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn rejects_non_power_of_two() {
        assert!(ImageGray::zeros(48, 32).is_err());
        assert!(ImageGray::zeros(32, 48).is_err());
        assert!(ImageGray::zeros(2, 32).is_err());
    }

    #[test]
    fn rejects_out_of_range_intensity() {
        assert!(ImageGray::new(4, 4, vec![1.5; 16]).is_err());
        assert!(ImageGray::new(4, 4, vec![f64::NAN; 16]).is_err());
    }

    #[test]
    fn shift_rows_wraps() {
        let mut img = ImageGray::zeros(4, 4).unwrap();
        img.set(0, 1, 1.0);
        let shifted = img.shift_rows(3);
        assert_eq!(shifted.get(3, 1), 1.0);
        let wrapped = img.shift_rows(-1);
        assert_eq!(wrapped.get(3, 1), 1.0);
    }

    #[test]
    fn pgm_round_trip_is_exact_after_quantize() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let data: Vec<f64> = (0..16 * 16).map(|i| (i as f64) / 255.0 % 1.0).collect();
        let img = ImageGray::new(16, 16, data).unwrap().quantize_u16();
        img.write_pgm(&path).unwrap();
        let back = ImageGray::read_pgm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn cine_rejects_single_frame() {
        let f = ImageGray::zeros(8, 8).unwrap();
        assert!(CineStack::new(vec![f]).is_err());
    }

    #[test]
    fn cine_rejects_mismatched_frames() {
        let a = ImageGray::zeros(8, 8).unwrap();
        let b = ImageGray::zeros(16, 8).unwrap();
        assert!(CineStack::new(vec![a, b]).is_err());
    }
}

//! Raster image and mask grids with binary PPM (P6) / PGM (P5) IO.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad {kind} file `{path}`: {msg}")]
    Format {
        kind: &'static str,
        path: String,
        msg: String,
    },
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RGBImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RGBImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        RGBImage {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), ImgError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_ppm())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self, ImgError> {
        let bytes = fs::read(path)?;
        let (magic, w, h, maxv, data) = parse_netpbm(&bytes, path, "ppm")?;
        if magic != 6 || maxv != 255 {
            return Err(ImgError::Format {
                kind: "ppm",
                path: path.display().to_string(),
                msg: "expected binary P6 with maxval 255".into(),
            });
        }
        if data.len() != w * h * 3 {
            return Err(ImgError::Format {
                kind: "ppm",
                path: path.display().to_string(),
                msg: format!("expected {} bytes, found {}", w * h * 3, data.len()),
            });
        }
        Ok(RGBImage {
            width: w,
            height: h,
            pixels: data.to_vec(),
        })
    }
}

/// Per-pixel relevance values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl MaskGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        MaskGrid {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    /// Quantize to 8 bits and serialize as binary PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| (v * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), ImgError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn read_pgm(path: &Path) -> Result<Self, ImgError> {
        let bytes = fs::read(path)?;
        let (magic, w, h, maxv, data) = parse_netpbm(&bytes, path, "pgm")?;
        if magic != 5 || maxv != 255 {
            return Err(ImgError::Format {
                kind: "pgm",
                path: path.display().to_string(),
                msg: "expected binary P5 with maxval 255".into(),
            });
        }
        if data.len() != w * h {
            return Err(ImgError::Format {
                kind: "pgm",
                path: path.display().to_string(),
                msg: format!("expected {} bytes, found {}", w * h, data.len()),
            });
        }
        Ok(MaskGrid {
            width: w,
            height: h,
            values: data.iter().map(|&b| b as f64 / 255.0).collect(),
        })
    }
}

fn parse_netpbm<'a>(
    bytes: &'a [u8],
    path: &Path,
    kind: &'static str,
) -> Result<(u8, usize, usize, usize, &'a [u8]), ImgError> {
    let err = |msg: &str| ImgError::Format {
        kind,
        path: path.display().to_string(),
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(err("missing magic"));
    }
    let magic = bytes[1] - b'0';
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| err("bad header field"))?;
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err("missing separator after maxval"));
    }
    pos += 1;
    Ok((magic, fields[0], fields[1], fields[2], &bytes[pos..]))
}

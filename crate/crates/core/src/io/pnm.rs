//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use crate::error::{Error, Result};
use crate::tensor::GrayMap;

const FMT: &str = "pgm";

/// Row-major RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{height}x{width} RGB image with {} pixels",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }
}

pub fn write_pgm(map: &GrayMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.extend_from_slice(map.pixels());
    out
}

pub fn write_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 3);
    for px in &image.pixels {
        out.extend_from_slice(px);
    }
    out
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayMap> {
    let mut pos = 0;
    let magic = token(bytes, &mut pos).ok_or_else(|| Error::format(FMT, "magic", "empty file"))?;
    if magic != b"P5" {
        return Err(Error::format(
            FMT,
            "magic",
            format!("expected P5, found {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            FMT,
            "maxval",
            format!("maxval {maxval} unsupported, only 255"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(FMT, "header", "missing separator before raster"));
    }
    pos += 1;
    let needed = width * height;
    let raster = &bytes[pos..];
    if raster.len() < needed {
        return Err(Error::format(
            FMT,
            "data",
            format!("truncated raster: {} of {needed} bytes", raster.len()),
        ));
    }
    GrayMap::new(width, height, raster[..needed].to_vec())
        .map_err(|e| Error::format(FMT, "dimensions", e.to_string()))
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, field: &'static str) -> Result<usize> {
    let tok = token(bytes, pos).ok_or_else(|| Error::format(FMT, field, "missing"))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::format(
                FMT,
                field,
                format!("not a number: {:?}", String::from_utf8_lossy(tok)),
            )
        })
}

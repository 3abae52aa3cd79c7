//! 256-entry color lookup tables for rendering saliency maps.

use crate::error::{Error, Result};
use crate::io::pnm::{write_ppm, RgbImage};
use crate::tensor::GrayMap;

/// Control points of the plasma-like ramp: dark purple, violet, magenta,
/// orange, yellow.
const PLASMA_KNOTS: [(usize, [u8; 3]); 5] = [
    (0, [13, 8, 135]),
    (64, [126, 3, 168]),
    (128, [204, 71, 120]),
    (192, [248, 149, 64]),
    (255, [240, 249, 33]),
];

const fn lerp_channel(a: u8, b: u8, t: usize, span: usize) -> u8 {
    // round-half-up integer interpolation
    let a = a as isize;
    let b = b as isize;
    let num = a * span as isize * 2 + (b - a) * t as isize * 2 + span as isize;
    (num / (span as isize * 2)) as u8
}

const fn build_plasma() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    let mut seg = 0;
    while seg < PLASMA_KNOTS.len() - 1 {
        let (x0, c0) = PLASMA_KNOTS[seg];
        let (x1, c1) = PLASMA_KNOTS[seg + 1];
        let span = x1 - x0;
        let mut x = x0;
        while x <= x1 {
            let t = x - x0;
            table[x] = [
                lerp_channel(c0[0], c1[0], t, span),
                lerp_channel(c0[1], c1[1], t, span),
                lerp_channel(c0[2], c1[2], t, span),
            ];
            x += 1;
        }
        seg += 1;
    }
    table
}

const fn build_gray() -> [[u8; 3]; 256] {
    let mut table = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        table[i] = [i as u8; 3];
        i += 1;
    }
    table
}

static PLASMA: [[u8; 3]; 256] = build_plasma();
static GRAY: [[u8; 3]; 256] = build_gray();

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeatmapPalette {
    entries: [[u8; 3]; 256],
}

impl HeatmapPalette {
    pub fn new(entries: [[u8; 3]; 256]) -> Result<Self> {
        if entries[0] == entries[255] {
            return Err(Error::InvalidArgument("palette endpoints must differ".into()));
        }
        Ok(HeatmapPalette { entries })
    }

    /// Purple (low) through magenta and orange to yellow (high).
    pub fn plasma() -> Self {
        HeatmapPalette { entries: PLASMA }
    }

    pub fn grayscale() -> Self {
        HeatmapPalette { entries: GRAY }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "plasma" => Some(Self::plasma()),
            "gray" | "grey" => Some(Self::grayscale()),
            _ => None,
        }
    }

    pub fn color(&self, intensity: u8) -> [u8; 3] {
        self.entries[intensity as usize]
    }

    pub fn entries(&self) -> &[[u8; 3]; 256] {
        &self.entries
    }
}

/// Nearest-neighbour upscale by `scale` and palette lookup, as PPM bytes.
pub fn render_heatmap(map: &GrayMap, palette: &HeatmapPalette, scale: usize) -> Result<Vec<u8>> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale factor must be at least 1".into()));
    }
    let (w, h) = (map.width() * scale, map.height() * scale);
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            pixels.push(palette.color(map.get(y / scale, x / scale)));
        }
    }
    Ok(write_ppm(&RgbImage::new(w, h, pixels)?))
}

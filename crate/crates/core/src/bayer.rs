//! Normalized Bayer-domain math.
//!
//! A [`BayerStack`] is the mosaic split into four half-resolution planes in
//! canonical R, G1, G2, B order, whatever the source CFA. Values are in
//! normalized units where the black level maps to 0 and the white level to 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::raw_io::{CfaPattern, RawImage, RawMeta};

/// Sensor response to a light, as `(r, g, b)` with `g` fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Illuminant {
    r: f64,
    b: f64,
}

impl Illuminant {
    /// Canonicalize `(r, g, b)` to `(r/g, 1, b/g)`.
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        if ![r, g, b].iter().all(|c| c.is_finite() && *c > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "illuminant components must be finite and positive, got ({r}, {g}, {b})"
            )));
        }
        if g == 1.0 {
            Ok(Self { r, b })
        } else {
            Ok(Self { r: r / g, b: b / g })
        }
    }

    pub fn neutral() -> Self {
        Self { r: 1.0, b: 1.0 }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn g(&self) -> f64 {
        1.0
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn rgb(&self) -> [f64; 3] {
        [self.r, 1.0, self.b]
    }

    /// Per-plane factors in stack order (R, G1, G2, B).
    pub fn plane_factors(&self) -> [f64; 4] {
        [self.r, 1.0, 1.0, self.b]
    }

    /// White-balance gains `(1/r, 1, 1/b)`.
    pub fn gains(&self) -> [f64; 3] {
        [1.0 / self.r, 1.0, 1.0 / self.b]
    }

    /// Chromaticity `(r/g, b/g)`.
    pub fn chromaticity(&self) -> [f64; 2] {
        [self.r, self.b]
    }
}

impl TryFrom<[f64; 3]> for Illuminant {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Illuminant::new(v[0], v[1], v[2])
    }
}

impl From<Illuminant> for [f64; 3] {
    fn from(i: Illuminant) -> Self {
        i.rgb()
    }
}

/// Four-plane RGGB stack at half resolution, stored pixel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct BayerStack {
    half_width: usize,
    half_height: usize,
    data: Vec<[f64; 4]>,
    cfa_origin: CfaPattern,
}

impl BayerStack {
    pub fn new(
        half_width: usize,
        half_height: usize,
        data: Vec<[f64; 4]>,
        cfa_origin: CfaPattern,
    ) -> Result<Self> {
        if half_width == 0 || half_height == 0 || data.len() != half_width * half_height {
            return Err(Error::InvalidImage(format!(
                "stack of {half_width}x{half_height} cannot hold {} pixels",
                data.len()
            )));
        }
        Ok(Self {
            half_width,
            half_height,
            data,
            cfa_origin,
        })
    }

    /// Stack whose planes are each constant.
    pub fn constant(half_width: usize, half_height: usize, planes: [f64; 4]) -> Self {
        Self {
            half_width,
            half_height,
            data: vec![planes; half_width * half_height],
            cfa_origin: CfaPattern::Rggb,
        }
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn half_height(&self) -> usize {
        self.half_height
    }

    pub fn cfa_origin(&self) -> CfaPattern {
        self.cfa_origin
    }

    /// Pixels in row-major order, each `[R, G1, G2, B]`.
    pub fn pixels(&self) -> &[[f64; 4]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 4]] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 4] {
        self.data[y * self.half_width + x]
    }

    /// Copy of one plane (0 = R, 1 = G1, 2 = G2, 3 = B).
    pub fn plane(&self, channel: usize) -> Vec<f64> {
        self.data.iter().map(|p| p[channel]).collect()
    }

    fn scale_planes(mut self, factors: [f64; 4]) -> Self {
        par::rows_mut(&mut self.data, self.half_width).for_each(|row| {
            for px in row {
                for (v, f) in px.iter_mut().zip(factors) {
                    *v *= f;
                }
            }
        });
        self
    }

    /// Multiply every value by `factor`.
    pub(crate) fn scale(mut self, factor: f64) -> Self {
        par::rows_mut(&mut self.data, self.half_width).for_each(|row| {
            for px in row {
                for v in px.iter_mut() {
                    *v *= factor;
                }
            }
        });
        self
    }
}

/// `(dn - black) / (white - black)`, with sub-black values clamped to 0.
#[inline]
pub fn normalize_dn(dn: f64, black: f64, white: f64) -> f64 {
    (dn - black).max(0.0) / (white - black)
}

/// Subtract the black level, scale to [0, 1] and split into R, G1, G2, B planes.
pub fn normalize(raw: &RawImage) -> BayerStack {
    let meta = &raw.meta;
    let (w, hw, hh) = (raw.width(), raw.width() / 2, raw.height() / 2);
    let black = f64::from(meta.black_level);
    let white = f64::from(meta.white_level);
    let offsets = meta.cfa_pattern.offsets();
    let pixels = raw.pixels();
    let mut data = vec![[0.0; 4]; hw * hh];
    par::rows_mut(&mut data, hw)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, px) in row.iter_mut().enumerate() {
                for (v, (dy, dx)) in px.iter_mut().zip(offsets) {
                    let dn = pixels[(2 * y + dy) * w + 2 * x + dx];
                    *v = normalize_dn(f64::from(dn), black, white);
                }
            }
        });
    BayerStack {
        half_width: hw,
        half_height: hh,
        data,
        cfa_origin: meta.cfa_pattern,
    }
}

/// `round(clamp(v, 0, 1) * (white - black) + black)`.
#[inline]
pub fn denormalize_value(v: f64, black: f64, white: f64) -> u16 {
    (v.clamp(0.0, 1.0) * (white - black) + black).round() as u16
}

/// Map a stack back to digital numbers in the original CFA layout.
///
/// Metadata other than the levels is taken from `meta`; its CFA must match
/// the stack's origin.
pub fn denormalize(stack: &BayerStack, meta: &RawMeta) -> Result<RawImage> {
    if meta.cfa_pattern != stack.cfa_origin {
        return Err(Error::Mismatch(format!(
            "stack came from {:?} but metadata says {:?}",
            stack.cfa_origin, meta.cfa_pattern
        )));
    }
    let (hw, hh) = (stack.half_width, stack.half_height);
    let w = 2 * hw;
    let black = f64::from(meta.black_level);
    let white = f64::from(meta.white_level);
    let offsets = stack.cfa_origin.offsets();
    let mut pixels = vec![0u16; w * 2 * hh];
    // one chunk = two mosaic rows = one stack row
    par::rows_mut(&mut pixels, 2 * w)
        .zip(par::rows(&stack.data, hw))
        .for_each(|(out, row)| {
            for (x, px) in row.iter().enumerate() {
                for (v, (dy, dx)) in px.iter().zip(offsets) {
                    out[dy * w + 2 * x + dx] = denormalize_value(*v, black, white);
                }
            }
        });
    RawImage::new(w, 2 * hh, pixels, meta.clone())
}

/// Remove the day illuminant: R / r and B / b.
pub fn white_balance(stack: BayerStack, day_illum: &Illuminant) -> BayerStack {
    let [gr, _, gb] = day_illum.gains();
    stack.scale_planes([gr, 1.0, 1.0, gb])
}

/// Tint by an illuminant: R × r and B × b.
pub fn apply_illuminant(stack: BayerStack, illum: &Illuminant) -> BayerStack {
    stack.scale_planes(illum.plane_factors())
}

/// Mean over all four planes.
///
/// Row sums are added in row order, so the result does not depend on the
/// thread count.
pub fn mean_intensity(stack: &BayerStack) -> f64 {
    let row_sums: Vec<f64> = par::rows(&stack.data, stack.half_width)
        .map(|row| row.iter().map(|p| p[0] + p[1] + p[2] + p[3]).sum::<f64>())
        .collect();
    row_sums.iter().sum::<f64>() / (4 * stack.data.len()) as f64
}

/// Per-pixel mean of a burst in the digital-number domain, rounded to nearest.
///
/// Metadata comes from the first frame.
pub fn average_burst(frames: &[RawImage]) -> Result<RawImage> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidParameter("burst has no frames".into()))?;
    if let Some((i, _)) = frames
        .iter()
        .enumerate()
        .find(|(_, f)| !first.is_compatible(f))
    {
        return Err(Error::Mismatch(format!(
            "frame {i} differs from frame 0 in size, CFA or levels"
        )));
    }
    let n = frames.len() as u64;
    let w = first.width();
    let mut out = vec![0u16; first.pixels().len()];
    par::rows_mut(&mut out, w).enumerate().for_each(|(y, row)| {
        let base = y * w;
        for (x, o) in row.iter_mut().enumerate() {
            let sum: u64 = frames.iter().map(|f| u64::from(f.pixels()[base + x])).sum();
            *o = ((sum + n / 2) / n) as u16;
        }
    });
    RawImage::new(w, first.height(), out, first.meta.clone())
}

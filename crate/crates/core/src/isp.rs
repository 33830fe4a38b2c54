//! Minimal software ISP: normalize, white balance, demosaic, color matrix,
//! sRGB encode. No tone mapping or other photo-finishing.

use std::sync::OnceLock;

use crate::bayer::{normalize, white_balance, BayerStack, Illuminant};
use crate::error::{Error, Result};
use crate::par;
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::raw_io::{validate_ccm, RawImage};

pub const IDENTITY_CCM: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

/// Full-resolution linear RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRgb {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl LinearRgb {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} RGB image cannot hold {} pixels",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

/// 8-bit sRGB, interleaved RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SrgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} sRGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Reconstructs full RGB from a normalized stack.
pub trait Demosaic {
    fn demosaic(&self, stack: &BayerStack) -> LinearRgb;
}

/// Bilinear interpolation with a CFA-preserving mirror at the borders
/// (index -1 reads index 1), so every neighbor keeps its color.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bilinear;

impl Demosaic for Bilinear {
    fn demosaic(&self, stack: &BayerStack) -> LinearRgb {
        let view = MosaicView::new(stack);
        let (w, h) = (view.width, view.height);
        let mut data = vec![[0.0; 3]; w * h];
        par::rows_mut(&mut data, w)
            .enumerate()
            .for_each(|(y, row)| {
                view.row_rgb(y, |x, px| row[x] = px);
            });
        LinearRgb {
            width: w,
            height: h,
            data,
        }
    }
}

/// Bilinear demosaic of a normalized stack back to full resolution.
pub fn demosaic(stack: &BayerStack) -> LinearRgb {
    Bilinear.demosaic(stack)
}

/// The stack read back as a full-resolution mosaic.
struct MosaicView<'a> {
    stack: &'a BayerStack,
    width: usize,
    height: usize,
    /// Stack plane index of each tile site, `[row parity][col parity]`.
    plane_at: [[usize; 2]; 2],
    /// RGB color of each tile site.
    color_at: [[usize; 2]; 2],
}

impl<'a> MosaicView<'a> {
    fn new(stack: &'a BayerStack) -> Self {
        let mut plane_at = [[0; 2]; 2];
        let mut color_at = [[0; 2]; 2];
        for (plane, (dy, dx)) in stack.cfa_origin().offsets().into_iter().enumerate() {
            plane_at[dy][dx] = plane;
            color_at[dy][dx] = [0, 1, 1, 2][plane];
        }
        Self {
            stack,
            width: 2 * stack.half_width(),
            height: 2 * stack.half_height(),
            plane_at,
            color_at,
        }
    }

    /// Mosaic row `y` (mirrored at the borders) with one mirrored sample
    /// on each side, so `buf[x + 1]` holds column `x`.
    fn fill_row(&self, y: isize, buf: &mut [f64]) {
        let y = mirror(y, self.height);
        let hw = self.stack.half_width();
        let planes = self.plane_at[y & 1];
        let row = &self.stack.pixels()[(y / 2) * hw..(y / 2 + 1) * hw];
        for (pair, px) in buf[1..=self.width].chunks_exact_mut(2).zip(row) {
            pair[0] = px[planes[0]];
            pair[1] = px[planes[1]];
        }
        buf[0] = buf[2];
        buf[self.width + 1] = buf[self.width - 1];
    }

    #[inline]
    fn color(&self, y: usize, x: usize) -> usize {
        self.color_at[y & 1][x & 1]
    }

    /// Interpolate every pixel of output row `y`.
    fn row_rgb(&self, y: usize, mut emit: impl FnMut(usize, [f64; 3])) {
        let n = self.width + 2;
        let mut up = vec![0.0; n];
        let mut mid = vec![0.0; n];
        let mut down = vec![0.0; n];
        let yi = y as isize;
        self.fill_row(yi - 1, &mut up);
        self.fill_row(yi, &mut mid);
        self.fill_row(yi + 1, &mut down);
        for x in 0..self.width {
            let i = x + 1;
            let here = mid[i];
            let site = self.color(y, x);
            let mut out = [0.0; 3];
            if site == 1 {
                let horiz = (mid[i - 1] + mid[i + 1]) * 0.5;
                let vert = (up[i] + down[i]) * 0.5;
                // the color sharing this row sits left/right of the green
                let row_color = self.color(y, x ^ 1);
                out[1] = here;
                out[row_color] = horiz;
                out[2 - row_color] = vert;
            } else {
                let cross = ((up[i] + down[i]) + (mid[i - 1] + mid[i + 1])) * 0.25;
                let diag = ((up[i - 1] + up[i + 1]) + (down[i - 1] + down[i + 1])) * 0.25;
                out[site] = here;
                out[1] = cross;
                out[2 - site] = diag;
            }
            emit(x, out);
        }
    }
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let i = if i < 0 { -i } else { i };
    (if i >= n { 2 * n - 2 - i } else { i }) as usize
}

#[inline]
fn ccm_pixel(m: &[f64; 9], p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(m.chunks_exact(3)) {
        *o = (row[0] * p[0] + row[1] * p[1] + row[2] * p[2]).max(0.0);
    }
    out
}

/// Per-pixel color matrix (row-major), negative results clamped to 0.
pub fn apply_ccm(img: &LinearRgb, ccm: &[f64; 9]) -> Result<LinearRgb> {
    validate_ccm(ccm)?;
    let mut data = img.data.clone();
    par::rows_mut(&mut data, img.width).for_each(|row| {
        for px in row {
            *px = ccm_pixel(ccm, *px);
        }
    });
    Ok(LinearRgb { data, ..*img })
}

/// sRGB transfer function on `[0, 1]`.
#[inline]
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Inverse of [`srgb_encode`].
#[inline]
pub fn srgb_decode(e: f64) -> f64 {
    if e <= 0.04045 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

/// `round(255 · srgb_encode(clamp(v, 0, 1)))` straight from the formula.
#[inline]
pub fn quantize_direct(v: f64) -> u8 {
    (255.0 * srgb_encode(v.clamp(0.0, 1.0))).round() as u8
}

/// Smallest linear value quantizing to each code 1..=255.
fn code_thresholds() -> &'static [f64; 255] {
    static TABLE: OnceLock<[f64; 255]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 255];
        for (k, slot) in t.iter_mut().enumerate() {
            let code = k as u8 + 1;
            // bisection over the ordered bit patterns of [0, 1]
            let (mut lo, mut hi) = (0.0f64.to_bits(), 1.0f64.to_bits());
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if quantize_direct(f64::from_bits(mid)) >= code {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            *slot = f64::from_bits(hi);
        }
        t
    })
}

const BUCKETS: usize = 4096;

/// Code of the lower edge of each of `BUCKETS` equal slices of [0, 1].
/// No slice spans more than one code step.
fn bucket_codes() -> &'static [u8; BUCKETS] {
    static TABLE: OnceLock<[u8; BUCKETS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let t = code_thresholds();
        std::array::from_fn(|i| {
            let v = i as f64 / BUCKETS as f64;
            t.partition_point(|x| *x <= v) as u8
        })
    })
}

/// Table-driven equivalent of [`quantize_direct`].
#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let t = code_thresholds();
    let bucket = ((v * BUCKETS as f64) as usize).min(BUCKETS - 1);
    let mut code = bucket_codes()[bucket] as usize;
    while code < 255 && t[code] <= v {
        code += 1;
    }
    code as u8
}

/// Clamp to [0, 1], sRGB-encode and round to 8 bits.
pub fn gamma_encode(img: &LinearRgb) -> SrgbImage {
    let mut data = vec![0u8; img.data.len() * 3];
    par::rows_mut(&mut data, 3 * img.width)
        .zip(par::rows(&img.data, img.width))
        .for_each(|(out, row)| {
            for (o, px) in out.chunks_exact_mut(3).zip(row) {
                for (b, v) in o.iter_mut().zip(px) {
                    *b = quantize(*v);
                }
            }
        });
    SrgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Render a raw capture with the given white balance.
///
/// Equivalent to `gamma_encode(apply_ccm(demosaic(white_balance(normalize(raw), wb)), ccm))`
/// with the metadata CCM (identity when absent), computed row by row
/// without materializing the intermediate images.
pub fn render(raw: &RawImage, wb: &Illuminant) -> Result<SrgbImage> {
    let ccm = raw.meta.ccm.unwrap_or(IDENTITY_CCM);
    validate_ccm(&ccm)?;
    let stack = white_balance(normalize(raw), wb);
    let view = MosaicView::new(&stack);
    let w = view.width;
    let mut data = vec![0u8; w * view.height * 3];
    par::rows_mut(&mut data, 3 * w)
        .enumerate()
        .for_each(|(y, out)| {
            view.row_rgb(y, |x, px| {
                let px = ccm_pixel(&ccm, px);
                for (b, v) in out[3 * x..3 * x + 3].iter_mut().zip(px) {
                    *b = quantize(v);
                }
            });
        });
    SrgbImage::new(w, view.height, data)
}

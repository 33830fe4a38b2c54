//! Image-quality and white-balance metrics on 8-bit sRGB images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isp::{srgb_decode, SrgbImage};
use crate::par;
#[allow(unused_imports)]
use crate::par::prelude::*;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

fn same_dims(a: &SrgbImage, b: &SrgbImage) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Mismatch(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &SrgbImage, b: &SrgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB))
}

/// BT.601 luma plane.
pub fn luma(img: &SrgbImage) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| {
            LUMA_WEIGHTS[0] * f64::from(p[0])
                + LUMA_WEIGHTS[1] * f64::from(p[1])
                + LUMA_WEIGHTS[2] * f64::from(p[2])
        })
        .collect()
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let t = i as f64 - half;
        *v = (-(t * t) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Single-scale SSIM on luma with an 11×11 Gaussian window (σ = 1.5),
/// averaged over all fully contained window positions.
pub fn ssim(a: &SrgbImage, b: &SrgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let x = luma(a);
    let y = luma(b);
    let k = ssim_kernel();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;

    // horizontal pass: per input row, 5 moment rows of width ow
    let mut horiz = vec![[0.0f64; 5]; h * ow];
    par::rows_mut(&mut horiz, ow)
        .enumerate()
        .for_each(|(r, out)| {
            let xr = &x[r * w..(r + 1) * w];
            let yr = &y[r * w..(r + 1) * w];
            for (c, o) in out.iter_mut().enumerate() {
                let mut acc = [0.0; 5];
                for (t, kv) in k.iter().enumerate() {
                    let (xv, yv) = (xr[c + t], yr[c + t]);
                    acc[0] += kv * xv;
                    acc[1] += kv * yv;
                    acc[2] += kv * xv * xv;
                    acc[3] += kv * yv * yv;
                    acc[4] += kv * xv * yv;
                }
                *o = acc;
            }
        });

    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let row_sums: Vec<f64> = par::indices(oh)
        .map(|r| {
            let mut sum = 0.0;
            for c in 0..ow {
                let mut m = [0.0; 5];
                for (t, kv) in k.iter().enumerate() {
                    let hv = &horiz[(r + t) * ow + c];
                    for (mi, hi) in m.iter_mut().zip(hv) {
                        *mi += kv * hi;
                    }
                }
                sum += ssim_from_moments(m, c1, c2);
            }
            sum
        })
        .collect();
    Ok(row_sums.iter().sum::<f64>() / (ow * oh) as f64)
}

/// SSIM of one window from weighted moments `[μx, μy, E x², E y², E xy]`.
#[inline]
pub fn ssim_from_moments(m: [f64; 5], c1: f64, c2: f64) -> f64 {
    let [mx, my, xx, yy, xy] = m;
    let vx = xx - mx * mx;
    let vy = yy - my * my;
    let cov = xy - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// ΔE formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaEFormula {
    #[default]
    Cie76,
    Ciede2000,
}

/// CIELAB coordinates (D65 white).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lab {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Linear-light XYZ to CIELAB relative to D65.
pub fn xyz_to_lab(xyz: [f64; 3]) -> Lab {
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    let f = |t: f64| {
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    };
    let fx = f(xyz[0] / D65_WHITE[0]);
    let fy = f(xyz[1] / D65_WHITE[1]);
    let fz = f(xyz[2] / D65_WHITE[2]);
    Lab {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

/// 8-bit sRGB → linear → XYZ → CIELAB.
pub fn srgb8_to_lab(rgb: [u8; 3]) -> Lab {
    let lin = rgb.map(|c| srgb_decode(f64::from(c) / 255.0));
    let mut xyz = [0.0; 3];
    for (o, row) in xyz.iter_mut().zip(&SRGB_TO_XYZ) {
        *o = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    xyz_to_lab(xyz)
}

/// Euclidean distance in CIELAB.
pub fn cie76(p: Lab, q: Lab) -> f64 {
    ((p.l - q.l).powi(2) + (p.a - q.a).powi(2) + (p.b - q.b).powi(2)).sqrt()
}

/// CIEDE2000 color difference with unit weighting factors.
pub fn ciede2000(p: Lab, q: Lab) -> f64 {
    use std::f64::consts::PI;
    let deg = |r: f64| r * 180.0 / PI;
    let rad = |d: f64| d * PI / 180.0;
    let pow7 = |v: f64| v.powi(7);
    let twenty5_7 = pow7(25.0);

    let c1 = p.a.hypot(p.b);
    let c2 = q.a.hypot(q.b);
    let c_bar = 0.5 * (c1 + c2);
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + twenty5_7)).sqrt());
    let a1 = (1.0 + g) * p.a;
    let a2 = (1.0 + g) * q.a;
    let c1p = a1.hypot(p.b);
    let c2p = a2.hypot(q.b);
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            let h = deg(b.atan2(a));
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let h1p = hue(p.b, a1);
    let h2p = hue(q.b, a2);

    let dl = q.l - p.l;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh_big = 2.0 * (c1p * c2p).sqrt() * rad(dh / 2.0).sin();

    let l_bar = 0.5 * (p.l + q.l);
    let cp_bar = 0.5 * (c1p + c2p);
    let hp_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        0.5 * (h1p + h2p)
    } else if h1p + h2p < 360.0 {
        0.5 * (h1p + h2p + 360.0)
    } else {
        0.5 * (h1p + h2p - 360.0)
    };
    let t = 1.0 - 0.17 * rad(hp_bar - 30.0).cos()
        + 0.24 * rad(2.0 * hp_bar).cos()
        + 0.32 * rad(3.0 * hp_bar + 6.0).cos()
        - 0.20 * rad(4.0 * hp_bar - 63.0).cos();
    let d_theta = 30.0 * (-((hp_bar - 275.0) / 25.0).powi(2)).exp();
    let rc = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + twenty5_7)).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let sl = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let sc = 1.0 + 0.045 * cp_bar;
    let sh = 1.0 + 0.015 * cp_bar * t;
    let rt = -rad(2.0 * d_theta).sin() * rc;

    let tl = dl / sl;
    let tc = dc / sc;
    let th = dh_big / sh;
    (tl * tl + tc * tc + th * th + rt * tc * th).sqrt()
}

/// Mean per-pixel ΔE between two sRGB images.
pub fn delta_e(a: &SrgbImage, b: &SrgbImage, formula: DeltaEFormula) -> Result<f64> {
    same_dims(a, b)?;
    let lab = |c: [u8; 3]| srgb8_to_lab(c);
    let diff = match formula {
        DeltaEFormula::Cie76 => cie76,
        DeltaEFormula::Ciede2000 => ciede2000,
    };
    let w = a.width();
    let row_sums: Vec<f64> = par::rows(a.data(), 3 * w)
        .zip(par::rows(b.data(), 3 * w))
        .map(|(ra, rb)| {
            ra.chunks_exact(3)
                .zip(rb.chunks_exact(3))
                .map(|(pa, pb)| diff(lab([pa[0], pa[1], pa[2]]), lab([pb[0], pb[1], pb[2]])))
                .sum::<f64>()
        })
        .collect();
    Ok(row_sums.iter().sum::<f64>() / (w * a.height()) as f64)
}

/// Angle in degrees between two RGB white-balance vectors.
pub fn angular_error(w1: [f64; 3], w2: [f64; 3]) -> Result<f64> {
    for w in [w1, w2] {
        if w.iter().any(|c| !c.is_finite() || *c < 0.0) || w.iter().all(|c| *c == 0.0) {
            return Err(Error::InvalidParameter(format!(
                "angular error needs nonzero, nonnegative vectors, got {w:?}"
            )));
        }
    }
    let dot = w1[0] * w2[0] + w1[1] * w2[1] + w1[2] * w2[2];
    let cross = [
        w1[1] * w2[2] - w1[2] * w2[1],
        w1[2] * w2[0] - w1[0] * w2[2],
        w1[0] * w2[1] - w1[1] * w2[0],
    ];
    let cross_norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    Ok(cross_norm.atan2(dot).to_degrees())
}

/// Metrics for one prediction/ground-truth pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub delta_e: f64,
    #[serde(default)]
    pub angular_error_deg: Option<f64>,
}

/// Compute PSNR, SSIM and ΔE for one pair.
pub fn evaluate_pair(
    name: impl Into<String>,
    pred: &SrgbImage,
    truth: &SrgbImage,
    formula: DeltaEFormula,
) -> Result<PairMetrics> {
    Ok(PairMetrics {
        name: name.into(),
        psnr_db: psnr(pred, truth)?,
        ssim: ssim(pred, truth)?,
        delta_e: delta_e(pred, truth, formula)?,
        angular_error_deg: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub delta_e: f64,
    pub angular_error_deg: Option<f64>,
    pub angular_error_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta_e_formula: DeltaEFormula,
    pub rows: Vec<PairMetrics>,
    pub aggregate: Aggregate,
    pub skipped: Vec<Skipped>,
}

impl MetricsReport {
    /// Aggregates are plain means over rows (NaN when there are none).
    pub fn new(formula: DeltaEFormula, rows: Vec<PairMetrics>, skipped: Vec<Skipped>) -> Self {
        let n = rows.len() as f64;
        let mean = |f: fn(&PairMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let angles: Vec<f64> = rows.iter().filter_map(|r| r.angular_error_deg).collect();
        let aggregate = Aggregate {
            count: rows.len(),
            psnr_db: mean(|r| r.psnr_db),
            ssim: mean(|r| r.ssim),
            delta_e: mean(|r| r.delta_e),
            angular_error_deg: (!angles.is_empty())
                .then(|| angles.iter().sum::<f64>() / angles.len() as f64),
            angular_error_count: angles.len(),
        };
        Self {
            delta_e_formula: formula,
            rows,
            aggregate,
            skipped,
        }
    }
}

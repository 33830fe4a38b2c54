//! Heteroscedastic Gaussian sensor noise: `I + N(0, β1·I + β2)` on
//! normalized intensities, and calibration of `(β1, β2)` from noisy/clean
//! pairs.

use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::raw_io::{read_json, write_json, RawImage};

/// Equal-width intensity bins used for screening and the initial fit.
pub const NOISE_BINS: usize = 64;
/// Bins with fewer samples are ignored.
pub const MIN_BIN_SAMPLES: u64 = 50;
/// Bins with a larger share of rail-clipped samples are ignored.
pub const MAX_CLIPPED_FRACTION: f64 = 1e-3;
const REFINE_ITERATIONS: usize = 12;

/// Shot (`beta1`) and read (`beta2`) noise parameters in normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub iso: u32,
    pub beta1: f64,
    pub beta2: f64,
}

impl NoiseParams {
    pub fn new(iso: u32, beta1: f64, beta2: f64) -> Result<Self> {
        let p = Self { iso, beta1, beta2 };
        p.validate()?;
        Ok(p)
    }

    pub fn noiseless(iso: u32) -> Self {
        Self {
            iso,
            beta1: 0.0,
            beta2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 >= 0.0
            && self.beta1.is_finite()
            && self.beta2 >= 0.0
            && self.beta2.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "noise parameters must be finite and nonnegative, got beta1={} beta2={}",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }

    /// Modeled variance at normalized intensity `v`.
    pub fn variance(&self, v: f64) -> f64 {
        (self.beta1 * v + self.beta2).max(0.0)
    }
}

/// Load a `noise_params.json` table.
pub fn load_noise_table(path: impl AsRef<Path>) -> Result<Vec<NoiseParams>> {
    let table: Vec<NoiseParams> = read_json(path)?;
    for p in &table {
        p.validate()?;
    }
    Ok(table)
}

pub fn save_noise_table(table: &[NoiseParams], path: impl AsRef<Path>) -> Result<()> {
    write_json(path, table)
}

/// Add noise to a mosaic.
///
/// One 64-bit key is drawn from `rng`; row `y` then uses its own ChaCha8
/// stream `y` under that key, so the output does not depend on the thread
/// count. Results are rounded and clamped to `[0, white_level]`.
pub fn add_noise<R: RngCore + ?Sized>(
    clean: &RawImage,
    params: &NoiseParams,
    rng: &mut R,
) -> Result<RawImage> {
    params.validate()?;
    let key = rng.next_u64();
    let meta = &clean.meta;
    let black = f64::from(meta.black_level);
    let white = f64::from(meta.white_level);
    let range = white - black;
    let w = clean.width();
    let src = clean.pixels();
    let mut out = vec![0u16; src.len()];
    par::rows_mut(&mut out, w)
        .zip(par::rows(src, w))
        .enumerate()
        .for_each(|(y, (dst, row))| {
            let mut row_rng = ChaCha8Rng::seed_from_u64(key);
            row_rng.set_stream(y as u64);
            for (o, &p) in dst.iter_mut().zip(row) {
                let v = (f64::from(p) - black) / range;
                let z: f64 = row_rng.sample(StandardNormal);
                let noisy = v + params.variance(v).sqrt() * z;
                *o = (noisy * range + black).round().clamp(0.0, white) as u16;
            }
        });
    RawImage::new(w, clean.height(), out, meta.clone())
}

/// Per digital level of the clean image: sample count, residual sums and
/// clipped count. Integer sums keep the reduction order-independent.
#[derive(Clone)]
struct LevelStats {
    count: Vec<u64>,
    sum: Vec<i64>,
    sum_sq: Vec<u64>,
    clipped: Vec<u64>,
}

impl LevelStats {
    fn new(levels: usize) -> Self {
        Self {
            count: vec![0; levels],
            sum: vec![0; levels],
            sum_sq: vec![0; levels],
            clipped: vec![0; levels],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for i in 0..self.count.len() {
            self.count[i] += other.count[i];
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
            self.clipped[i] += other.clipped[i];
        }
        self
    }
}

/// Fit `(β1, β2)` from aligned noisy/clean pairs that share black/white levels.
///
/// Residuals are grouped by clean intensity into [`NOISE_BINS`] equal-width
/// bins; bins with fewer than [`MIN_BIN_SAMPLES`] samples or more than
/// [`MAX_CLIPPED_FRACTION`] rail-clipped samples are dropped. The unbiased
/// per-bin variances are regressed on the bin centers by ordinary least
/// squares. That estimate then seeds an iteratively reweighted fit of the
/// per-level mean squared residual against the exact level intensity, with
/// weights `n / σ̂⁴`, which resolves the read-noise term even when shot
/// noise dominates every bin. Both parameters are clamped at 0.
///
/// The returned `iso` is taken from the first noisy image.
pub fn estimate_noise_params(pairs: &[(RawImage, RawImage)]) -> Result<NoiseParams> {
    let (first_noisy, first_clean) = pairs
        .first()
        .ok_or_else(|| Error::InvalidParameter("need at least one noisy/clean pair".into()))?;
    let black = first_clean.meta.black_level;
    let white = first_clean.meta.white_level;
    for (i, (noisy, clean)) in pairs.iter().enumerate() {
        if !noisy.is_compatible(clean) {
            return Err(Error::Mismatch(format!(
                "pair {i}: noisy and clean differ in size, CFA or levels"
            )));
        }
        if clean.meta.black_level != black || clean.meta.white_level != white {
            return Err(Error::Mismatch(format!(
                "pair {i}: levels differ from pair 0"
            )));
        }
    }
    let range = f64::from(white) - f64::from(black);
    let levels = usize::from(white - black) + 1;

    let mut stats = LevelStats::new(levels);
    for (noisy, clean) in pairs {
        let w = clean.width();
        let npx = noisy.pixels();
        let pair_stats = par::fold_rows(
            clean.pixels(),
            w,
            || LevelStats::new(levels),
            |mut acc, (y, row)| {
                let nrow = &npx[y * w..(y + 1) * w];
                for (&c, &n) in row.iter().zip(nrow) {
                    if c < black {
                        continue;
                    }
                    let level = usize::from(c - black);
                    let e = i64::from(n) - i64::from(c);
                    acc.count[level] += 1;
                    acc.sum[level] += e;
                    acc.sum_sq[level] += (e * e) as u64;
                    if (n == 0 || n == white) && n != c {
                        acc.clipped[level] += 1;
                    }
                }
                acc
            },
            LevelStats::merge,
        );
        stats = stats.merge(pair_stats);
    }

    let bin_of =
        |level: usize| ((level as f64 / range * NOISE_BINS as f64) as usize).min(NOISE_BINS - 1);
    let mut bin_count = [0u64; NOISE_BINS];
    let mut bin_sum = [0i128; NOISE_BINS];
    let mut bin_sum_sq = [0u128; NOISE_BINS];
    let mut bin_clipped = [0u64; NOISE_BINS];
    for level in 0..levels {
        let b = bin_of(level);
        bin_count[b] += stats.count[level];
        bin_sum[b] += i128::from(stats.sum[level]);
        bin_sum_sq[b] += u128::from(stats.sum_sq[level]);
        bin_clipped[b] += stats.clipped[level];
    }
    let usable: Vec<bool> = (0..NOISE_BINS)
        .map(|b| {
            bin_count[b] >= MIN_BIN_SAMPLES
                && (bin_clipped[b] as f64) <= MAX_CLIPPED_FRACTION * bin_count[b] as f64
        })
        .collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for b in (0..NOISE_BINS).filter(|&b| usable[b]) {
        let n = bin_count[b] as f64;
        let s = bin_sum[b] as f64;
        let ss = bin_sum_sq[b] as f64;
        let var = (ss - s * s / n) / (n - 1.0) / (range * range);
        xs.push((b as f64 + 0.5) / NOISE_BINS as f64);
        ys.push(var);
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "only {} usable intensity bins; need at least 2",
            xs.len()
        )));
    }
    let weights = vec![1.0; xs.len()];
    let (mut slope, mut intercept) = weighted_line_fit(&xs, &ys, &weights)
        .ok_or_else(|| Error::InvalidParameter("degenerate bin layout".into()))?;
    slope = slope.max(0.0);
    intercept = intercept.max(0.0);

    // Refinement on individual levels inside the usable bins.
    let mut lv = Vec::new();
    let mut ln = Vec::new();
    let mut lm2 = Vec::new();
    for level in (0..levels).filter(|&l| stats.count[l] > 0 && usable[bin_of(l)]) {
        let n = stats.count[level] as f64;
        lv.push(level as f64 / range);
        ln.push(n);
        lm2.push(stats.sum_sq[level] as f64 / n / (range * range));
    }
    // rounding to whole digital numbers bounds the observable variance
    let floor = 1.0 / (12.0 * range * range);
    let mut w = vec![0.0; lv.len()];
    for _ in 0..REFINE_ITERATIONS {
        for i in 0..lv.len() {
            let pred = (slope * lv[i] + intercept).max(floor);
            w[i] = ln[i] / (pred * pred);
        }
        match weighted_line_fit(&lv, &lm2, &w) {
            Some((s, c)) => {
                let done = (s - slope).abs() <= 1e-12 * s.abs().max(1e-300)
                    && (c - intercept).abs() <= 1e-12 * c.abs().max(1e-300);
                slope = s.max(0.0);
                intercept = c.max(0.0);
                if done {
                    break;
                }
            }
            None => break,
        }
    }

    Ok(NoiseParams {
        iso: first_noisy.meta.iso,
        beta1: slope,
        beta2: intercept,
    })
}

/// Weighted least-squares line `y = slope·x + intercept`.
fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<(f64, f64)> {
    let sw: f64 = ws.iter().sum();
    if sw.is_nan() || sw <= 0.0 {
        return None;
    }
    let mx = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    if sxx.is_nan() || sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

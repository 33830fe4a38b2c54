//! Night illuminant and brightness dictionaries.
//!
//! Illuminant chromaticities `(r/g, b/g)` measured from gray cards are fit
//! with a 2D Gaussian whose covariance uses the population (1/M) divisor.
//! Brightness values are fit with a Gaussian in the log domain.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayer::{normalize, Illuminant};
use crate::error::{Error, Result};
use crate::raw_io::{read_json, write_json, RawImage};

/// Diagonal loading added to the covariance before it is factored.
pub const COVARIANCE_EPSILON: f64 = 1e-9;

/// Redraw budget per illuminant sample.
pub const MAX_REJECTIONS: usize = 1000;

/// Axis-aligned rectangle in full-resolution pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Estimate the illuminant lighting a gray card inside `region`.
///
/// Only whole 2×2 CFA tiles inside the region are used and at least 2×2 of
/// them are required.
pub fn measure_gray_card(raw: &RawImage, region: Region) -> Result<Illuminant> {
    if region.x + region.width > raw.width() || region.y + region.height > raw.height() {
        return Err(Error::InvalidParameter(format!(
            "region {region:?} exceeds image {}x{}",
            raw.width(),
            raw.height()
        )));
    }
    let tx0 = region.x.div_ceil(2);
    let tx1 = (region.x + region.width) / 2;
    let ty0 = region.y.div_ceil(2);
    let ty1 = (region.y + region.height) / 2;
    if tx1 < tx0 + 2 || ty1 < ty0 + 2 {
        return Err(Error::InvalidParameter(format!(
            "region {region:?} covers fewer than 2x2 CFA tiles"
        )));
    }
    let stack = normalize(raw);
    let mut sums = [0.0f64; 4];
    for ty in ty0..ty1 {
        for tx in tx0..tx1 {
            for (s, v) in sums.iter_mut().zip(stack.get(tx, ty)) {
                *s += v;
            }
        }
    }
    let n = ((tx1 - tx0) * (ty1 - ty0)) as f64;
    let r = sums[0] / n;
    let g = (sums[1] + sums[2]) / (2.0 * n);
    let b = sums[3] / n;
    if r <= 0.0 || g <= 0.0 || b <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gray card channel means must be positive, got ({r}, {g}, {b})"
        )));
    }
    Illuminant::new(r, g, b)
}

/// Fitted 2D Gaussian over illuminant chromaticities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminantModel {
    pub points: Vec<[f64; 2]>,
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
}

/// Mean and population covariance of at least two chromaticity points.
pub fn fit_illuminant_gaussian(points: &[[f64; 2]]) -> Result<IlluminantModel> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 chromaticity points, got {}",
            points.len()
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite chromaticity".into()));
    }
    let m = points.len() as f64;
    let mut mu = [0.0; 2];
    for p in points {
        mu[0] += p[0];
        mu[1] += p[1];
    }
    mu = [mu[0] / m, mu[1] / m];
    let mut sigma = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mu[0], p[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                sigma[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut sigma {
        for v in row {
            *v /= m;
        }
    }
    Ok(IlluminantModel {
        points: points.to_vec(),
        mu,
        sigma,
    })
}

impl IlluminantModel {
    /// Fit from measured illuminants.
    pub fn from_illuminants(illums: &[Illuminant]) -> Result<Self> {
        let points: Vec<_> = illums.iter().map(Illuminant::chromaticity).collect();
        fit_illuminant_gaussian(&points)
    }

    /// True when Σ is singular (a line or a point cloud).
    pub fn is_degenerate(&self) -> bool {
        let s = &self.sigma;
        s[0][0] * s[1][1] - s[0][1] * s[1][0] <= f64::EPSILON * (s[0][0] * s[1][1]).abs()
    }

    /// Lower-triangular factor of Σ + εI.
    fn cholesky(&self) -> Result<[[f64; 2]; 2]> {
        let a = self.sigma[0][0] + COVARIANCE_EPSILON;
        let b = 0.5 * (self.sigma[0][1] + self.sigma[1][0]);
        let c = self.sigma[1][1] + COVARIANCE_EPSILON;
        if !(a > 0.0 && c > 0.0) {
            return Err(Error::Sampling(format!(
                "covariance {:?} is not positive semidefinite",
                self.sigma
            )));
        }
        let l11 = a.sqrt();
        let l21 = b / l11;
        let rest = c - l21 * l21;
        if rest < -COVARIANCE_EPSILON {
            return Err(Error::Sampling(format!(
                "covariance {:?} is not positive semidefinite",
                self.sigma
            )));
        }
        Ok([[l11, 0.0], [l21, rest.max(0.0).sqrt()]])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Draw `n` illuminants from N(μ, Σ + εI), redrawing nonpositive chromaticities.
pub fn sample_illuminants<R: Rng + ?Sized>(
    model: &IlluminantModel,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Illuminant>> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    let l = model.cholesky()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut drawn = None;
        for _ in 0..MAX_REJECTIONS {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let rg = model.mu[0] + l[0][0] * z0;
            let bg = model.mu[1] + l[1][0] * z0 + l[1][1] * z1;
            if rg > 0.0 && bg > 0.0 {
                drawn = Some(Illuminant::new(rg, 1.0, bg)?);
                break;
            }
        }
        out.push(drawn.ok_or_else(|| {
            Error::Sampling(format!(
                "{MAX_REJECTIONS} consecutive draws had a nonpositive chromaticity (mu = {:?})",
                model.mu
            ))
        })?);
    }
    Ok(out)
}

/// Log-normal model of nighttime mean brightness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrightnessModel {
    pub values: Vec<f64>,
    pub mu_log: f64,
    pub sigma_log: f64,
}

/// Fit a Gaussian to `ln d` (population variance).
pub fn fit_brightness(values: &[f64]) -> Result<BrightnessModel> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(
            "brightness dictionary is empty".into(),
        ));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "brightness values must lie in (0, 1], got {v}"
        )));
    }
    let m = values.len() as f64;
    let mu_log = values.iter().map(|v| v.ln()).sum::<f64>() / m;
    let var = values
        .iter()
        .map(|v| (v.ln() - mu_log).powi(2))
        .sum::<f64>()
        / m;
    Ok(BrightnessModel {
        values: values.to_vec(),
        mu_log,
        sigma_log: var.sqrt(),
    })
}

/// One draw of `exp(N(mu_log, sigma_log²))`, clamped to (0, 1].
pub fn sample_brightness<R: Rng + ?Sized>(model: &BrightnessModel, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (model.mu_log + model.sigma_log * z)
        .exp()
        .clamp(f64::MIN_POSITIVE, 1.0)
}

impl BrightnessModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raw_io::{CfaPattern, RawMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn card(planes: [u16; 4]) -> RawImage {
        let (w, h) = (8, 8);
        let mut px = vec![0u16; w * h];
        for y in 0..h {
            for x in 0..w {
                px[y * w + x] = planes[(y % 2) * 2 + x % 2];
            }
        }
        RawImage::new(w, h, px, RawMeta::new(CfaPattern::Rggb, 0, 1000)).unwrap()
    }

    fn full(raw: &RawImage) -> Region {
        Region {
            x: 0,
            y: 0,
            width: raw.width(),
            height: raw.height(),
        }
    }

    #[test]
    fn gray_card_planes_to_illuminant() {
        let raw = card([200, 400, 400, 100]);
        let il = measure_gray_card(&raw, full(&raw)).unwrap();
        assert!((il.r() - 0.5).abs() < 1e-15);
        assert!((il.b() - 0.25).abs() < 1e-15);
        let raw = card([300; 4]);
        assert_eq!(measure_gray_card(&raw, full(&raw)).unwrap().rgb(), [1.0; 3]);
    }

    #[test]
    fn gray_card_region_checks() {
        let raw = card([200, 400, 400, 100]);
        // 3x3 pixels at odd offset holds no whole tile pair
        let small = Region {
            x: 1,
            y: 1,
            width: 4,
            height: 4,
        };
        assert!(measure_gray_card(&raw, small).is_err());
        let out = Region {
            x: 4,
            y: 0,
            width: 8,
            height: 4,
        };
        assert!(measure_gray_card(&raw, out).is_err());
        let dark = card([0, 400, 400, 100]);
        assert!(measure_gray_card(&dark, full(&dark)).is_err());
    }

    #[test]
    fn fit_two_points() {
        let m = fit_illuminant_gaussian(&[[1.0, 1.0], [3.0, 3.0]]).unwrap();
        assert_eq!(m.mu, [2.0, 2.0]);
        assert_eq!(m.sigma, [[1.0, 1.0], [1.0, 1.0]]);
        assert!(m.is_degenerate());
    }

    #[test]
    fn fit_identical_points() {
        let m = fit_illuminant_gaussian(&[[0.7, 0.4]; 5]).unwrap();
        assert_eq!(m.mu, [0.7, 0.4]);
        assert_eq!(m.sigma, [[0.0; 2]; 2]);
    }

    #[test]
    fn fit_square() {
        let m = fit_illuminant_gaussian(&[[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]).unwrap();
        assert_eq!(m.mu, [1.0, 1.0]);
        assert_eq!(m.sigma, [[1.0, 0.0], [0.0, 1.0]]);
        assert!(!m.is_degenerate());
    }

    #[test]
    fn fit_needs_two() {
        assert!(fit_illuminant_gaussian(&[[1.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_covariance_samples_sit_on_mu() {
        let m = fit_illuminant_gaussian(&[[0.7, 0.4]; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for il in sample_illuminants(&m, 200, &mut rng).unwrap() {
            // only the 1e-9 diagonal loading perturbs the draw
            assert!((il.r() - 0.7).abs() < 1e-3);
            assert!((il.b() - 0.4).abs() < 1e-3);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let m = fit_illuminant_gaussian(&[[0.6, 0.3], [0.9, 0.5], [0.7, 0.2]]).unwrap();
        let a = sample_illuminants(&m, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_illuminants(&m, 10, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejection_budget_exhausts_on_negative_cloud() {
        let m = IlluminantModel {
            points: vec![],
            mu: [-5.0, -5.0],
            sigma: [[1e-4, 0.0], [0.0, 1e-4]],
        };
        let err = sample_illuminants(&m, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
    }

    #[test]
    fn brightness_constant_dictionary() {
        let m = fit_brightness(&[0.05; 4]).unwrap();
        assert_eq!(m.sigma_log, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let d = sample_brightness(&m, &mut rng);
            assert!((d - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn brightness_rejects_bad_values() {
        assert!(fit_brightness(&[]).is_err());
        assert!(fit_brightness(&[0.5, 0.0]).is_err());
        assert!(fit_brightness(&[0.5, 1.5]).is_err());
        assert!(fit_brightness(&[1.0]).is_ok());
    }

    #[test]
    fn brightness_samples_stay_in_unit_interval() {
        let m = BrightnessModel {
            values: vec![],
            mu_log: -0.1,
            sigma_log: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let d = sample_brightness(&m, &mut rng);
            assert!(d > 0.0 && d <= 1.0);
        }
    }
}

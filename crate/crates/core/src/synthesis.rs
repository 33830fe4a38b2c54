//! Day-to-night relighting.
//!
//! The clean night image is built in normalized stack space:
//!
//! 1. normalize the day mosaic and divide out the camera's day illuminant,
//! 2. dim by a global factor `d`,
//! 3. relight with a mixture of night illuminants, each weighted per pixel
//!    by `w_i * M_i(u, v)` where `M_i` is a peak-1 Gaussian (the ambient
//!    light uses an all-ones mask):
//!
//!    `I_r = Σ_i I_e * L_i * w_i M_i / Σ_i w_i M_i`
//!
//! 4. denormalize back to digital numbers,
//!
//! after which heteroscedastic noise is added to produce the noisy input.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayer::{denormalize, normalize, white_balance, BayerStack, Illuminant};
use crate::dictionaries::{
    sample_brightness, sample_illuminants, BrightnessModel, IlluminantModel,
};
use crate::error::{Error, Result};
use crate::noise::{add_noise, NoiseParams};
use crate::par;
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::raw_io::{RawImage, SceneRecord};

/// One night light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSource {
    pub color: Illuminant,
    pub strength: f64,
    /// `(x, y)` in stack pixel coordinates. Unused for the ambient light.
    pub center: [f64; 2],
    /// `(σx, σy)` in stack pixels. Unused for the ambient light.
    pub sigma: [f64; 2],
    pub is_ambient: bool,
}

impl LightSource {
    pub fn ambient(color: Illuminant, strength: f64) -> Self {
        Self {
            color,
            strength,
            center: [0.0; 2],
            sigma: [0.0; 2],
            is_ambient: true,
        }
    }

    pub fn local(color: Illuminant, strength: f64, center: [f64; 2], sigma: [f64; 2]) -> Self {
        Self {
            color,
            strength,
            center,
            sigma,
            is_ambient: false,
        }
    }
}

/// Ranges for light sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelightConfig {
    /// Inclusive light count range, ambient included.
    pub n_lights_min: usize,
    pub n_lights_max: usize,
    /// Uniform range of local light strengths.
    pub strength_min: f64,
    pub strength_max: f64,
    /// Centers avoid this fraction of each axis at both ends.
    pub boundary_fraction: f64,
    /// σ range as a fraction of the corresponding axis length.
    pub sigma_fraction_min: f64,
    pub sigma_fraction_max: f64,
    /// Ambient strength as a fraction of the mean local strength.
    pub ambient_fraction_min: f64,
    pub ambient_fraction_max: f64,
}

impl Default for RelightConfig {
    fn default() -> Self {
        Self {
            n_lights_min: 5,
            n_lights_max: 7,
            strength_min: 0.5,
            strength_max: 1.5,
            boundary_fraction: 0.10,
            sigma_fraction_min: 0.5,
            sigma_fraction_max: 1.0,
            ambient_fraction_min: 0.05,
            ambient_fraction_max: 0.10,
        }
    }
}

impl RelightConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("relight config: {m}")));
        let ordered = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo <= hi;
        if self.n_lights_min < 2 || self.n_lights_min > self.n_lights_max {
            return bad("need 2 <= n_lights_min <= n_lights_max");
        }
        if !ordered(self.strength_min, self.strength_max) || self.strength_min <= 0.0 {
            return bad("strength range must be positive and ordered");
        }
        if !(0.0..0.5).contains(&self.boundary_fraction) {
            return bad("boundary_fraction must lie in [0, 0.5)");
        }
        if !ordered(self.sigma_fraction_min, self.sigma_fraction_max)
            || self.sigma_fraction_min <= 0.0
        {
            return bad("sigma fraction range must be positive and ordered");
        }
        if !ordered(self.ambient_fraction_min, self.ambient_fraction_max)
            || self.ambient_fraction_min <= 0.0
        {
            return bad("ambient fraction range must be positive and ordered");
        }
        Ok(())
    }
}

/// Scale every value by the dimming factor `d ∈ (0, 1]`.
pub fn dim(stack: BayerStack, d: f64) -> Result<BayerStack> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "dimming factor must lie in (0, 1], got {d}"
        )));
    }
    Ok(stack.scale(d))
}

/// Separable spatial weight shared by all four planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    /// Horizontal profile, one entry per column.
    pub row: Vec<f64>,
    /// Vertical profile, one entry per row.
    pub col: Vec<f64>,
}

impl Mask {
    pub fn ones(width: usize, height: usize) -> Self {
        Self {
            row: vec![1.0; width],
            col: vec![1.0; height],
        }
    }

    #[inline]
    pub fn value(&self, u: usize, v: usize) -> f64 {
        self.row[u] * self.col[v]
    }

    pub fn width(&self) -> usize {
        self.row.len()
    }

    pub fn height(&self) -> usize {
        self.col.len()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        self.col
            .iter()
            .flat_map(|c| self.row.iter().map(move |r| r * c))
            .collect()
    }
}

/// Peak-1 axis-aligned Gaussian over a `width × height` stack.
pub fn gaussian_mask(
    width: usize,
    height: usize,
    center: [f64; 2],
    sigma: [f64; 2],
) -> Result<Mask> {
    if !(sigma[0] > 0.0 && sigma[1] > 0.0) || !center.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Gaussian mask needs positive sigmas and a finite center, got {center:?} / {sigma:?}"
        )));
    }
    let profile = |n: usize, c: f64, s: f64| -> Vec<f64> {
        let k = 1.0 / (2.0 * s * s);
        (0..n)
            .map(|i| {
                let t = i as f64 - c;
                (-(t * t) * k).exp()
            })
            .collect()
    };
    Ok(Mask {
        row: profile(width, center[0], sigma[0]),
        col: profile(height, center[1], sigma[1]),
    })
}

/// Sample a scene's lights. Index 0 is always the ambient light.
///
/// Draw order: light count, all colors, then per local light strength,
/// center x, center y, σx, σy, and finally the ambient fraction.
pub fn sample_light_sources<R: Rng + ?Sized>(
    cfg: &RelightConfig,
    model: &IlluminantModel,
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Vec<LightSource>> {
    cfg.validate()?;
    let n = rng.random_range(cfg.n_lights_min..=cfg.n_lights_max);
    let colors = sample_illuminants(model, n, rng)?;
    let (w, h) = (width as f64, height as f64);
    let b = cfg.boundary_fraction;
    let mut locals = Vec::with_capacity(n - 1);
    for color in &colors[1..] {
        let strength = rng.random_range(cfg.strength_min..=cfg.strength_max);
        let cx = rng.random_range(b * w..=(1.0 - b) * w);
        let cy = rng.random_range(b * h..=(1.0 - b) * h);
        let sx = rng.random_range(cfg.sigma_fraction_min..=cfg.sigma_fraction_max) * w;
        let sy = rng.random_range(cfg.sigma_fraction_min..=cfg.sigma_fraction_max) * h;
        locals.push(LightSource::local(*color, strength, [cx, cy], [sx, sy]));
    }
    let mean_local = locals.iter().map(|l| l.strength).sum::<f64>() / locals.len() as f64;
    let frac = rng.random_range(cfg.ambient_fraction_min..=cfg.ambient_fraction_max);
    let mut lights = Vec::with_capacity(n);
    lights.push(LightSource::ambient(colors[0], frac * mean_local));
    lights.extend(locals);
    Ok(lights)
}

fn check_lights(lights: &[LightSource]) -> Result<()> {
    match lights.first() {
        None => Err(Error::InvalidParameter(
            "relight needs at least one light".into(),
        )),
        Some(l) if !l.is_ambient => Err(Error::InvalidParameter(
            "the first light must be the ambient light".into(),
        )),
        _ => {
            if let Some(l) = lights[1..].iter().find(|l| l.is_ambient) {
                return Err(Error::InvalidParameter(format!(
                    "only one ambient light is allowed, found another: {l:?}"
                )));
            }
            if let Some(l) = lights
                .iter()
                .find(|l| !(l.strength > 0.0 && l.strength.is_finite()))
            {
                return Err(Error::InvalidParameter(format!(
                    "light strengths must be positive, got {}",
                    l.strength
                )));
            }
            Ok(())
        }
    }
}

/// Relight a (white-balanced, dimmed) stack with a mixture of lights.
///
/// Per pixel the weights `a_i = w_i M_i / Σ_j w_j M_j` are formed first and
/// then `I_r = I_e * Σ_i a_i L_i`, so a lone light or a common color reduces
/// to a plain illuminant multiply.
pub fn relight(mut stack: BayerStack, lights: &[LightSource]) -> Result<BayerStack> {
    check_lights(lights)?;
    let (hw, hh) = (stack.half_width(), stack.half_height());
    let masks = lights
        .iter()
        .map(|l| {
            if l.is_ambient {
                Ok(Mask::ones(hw, hh))
            } else {
                gaussian_mask(hw, hh, l.center, l.sigma)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let strengths: Vec<f64> = lights.iter().map(|l| l.strength).collect();
    let colors: Vec<[f64; 4]> = lights.iter().map(|l| l.color.plane_factors()).collect();

    par::rows_mut(stack.pixels_mut(), hw)
        .enumerate()
        .for_each(|(v, row)| {
            let mut weights = vec![0.0; lights.len()];
            for (u, px) in row.iter_mut().enumerate() {
                let mut den = 0.0;
                for (i, wt) in weights.iter_mut().enumerate() {
                    *wt = strengths[i] * masks[i].value(u, v);
                    den += *wt;
                }
                assert!(den > 0.0, "relight weight sum must be positive");
                let mut factor = [0.0; 4];
                for (wt, color) in weights.iter().zip(&colors) {
                    let a = wt / den;
                    for (f, c) in factor.iter_mut().zip(color) {
                        *f += a * c;
                    }
                }
                for (x, f) in px.iter_mut().zip(factor) {
                    *x *= f;
                }
            }
        });
    Ok(stack)
}

/// Unweighted mean of the light colors, green renormalized to 1.
///
/// Components are summed in sorted order, making the result exactly
/// independent of the light order.
pub fn effective_wb(lights: &[LightSource]) -> Result<Illuminant> {
    if lights.is_empty() {
        return Err(Error::InvalidParameter(
            "effective WB needs at least one light".into(),
        ));
    }
    let mean = |f: fn(&Illuminant) -> f64| {
        let mut v: Vec<f64> = lights.iter().map(|l| f(&l.color)).collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / v.len() as f64
    };
    Illuminant::new(
        mean(Illuminant::r),
        mean(Illuminant::g),
        mean(Illuminant::b),
    )
}

/// A synthesized clean/noisy pair and the record that replays it.
#[derive(Debug, Clone, PartialEq)]
pub struct NightScene {
    pub clean: RawImage,
    pub noisy: RawImage,
    pub record: SceneRecord,
}

/// Generator for the scene draws (brightness, lights).
fn scene_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the noise key; a separate stream so the noise does not
/// depend on how many draws the scene sampling consumed.
fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Run the whole pipeline on one day capture.
///
/// The day illuminant comes from the capture's white-balance gains. Both
/// outputs carry the effective night white balance and the noise ISO.
pub fn synthesize_night(
    day: &RawImage,
    illum_model: &IlluminantModel,
    bright_model: &BrightnessModel,
    cfg: &RelightConfig,
    noise: &NoiseParams,
    seed: u64,
    source: impl Into<PathBuf>,
) -> Result<NightScene> {
    let mut rng = scene_rng(seed);
    let d = sample_brightness(bright_model, &mut rng);
    let lights = sample_light_sources(
        cfg,
        illum_model,
        day.width() / 2,
        day.height() / 2,
        &mut rng,
    )?;
    let record = SceneRecord {
        source_day_image: source.into(),
        seed,
        dim_factor: d,
        effective_wb: effective_wb(&lights)?,
        light_sources: lights,
        noise_params_used: noise.clone(),
    };
    let (clean, noisy) = replay(day, &record)?;
    Ok(NightScene {
        clean,
        noisy,
        record,
    })
}

/// Rebuild `(clean, noisy)` from a record and the same day image.
pub fn replay(day: &RawImage, record: &SceneRecord) -> Result<(RawImage, RawImage)> {
    let clean = synthesize_clean(day, record.dim_factor, &record.light_sources)?;
    let mut rng = noise_rng(record.seed);
    let noisy = add_noise(&clean, &record.noise_params_used, &mut rng)?;
    let mut meta = clean.meta.clone();
    meta.iso = record.noise_params_used.iso;
    let clean = RawImage::new(
        clean.width(),
        clean.height(),
        clean.into_pixels(),
        meta.clone(),
    )?;
    let noisy = RawImage::new(noisy.width(), noisy.height(), noisy.into_pixels(), meta)?;
    Ok((clean, noisy))
}

/// Clean night mosaic for an explicit dimming factor and light list.
///
/// The output white-balance gains are those of [`effective_wb`].
pub fn synthesize_clean(day: &RawImage, d: f64, lights: &[LightSource]) -> Result<RawImage> {
    let day_illum = day.meta.illuminant()?;
    let stack = white_balance(normalize(day), &day_illum);
    let stack = relight(dim(stack, d)?, lights)?;
    let mut meta = day.meta.clone();
    meta.set_illuminant(&effective_wb(lights)?);
    denormalize(&stack, &meta)
}

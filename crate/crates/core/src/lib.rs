//! Synthesis of aligned nighttime raw image pairs from daytime captures.
//!
//! A day Bayer capture is normalized, stripped of its day illuminant,
//! dimmed, relit by a mixture of spatially varying night lights sampled
//! from measured dictionaries, and denormalized into a clean night mosaic.
//! Heteroscedastic shot/read noise then yields the matching noisy input.
//!
//! Alongside the synthesis pipeline the crate carries the supporting
//! pieces: a PGM+JSON raw container, gray-card and brightness calibration,
//! noise-parameter estimation, burst averaging for ground truth, a minimal
//! ISP for sRGB previews, and PSNR/SSIM/ΔE/angular-error metrics.
//!
//! Pixel loops run on rayon when the default `parallel` feature is on.
//! Results do not depend on the thread count.

pub mod bayer;
pub mod dictionaries;
pub mod error;
pub mod isp;
pub mod metrics;
pub mod noise;
mod par;
pub mod raw_io;
pub mod synthesis;

pub use bayer::{
    apply_illuminant, average_burst, denormalize, mean_intensity, normalize, white_balance,
    BayerStack, Illuminant,
};
pub use dictionaries::{
    fit_brightness, fit_illuminant_gaussian, measure_gray_card, sample_brightness,
    sample_illuminants, BrightnessModel, IlluminantModel, Region,
};
pub use error::{Error, Result};
pub use isp::{apply_ccm, demosaic, gamma_encode, render, LinearRgb, SrgbImage};
pub use metrics::{angular_error, delta_e, psnr, ssim, DeltaEFormula, MetricsReport};
pub use noise::{add_noise, estimate_noise_params, NoiseParams};
pub use par::is_parallel;
pub use raw_io::{
    read_manifest, read_png, read_raw, write_manifest, write_png, write_raw, CfaPattern, RawImage,
    RawMeta, SceneRecord,
};
pub use synthesis::{
    dim, effective_wb, gaussian_mask, relight, replay, sample_light_sources, synthesize_night,
    LightSource, Mask, NightScene, RelightConfig,
};

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nightsynth::noise::save_noise_table;
use nightsynth::{
    fit_brightness, fit_illuminant_gaussian, write_raw, CfaPattern, NoiseParams, RawImage, RawMeta,
};

pub const BLACK: u16 = 512;
pub const WHITE: u16 = 16383;

/// Smooth, textured day capture with a warm white balance.
pub fn day_image(width: usize, height: usize, phase: f64) -> RawImage {
    let mut meta = RawMeta::new(CfaPattern::Rggb, BLACK, WHITE);
    meta.wb_gains = [2.0, 1.0, 1.6];
    meta.iso = 50;
    let range = f64::from(WHITE - BLACK);
    let tint = [0.5, 1.0, 1.0, 0.62];
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = y as f64 / height as f64;
        for x in 0..width {
            let fx = x as f64 / width as f64;
            let base = 0.35
                + 0.25 * (6.0 * fx + phase).sin() * (4.0 * fy).cos()
                + 0.1 * ((x * 7 + y * 13) % 17) as f64 / 17.0;
            let c = (y % 2) * 2 + (x % 2);
            let v = (base * tint[c]).clamp(0.0, 1.0);
            pixels.push(BLACK + (v * range).round() as u16);
        }
    }
    RawImage::new(width, height, pixels, meta).unwrap()
}

/// Write dictionaries and a config into `dir`; returns the config path.
pub fn write_setup(dir: &Path, n_lights: (usize, usize), seed: u64) -> PathBuf {
    let illum =
        fit_illuminant_gaussian(&[[0.55, 0.35], [0.8, 0.3], [0.65, 0.55], [0.9, 0.45]]).unwrap();
    illum.save(dir.join("illuminants.json")).unwrap();
    let bright = fit_brightness(&[0.02, 0.03, 0.05, 0.08]).unwrap();
    bright.save(dir.join("brightness.json")).unwrap();
    let table = [
        NoiseParams::new(800, 0.002, 2e-5).unwrap(),
        NoiseParams::new(3200, 0.01, 1e-4).unwrap(),
    ];
    save_noise_table(&table, dir.join("noise_params.json")).unwrap();
    let config = serde_json::json!({
        "illuminants": "illuminants.json",
        "brightness": "brightness.json",
        "noise_params": "noise_params.json",
        "iso": 3200,
        "seed": seed,
        "relight": { "n_lights_min": n_lights.0, "n_lights_max": n_lights.1 },
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

/// Write `n` day captures named `day_00.pgm`, `day_01.pgm`, ...
pub fn write_days(dir: &Path, n: usize, width: usize, height: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = day_image(width, height, i as f64 * 0.7);
        write_raw(&img, dir.join(format!("day_{i:02}.pgm"))).unwrap();
    }
}

/// All files under `dir` as sorted (name, bytes) pairs.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#![allow(clippy::needless_range_loop)]

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nightsynth::bayer::normalize_dn;
use nightsynth::isp::SrgbImage;
use nightsynth::metrics::{luma, ssim_kernel};
use nightsynth::{
    add_noise, angular_error, apply_illuminant, denormalize, estimate_noise_params,
    fit_illuminant_gaussian, normalize, psnr, read_raw, relight, sample_illuminants,
    sample_light_sources, ssim, write_raw, BayerStack, CfaPattern, Illuminant, LightSource,
    NoiseParams, RawImage, RawMeta, RelightConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_illuminant(rng: &mut impl Rng) -> Illuminant {
    Illuminant::new(rng.random_range(0.2..2.0), 1.0, rng.random_range(0.2..2.0)).unwrap()
}

fn random_stack(rng: &mut impl Rng, w: usize, h: usize) -> BayerStack {
    let data = (0..w * h)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.0..1.0)))
        .collect();
    BayerStack::new(w, h, data, CfaPattern::Rggb).unwrap()
}

fn random_lights(rng: &mut impl Rng, n: usize, w: usize, h: usize) -> Vec<LightSource> {
    let mut lights = vec![LightSource::ambient(
        random_illuminant(rng),
        rng.random_range(0.01..0.2),
    )];
    for _ in 1..n {
        lights.push(LightSource::local(
            random_illuminant(rng),
            rng.random_range(0.5..1.5),
            [
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
            ],
            [
                rng.random_range(0.5..1.0) * w as f64,
                rng.random_range(0.5..1.0) * h as f64,
            ],
        ));
    }
    lights
}

fn max_abs_diff(a: &BayerStack, b: &BayerStack) -> f64 {
    a.pixels()
        .iter()
        .flatten()
        .zip(b.pixels().iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Scalar per-pixel evaluation of the relighting mixture.
fn relight_oracle(stack: &BayerStack, lights: &[LightSource]) -> BayerStack {
    let (w, h) = (stack.half_width(), stack.half_height());
    let mut data = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let px = stack.get(u, v);
            let mut out = [0.0; 4];
            for (c, o) in out.iter_mut().enumerate() {
                let mut num = 0.0;
                let mut den = 0.0;
                for l in lights {
                    let m = if l.is_ambient {
                        1.0
                    } else {
                        let dx = u as f64 - l.center[0];
                        let dy = v as f64 - l.center[1];
                        (-(dx * dx) / (2.0 * l.sigma[0] * l.sigma[0])
                            - (dy * dy) / (2.0 * l.sigma[1] * l.sigma[1]))
                            .exp()
                    };
                    let color = [l.color.r(), l.color.g(), l.color.g(), l.color.b()][c];
                    num += l.strength * m * color;
                    den += l.strength * m;
                }
                *o = px[c] * num / den;
            }
            data.push(out);
        }
    }
    BayerStack::new(w, h, data, stack.cfa_origin()).unwrap()
}

fn c1_relight_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let stack = random_stack(&mut rng, 4, 4);
        let n = rng.random_range(1..=7);
        let lights = random_lights(&mut rng, n, 4, 4);
        let got = relight(stack.clone(), &lights).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&got, &relight_oracle(&stack, &lights)));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-10, || format!("max error {worst:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max error {worst:.1e}, {secs:.3} s"))
}

fn c2_relight_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut common, mut rescale) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let stack = random_stack(&mut rng, 6, 5);
        let color = random_illuminant(&mut rng);
        let single = [LightSource::ambient(color, rng.random_range(0.01..2.0))];
        let got = relight(stack.clone(), &single).unwrap();
        ensure(got == apply_illuminant(stack.clone(), &color), || {
            "single ambient light differs from apply_illuminant".into()
        })?;

        let n = rng.random_range(2..=7);
        let mut lights = random_lights(&mut rng, n, 6, 5);
        for l in &mut lights {
            l.color = color;
        }
        let got = relight(stack.clone(), &lights).unwrap();
        common = common.max(max_abs_diff(&got, &apply_illuminant(stack.clone(), &color)));

        let lights = random_lights(&mut rng, n, 6, 5);
        let k = rng.random_range(0.01..100.0);
        let scaled: Vec<_> = lights
            .iter()
            .map(|l| LightSource {
                strength: l.strength * k,
                ..l.clone()
            })
            .collect();
        let a = relight(stack.clone(), &lights).unwrap();
        let b = relight(stack, &scaled).unwrap();
        rescale = rescale.max(max_abs_diff(&a, &b));
    }
    ensure(common <= 1e-12, || format!("common-color error {common:e}"))?;
    ensure(rescale <= 1e-12, || format!("rescaling error {rescale:e}"))?;
    Ok(format!(
        "single ambient exact, common color {common:.1e}, rescaling {rescale:.1e}"
    ))
}

fn c3_covariance_fit() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = rng.random_range(2..40);
        let pts: Vec<[f64; 2]> = (0..m)
            .map(|_| [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)])
            .collect();
        let fit = fit_illuminant_gaussian(&pts).unwrap();
        let mut mu = [0.0; 2];
        for p in &pts {
            for k in 0..2 {
                mu[k] += p[k] / m as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in &pts {
                    s += (p[i] - mu[i]) * (p[j] - mu[j]);
                }
                worst = worst.max((fit.sigma[i][j] - s / m as f64).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max covariance error {worst:e}"))?;
    let two = fit_illuminant_gaussian(&[[1.0, 1.0], [3.0, 3.0]]).unwrap();
    ensure(
        two.mu == [2.0, 2.0] && two.sigma == [[1.0, 1.0], [1.0, 1.0]],
        || format!("two-point case gave mu {:?}, sigma {:?}", two.mu, two.sigma),
    )?;
    Ok(format!("max error {worst:.1e}, two-point case exact"))
}

fn c4_sampling_statistics() -> Result<String, String> {
    let model =
        fit_illuminant_gaussian(&[[0.55, 0.35], [0.8, 0.3], [0.65, 0.55], [0.9, 0.45]]).unwrap();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = sample_illuminants(&model, n, &mut rng).map_err(|e| e.to_string())?;
    ensure(
        draws
            .iter()
            .all(|d| d.r() > 0.0 && d.b() > 0.0 && d.g() == 1.0),
        || "a draw was not strictly positive".into(),
    )?;
    let pts: Vec<[f64; 2]> = draws.iter().map(|d| d.chromaticity()).collect();
    let nf = n as f64;
    let mean = [0, 1].map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / nf);
    let mut cov = [[0.0; 2]; 2];
    for p in &pts {
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / nf;
            }
        }
    }
    for k in 0..2 {
        let band = 3.0 * model.sigma[k][k].sqrt() / nf.sqrt();
        let err = (mean[k] - model.mu[k]).abs();
        ensure(err <= band, || {
            format!("mean[{k}] off by {err:e} (band {band:e})")
        })?;
    }
    let frob = |m: [[f64; 2]; 2]| m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let diff = [0, 1].map(|i| [0, 1].map(|j| cov[i][j] - model.sigma[i][j]));
    let rel = frob(diff) / frob(model.sigma);
    ensure(rel < 0.05, || format!("covariance relative error {rel:.4}"))?;
    Ok(format!("covariance relative error {:.2}%", rel * 100.0))
}

fn c5_procedural_constants() -> Result<String, String> {
    let model =
        fit_illuminant_gaussian(&[[0.55, 0.35], [0.8, 0.3], [0.65, 0.55], [0.9, 0.45]]).unwrap();
    let cfg = RelightConfig::default();
    let (w, h) = (100usize, 75usize);
    let (wf, hf) = (w as f64, h as f64);
    let mut violations = Vec::new();
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lights = sample_light_sources(&cfg, &model, w, h, &mut rng).unwrap();
        if !(5..=7).contains(&lights.len()) {
            violations.push(format!("seed {seed}: {} lights", lights.len()));
        }
        if !lights[0].is_ambient || lights[1..].iter().any(|l| l.is_ambient) {
            violations.push(format!("seed {seed}: ambient light misplaced"));
        }
        let locals = &lights[1..];
        let mean = locals.iter().map(|l| l.strength).sum::<f64>() / locals.len() as f64;
        let frac = lights[0].strength / mean;
        if !(0.05 - 1e-12..=0.10 + 1e-12).contains(&frac) {
            violations.push(format!("seed {seed}: ambient fraction {frac}"));
        }
        for l in locals {
            let [cx, cy] = l.center;
            let [sx, sy] = l.sigma;
            if !(0.1 * wf..=0.9 * wf).contains(&cx) || !(0.1 * hf..=0.9 * hf).contains(&cy) {
                violations.push(format!("seed {seed}: center {:?}", l.center));
            }
            if !(0.5 * wf..=wf).contains(&sx) || !(0.5 * hf..=hf).contains(&sy) {
                violations.push(format!("seed {seed}: sigma {:?}", l.sigma));
            }
        }
    }
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    Ok("1000 scenes, 0 violations".into())
}

fn ramp(width: usize, height: usize, black: u16, white: u16) -> RawImage {
    let n = width * height;
    let range = f64::from(white - black);
    let pixels = (0..n)
        .map(|i| black + (i as f64 / (n - 1) as f64 * range).round() as u16)
        .collect();
    RawImage::new(
        width,
        height,
        pixels,
        RawMeta::new(CfaPattern::Rggb, black, white),
    )
    .unwrap()
}

fn c6_noise_closed_loop() -> Result<String, String> {
    let clean = ramp(4096, 4096, 8192, 65535);
    let mut report = Vec::new();
    for (i, (b1, b2)) in [(0.01, 1e-4), (0.001, 1e-3), (0.05, 1e-5)]
        .into_iter()
        .enumerate()
    {
        let params = NoiseParams::new(100, b1, b2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60 + i as u64);
        let noisy = add_noise(&clean, &params, &mut rng).unwrap();
        let est = estimate_noise_params(&[(noisy, clean.clone())]).map_err(|e| e.to_string())?;
        let e1 = (est.beta1 - b1).abs() / b1;
        let e2 = (est.beta2 - b2).abs() / b2;
        ensure(e1 < 0.1 && e2 < 0.1, || {
            format!(
                "({b1}, {b2}) recovered as ({:.4e}, {:.4e})",
                est.beta1, est.beta2
            )
        })?;
        report.push(format!("{:.1}%/{:.1}%", e1 * 100.0, e2 * 100.0));
    }

    let (black, white) = (64u16, 65535u16);
    let v = 0.25;
    let dn = black + (v * f64::from(white - black)).round() as u16;
    let meta = RawMeta::new(CfaPattern::Rggb, black, white);
    let flat = RawImage::filled(512, 512, dn, meta).unwrap();
    let params = NoiseParams::new(100, 0.01, 1e-4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let noisy = add_noise(&flat, &params, &mut rng).unwrap();
    let vals: Vec<f64> = noisy
        .pixels()
        .iter()
        .map(|&p| normalize_dn(f64::from(p), f64::from(black), f64::from(white)))
        .collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let expect = params.variance(normalize_dn(
        f64::from(dn),
        f64::from(black),
        f64::from(white),
    ));
    let rel = (var - expect).abs() / expect;
    ensure(rel < 0.05, || format!("variance {var:e} vs {expect:e}"))?;
    Ok(format!(
        "relative errors (beta1/beta2) {}; variance at 0.25 off by {:.2}%",
        report.join(", "),
        rel * 100.0
    ))
}

fn synthesize_cmd(day: &Path, config: &Path, out: &Path, jobs: usize) -> Result<f64, String> {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_nightsynth"))
        .arg("synthesize")
        .arg(day)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--jobs")
        .arg(jobs.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    if !output.status.success() {
        return Err(format!(
            "synthesize failed: {}",
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(secs)
}

fn c7_determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let day = tmp.path().join("day");
    common::write_days(&day, 4, 96, 64);
    let config = common::write_setup(tmp.path(), (5, 7), 11);
    let runs = [(1, "a"), (1, "b"), (4, "c")];
    let mut snaps = Vec::new();
    for (jobs, name) in runs {
        let out = tmp.path().join(name);
        synthesize_cmd(&day, &config, &out, jobs)?;
        snaps.push(common::snapshot(&out));
    }
    let files = snaps[0].len();
    ensure(files == 4 * 6 + 1, || {
        format!("expected 25 outputs, found {files}")
    })?;
    ensure(snaps[0] == snaps[1], || "two --jobs 1 runs differ".into())?;
    ensure(snaps[0] == snaps[2], || {
        "--jobs 1 and --jobs 4 differ".into()
    })?;
    Ok(format!(
        "{files} files byte-identical across 3 runs (jobs 1, 1, 4)"
    ))
}

fn random_raw(rng: &mut impl Rng) -> RawImage {
    let cfa = [
        CfaPattern::Rggb,
        CfaPattern::Bggr,
        CfaPattern::Grbg,
        CfaPattern::Gbrg,
    ][rng.random_range(0..4)];
    let black = rng.random_range(0..2048u16);
    let white = rng.random_range(black + 1..=u16::MAX);
    let mut meta = RawMeta::new(cfa, black, white);
    meta.wb_gains = [rng.random_range(0.2..4.0), 1.0, rng.random_range(0.2..4.0)];
    meta.iso = rng.random_range(50..12800);
    meta.exposure_time = rng.random_range(0.0..1.0);
    if rng.random_bool(0.5) {
        let mut ccm = [0.0; 9];
        for row in ccm.chunks_mut(3) {
            row[0] = rng.random_range(-0.5..2.0);
            row[1] = rng.random_range(-0.5..0.5);
            row[2] = 1.0 - row[0] - row[1];
        }
        meta.ccm = Some(ccm);
    }
    let w = 2 * rng.random_range(1..12);
    let h = 2 * rng.random_range(1..12);
    let pixels = (0..w * h)
        .map(|_| rng.random_range(black..=white))
        .collect();
    RawImage::new(w, h, pixels, meta).unwrap()
}

fn c8_round_trips() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..100 {
        let img = random_raw(&mut rng);
        let path = tmp.path().join(format!("r{i}.pgm"));
        write_raw(&img, &path).map_err(|e| e.to_string())?;
        let back = read_raw(&path).map_err(|e| e.to_string())?;
        ensure(back == img, || format!("file round trip {i} differs"))?;
        let again = denormalize(&normalize(&img), &img.meta).map_err(|e| e.to_string())?;
        ensure(again == img, || {
            format!("denormalize(normalize) {i} differs")
        })?;
    }
    Ok("100 random images bit-exact through file and normalize round trips".into())
}

fn image(w: usize, h: usize, f: impl Fn(usize, usize, usize) -> u8) -> SrgbImage {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data.push(f(x, y, c));
            }
        }
    }
    SrgbImage::new(w, h, data).unwrap()
}

/// SSIM with explicit 2D windows and no shared sums.
fn ssim_direct(a: &SrgbImage, b: &SrgbImage) -> f64 {
    let (w, h) = (a.width(), a.height());
    let (x, y) = (luma(a), luma(b));
    let g = ssim_kernel();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let k = g[i] * g[j];
                    let idx = (oy + j) * w + ox + i;
                    mx += k * x[idx];
                    my += k * y[idx];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for j in 0..11 {
                for i in 0..11 {
                    let k = g[i] * g[j];
                    let idx = (oy + j) * w + ox + i;
                    vx += k * (x[idx] - mx).powi(2);
                    vy += k * (y[idx] - my).powi(2);
                    cxy += k * (x[idx] - mx) * (y[idx] - my);
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn c9_metrics() -> Result<String, String> {
    let base = image(16, 12, |x, y, c| (40 + 3 * x + 2 * y + 30 * c) as u8);
    let plus = image(16, 12, |x, y, c| (41 + 3 * x + 2 * y + 30 * c) as u8);
    let p1 = psnr(&base, &plus).unwrap();
    ensure((p1 - 48.1308).abs() < 1e-3, || {
        format!("uniform error PSNR {p1}")
    })?;
    let checker = image(16, 12, |x, y, _| if (x + y) % 2 == 0 { 255 } else { 0 });
    let black = image(16, 12, |_, _, _| 0);
    let p2 = psnr(&checker, &black).unwrap();
    ensure((p2 - 3.0103).abs() < 1e-3, || {
        format!("checkerboard PSNR {p2}")
    })?;

    let five = nightsynth::metrics::cie76(
        nightsynth::metrics::Lab {
            l: 50.0,
            a: 10.0,
            b: -20.0,
        },
        nightsynth::metrics::Lab {
            l: 55.0,
            a: 10.0,
            b: -20.0,
        },
    );
    ensure((five - 5.0).abs() < 1e-12, || {
        format!("L* shift of 5 gave {five}")
    })?;

    let ang = angular_error([1.0, 1.0, 1.0], [1.0, 1.0, 0.0]).unwrap();
    ensure((ang - 35.2644).abs() < 1e-3, || {
        format!("angular error {ang}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(11..40), rng.random_range(11..40));
        let data_a: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
        let data_b: Vec<u8> = data_a
            .iter()
            .map(|&v| (i16::from(v) + rng.random_range(-40..=40)).clamp(0, 255) as u8)
            .collect();
        let a = SrgbImage::new(w, h, data_a).unwrap();
        let b = SrgbImage::new(w, h, data_b).unwrap();
        worst = worst.max((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs());
    }
    ensure(worst <= 1e-8, || {
        format!("SSIM differs from direct windows by {worst:e}")
    })?;
    Ok(format!(
        "PSNR {p1:.2}/{p2:.2} dB, ΔE shift 5.0, angle {ang:.2}°, SSIM max error {worst:.1e}"
    ))
}

fn c10_performance() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let day = tmp.path().join("day");
    common::write_days(&day, 1, 4032, 3024);
    let config = common::write_setup(tmp.path(), (6, 6), 5);
    let secs = synthesize_cmd(&day, &config, &tmp.path().join("out"), 1)?;
    ensure(secs < 3.0, || format!("took {secs:.2} s"))?;
    Ok(format!(
        "4032x3024, 6 lights, noise on, --jobs 1: {secs:.2} s"
    ))
}

fn run(check: Check) -> Result<String, String> {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let concurrent: [(&str, Check); 9] = [
        ("relight matches scalar oracle", c1_relight_oracle),
        ("relight identities", c2_relight_identities),
        ("covariance fit", c3_covariance_fit),
        ("illuminant sampling statistics", c4_sampling_statistics),
        ("light sampling constants", c5_procedural_constants),
        ("noise closed loop", c6_noise_closed_loop),
        ("end-to-end determinism", c7_determinism),
        ("round trips", c8_round_trips),
        ("metrics", c9_metrics),
    ];
    let suite_start = Instant::now();
    let mut results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = concurrent
            .iter()
            .map(|(name, check)| (*name, s.spawn(move || run(*check))))
            .collect();
        handles
            .into_iter()
            .map(|(name, h)| (name, h.join().unwrap_or_else(|_| Err("panicked".into()))))
            .collect()
    });
    // timed alone so other checks do not compete for the core
    results.push(("synthesize performance", run(c10_performance)));

    let mut failed = 0;
    for (i, (name, r)) in results.iter().enumerate() {
        match r {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed in {:.1} s",
        results.len() - failed,
        results.len(),
        suite_start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

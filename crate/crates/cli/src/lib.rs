//! Batch workflows behind the `nightsynth` binary.
//!
//! Each command reads a directory or manifest, reports per-file problems
//! through [`diag`], and writes its results under the output directory.

pub mod config;
pub mod diag;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{anyhow, bail, Context};
use nightsynth::dictionaries::Region;
use nightsynth::metrics::{evaluate_pair, PairMetrics, Skipped};
use nightsynth::noise::{load_noise_table, save_noise_table};
use nightsynth::raw_io::{sidecar_path, write_atomic};
use nightsynth::{
    average_burst, mean_intensity, measure_gray_card, normalize, read_png, read_raw, render,
    write_manifest, write_png, write_raw, BrightnessModel, DeltaEFormula, Illuminant,
    IlluminantModel, MetricsReport, NoiseParams, SceneRecord, SrgbImage,
};
use serde::Deserialize;

pub use config::PipelineConfig;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub keep_going: bool,
    pub delta_e: DeltaEFormula,
}

impl Options {
    fn out_dir(&self, fallback: &Path) -> anyhow::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| fallback.to_path_buf());
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(dir)
    }
}

/// Outcome of a command that ran to the end.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub written: Vec<PathBuf>,
    pub failures: usize,
}

impl Summary {
    pub fn is_success(&self) -> bool {
        self.failures == 0
    }
}

/// Returned when a per-item failure stops a command; the cause has
/// already been reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aborted;

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("stopped after a failure")
    }
}

impl std::error::Error for Aborted {}

/// Per-item failure bookkeeping.
struct Batch {
    keep_going: bool,
    failures: usize,
}

impl Batch {
    fn new(opts: &Options) -> Self {
        Self {
            keep_going: opts.keep_going,
            failures: 0,
        }
    }

    fn fail(
        &mut self,
        file: &Path,
        stage: &str,
        message: impl std::fmt::Display,
    ) -> anyhow::Result<()> {
        diag::emit(Some(file), stage, message);
        self.failures += 1;
        if self.keep_going {
            Ok(())
        } else {
            Err(Aborted.into())
        }
    }

    fn check<T>(
        &mut self,
        file: &Path,
        stage: &str,
        r: nightsynth::Result<T>,
    ) -> anyhow::Result<Option<T>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(e) => self.fail(file, stage, e).map(|_| None),
        }
    }

    fn finish(self, written: Vec<PathBuf>) -> Summary {
        Summary {
            written,
            failures: self.failures,
        }
    }
}

/// Files in `dir` with one of `exts`, sorted by name.
pub fn list_files(dir: &Path, exts: &[&str]) -> anyhow::Result<Vec<PathBuf>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry
            .with_context(|| format!("reading directory {}", dir.display()))?
            .path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if matches && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn list_raws(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let files = list_files(dir, &["pgm"])?;
    if files.is_empty() {
        bail!("no .pgm files in {}", dir.display());
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Measure every gray card in `dir` and fit the illuminant dictionary.
///
/// `regions_file` maps each raw's stem (or file name) to its card region.
pub fn fit_illuminants(dir: &Path, regions_file: &Path, opts: &Options) -> anyhow::Result<Summary> {
    let text = std::fs::read_to_string(regions_file)
        .with_context(|| format!("reading regions {}", regions_file.display()))?;
    let regions: BTreeMap<String, Region> = serde_json::from_str(&text)
        .with_context(|| format!("parsing regions {}", regions_file.display()))?;
    let mut batch = Batch::new(opts);
    let mut illums = Vec::new();
    for file in list_raws(dir)? {
        let region = regions
            .get(&stem(&file))
            .or_else(|| regions.get(&file_name(&file)));
        let Some(region) = region else {
            batch.fail(&file, "regions", "no region entry for this file")?;
            continue;
        };
        let Some(raw) = batch.check(&file, "read", read_raw(&file))? else {
            continue;
        };
        if let Some(il) = batch.check(&file, "measure", measure_gray_card(&raw, *region))? {
            illums.push(il);
        }
    }
    let model = IlluminantModel::from_illuminants(&illums)?;
    let path = opts.out_dir(Path::new("."))?.join("illuminants.json");
    model.save(&path)?;
    Ok(batch.finish(vec![path]))
}

/// Fit the brightness dictionary from the mean normalized intensity of
/// each night capture in `dir`.
pub fn fit_brightness(dir: &Path, opts: &Options) -> anyhow::Result<Summary> {
    let mut batch = Batch::new(opts);
    let mut values = Vec::new();
    for file in list_raws(dir)? {
        let Some(raw) = batch.check(&file, "read", read_raw(&file))? else {
            continue;
        };
        let d = mean_intensity(&normalize(&raw));
        if d > 0.0 {
            values.push(d);
        } else {
            batch.fail(&file, "measure", "mean intensity is zero")?;
        }
    }
    let model = nightsynth::fit_brightness(&values)?;
    let path = opts.out_dir(Path::new("."))?.join("brightness.json");
    model.save(&path)?;
    Ok(batch.finish(vec![path]))
}

/// One entry of a noise-calibration manifest. Paths are relative to the
/// manifest; `iso` defaults to the noisy frame's sidecar value.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub noisy: PathBuf,
    pub clean: PathBuf,
    #[serde(default)]
    pub iso: Option<u32>,
}

/// Estimate one noise-parameter row per ISO from aligned pairs.
pub fn estimate_noise(manifest: &Path, opts: &Options) -> anyhow::Result<Summary> {
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("reading pairs manifest {}", manifest.display()))?;
    let entries: Vec<PairEntry> = serde_json::from_str(&text)
        .with_context(|| format!("parsing pairs manifest {}", manifest.display()))?;
    if entries.is_empty() {
        bail!("pairs manifest {} is empty", manifest.display());
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut batch = Batch::new(opts);
    let mut groups: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for entry in entries {
        let noisy_path = base.join(&entry.noisy);
        let clean_path = base.join(&entry.clean);
        let Some(noisy) = batch.check(&noisy_path, "read", read_raw(&noisy_path))? else {
            continue;
        };
        let Some(clean) = batch.check(&clean_path, "read", read_raw(&clean_path))? else {
            continue;
        };
        if !noisy.is_compatible(&clean) {
            batch.fail(
                &noisy_path,
                "pair",
                format!(
                    "{}x{} does not match clean frame {} ({}x{}) in size, CFA or levels",
                    noisy.width(),
                    noisy.height(),
                    clean_path.display(),
                    clean.width(),
                    clean.height()
                ),
            )?;
            continue;
        }
        let iso = entry.iso.unwrap_or(noisy.meta.iso);
        groups.entry(iso).or_default().push((noisy, clean));
    }
    let mut table = Vec::new();
    for (iso, pairs) in groups {
        let estimate = nightsynth::estimate_noise_params(&pairs)
            .map(|p| NoiseParams { iso, ..p })
            .map_err(|e| anyhow!("ISO {iso}: {e}"));
        match estimate {
            Ok(p) => table.push(p),
            Err(e) => batch.fail(manifest, "estimate", e)?,
        }
    }
    if table.is_empty() {
        bail!("no noise parameters could be estimated");
    }
    let path = opts.out_dir(Path::new("."))?.join("noise_params.json");
    save_noise_table(&table, &path)?;
    Ok(batch.finish(vec![path]))
}

/// Pick the noise row for `iso`, or the only row when `iso` is unset.
pub fn select_noise(table: &[NoiseParams], iso: Option<u32>) -> anyhow::Result<NoiseParams> {
    match iso {
        Some(iso) => table
            .iter()
            .find(|p| p.iso == iso)
            .cloned()
            .ok_or_else(|| anyhow!("noise table has no entry for ISO {iso}")),
        None if table.len() == 1 => Ok(table[0].clone()),
        None => bail!(
            "noise table has {} entries; set iso in the config",
            table.len()
        ),
    }
}

/// Paths written for one synthesized scene.
pub fn scene_outputs(out: &Path, day: &Path) -> [PathBuf; 4] {
    let s = stem(day);
    [
        out.join(format!("{s}_night_clean.pgm")),
        out.join(format!("{s}_night_noisy.pgm")),
        out.join(format!("{s}_night_clean.png")),
        out.join(format!("{s}_night_noisy.png")),
    ]
}

struct SceneFailure {
    file: PathBuf,
    stage: &'static str,
    error: nightsynth::Error,
}

struct Dictionaries {
    illum: IlluminantModel,
    bright: BrightnessModel,
    noise: NoiseParams,
}

fn synthesize_scene(
    dicts: &Dictionaries,
    cfg: &PipelineConfig,
    out: &Path,
    day_path: &Path,
    seed: u64,
) -> Result<SceneRecord, SceneFailure> {
    let fail = |stage| {
        move |error| SceneFailure {
            file: day_path.to_path_buf(),
            stage,
            error,
        }
    };
    let day = read_raw(day_path).map_err(fail("read"))?;
    let scene = nightsynth::synthesize_night(
        &day,
        &dicts.illum,
        &dicts.bright,
        &cfg.relight,
        &dicts.noise,
        seed,
        day_path,
    )
    .map_err(fail("synthesize"))?;
    drop(day);
    let [clean_pgm, noisy_pgm, clean_png, noisy_png] = scene_outputs(out, day_path);
    let wb = &scene.record.effective_wb;
    write_raw(&scene.clean, &clean_pgm).map_err(fail("write"))?;
    write_raw(&scene.noisy, &noisy_pgm).map_err(fail("write"))?;
    let preview = render(&scene.clean, wb).map_err(fail("render"))?;
    write_png(&preview, &clean_png).map_err(fail("write"))?;
    let preview = render(&scene.noisy, wb).map_err(fail("render"))?;
    write_png(&preview, &noisy_png).map_err(fail("write"))?;
    Ok(scene.record)
}

/// Run `f` with `jobs` worker threads available to the pixel loops.
#[cfg(feature = "parallel")]
pub fn with_workers<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .context("starting worker pool")?
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<T: Send>(
    _jobs: Option<usize>,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    f()
}

/// Run `f` over `0..n` on `jobs` workers, results in index order.
#[cfg(feature = "parallel")]
fn run_indexed<T: Send>(
    jobs: Option<usize>,
    n: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> anyhow::Result<Vec<T>> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().context("starting worker pool")?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_indexed<T: Send>(
    _jobs: Option<usize>,
    n: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> anyhow::Result<Vec<T>> {
    Ok((0..n).map(f).collect())
}

/// Synthesize a night pair for every raw in `day_dir`.
///
/// Scene `i` (in file-name order) uses seed `seed + i`, so outputs do not
/// depend on the number of workers.
pub fn synthesize(day_dir: &Path, config: &Path, opts: &Options) -> anyhow::Result<Summary> {
    let cfg = PipelineConfig::load(config)?;
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let jobs = opts.jobs.or(cfg.jobs);
    let out = Options {
        out: opts.out.clone().or_else(|| cfg.out.clone()),
        ..opts.clone()
    }
    .out_dir(Path::new("."))?;
    let dicts = Dictionaries {
        illum: IlluminantModel::load(&cfg.illuminants)?,
        bright: BrightnessModel::load(&cfg.brightness)?,
        noise: select_noise(&load_noise_table(&cfg.noise_params)?, cfg.iso)?,
    };
    let files = list_raws(day_dir)?;
    let stop = AtomicBool::new(false);
    let results = run_indexed(jobs, files.len(), |i| {
        if stop.load(Ordering::Relaxed) {
            return None;
        }
        let r = synthesize_scene(&dicts, &cfg, &out, &files[i], seed.wrapping_add(i as u64));
        if r.is_err() && !opts.keep_going {
            stop.store(true, Ordering::Relaxed);
        }
        Some(r)
    })?;
    let mut batch = Batch::new(opts);
    let mut records = Vec::new();
    let mut written = Vec::new();
    for (file, result) in files.iter().zip(results) {
        match result {
            Some(Ok(record)) => {
                for p in scene_outputs(&out, file) {
                    if p.extension().is_some_and(|e| e == "pgm") {
                        written.push(sidecar_path(&p));
                    }
                    written.push(p);
                }
                records.push(record);
            }
            Some(Err(f)) => batch.fail(&f.file, f.stage, f.error)?,
            None => {}
        }
    }
    let path = out.join("manifest.json");
    write_manifest(&records, &path)?;
    written.push(path);
    Ok(batch.finish(written))
}

/// Average every frame of a burst into `<dir name>_average.pgm`.
pub fn average(burst_dir: &Path, opts: &Options) -> anyhow::Result<Summary> {
    let mut batch = Batch::new(opts);
    let mut frames = Vec::new();
    for file in list_raws(burst_dir)? {
        if let Some(raw) = batch.check(&file, "read", read_raw(&file))? {
            frames.push(raw);
        }
    }
    let avg = average_burst(&frames)?;
    let name = burst_dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "burst".into());
    let path = opts
        .out_dir(Path::new("."))?
        .join(format!("{name}_average.pgm"));
    write_raw(&avg, &path)?;
    Ok(batch.finish(vec![sidecar_path(&path), path]))
}

/// Where `render` takes its white balance from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WbSource {
    /// The gains stored in the sidecar.
    #[default]
    Sidecar,
    /// Unit gains.
    Unit,
}

/// Render one raw file to `<stem>.png`, next to it unless `--out` is set.
pub fn render_file(raw_path: &Path, wb: WbSource, opts: &Options) -> anyhow::Result<Summary> {
    let raw = read_raw(raw_path)?;
    let illum = match wb {
        WbSource::Sidecar => raw.meta.illuminant()?,
        WbSource::Unit => Illuminant::neutral(),
    };
    let img = render(&raw, &illum)?;
    let parent = raw_path.parent().unwrap_or(Path::new("."));
    let parent = if parent.as_os_str().is_empty() {
        Path::new(".")
    } else {
        parent
    };
    let path = opts
        .out_dir(parent)?
        .join(format!("{}.png", stem(raw_path)));
    write_png(&img, &path)?;
    Ok(Summary {
        written: vec![path],
        failures: 0,
    })
}

struct Loaded {
    image: SrgbImage,
    illuminant: Option<Illuminant>,
}

fn load_for_eval(path: &Path) -> nightsynth::Result<Loaded> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
    {
        let raw = read_raw(path)?;
        let illuminant = raw.meta.illuminant()?;
        Ok(Loaded {
            image: render(&raw, &illuminant)?,
            illuminant: Some(illuminant),
        })
    } else {
        Ok(Loaded {
            image: read_png(path)?,
            illuminant: None,
        })
    }
}

fn evaluate_one(
    name: &str,
    pred: &Path,
    truth: &Path,
    formula: DeltaEFormula,
) -> nightsynth::Result<PairMetrics> {
    let p = load_for_eval(pred)?;
    let t = load_for_eval(truth)?;
    let mut row = evaluate_pair(name, &p.image, &t.image, formula)?;
    if let (Some(a), Some(b)) = (p.illuminant, t.illuminant) {
        row.angular_error_deg = Some(nightsynth::angular_error(a.rgb(), b.rgb())?);
    }
    Ok(row)
}

/// Compare same-named PNG or raw files in two directories.
///
/// Raw files are rendered with their sidecar white balance and also
/// scored by the angle between the two illuminants.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, opts: &Options) -> anyhow::Result<Summary> {
    const EXTS: [&str; 2] = ["png", "pgm"];
    let preds = list_files(pred_dir, &EXTS)?;
    let truths = list_files(gt_dir, &EXTS)?;
    let scored = run_indexed(opts.jobs, preds.len(), |i| {
        let name = file_name(&preds[i]);
        let truth = gt_dir.join(&name);
        truth
            .is_file()
            .then(|| evaluate_one(&name, &preds[i], &truth, opts.delta_e))
    })?;
    let mut batch = Batch::new(opts);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (pred, result) in preds.iter().zip(scored) {
        match result {
            None => skipped.push(Skipped {
                name: file_name(pred),
                reason: format!("no counterpart in {}", gt_dir.display()),
            }),
            Some(r) => {
                if let Some(row) = batch.check(pred, "evaluate", r)? {
                    rows.push(row);
                }
            }
        }
    }
    for truth in &truths {
        let name = file_name(truth);
        if !pred_dir.join(&name).is_file() {
            skipped.push(Skipped {
                name,
                reason: format!("no prediction in {}", pred_dir.display()),
            });
        }
    }
    let report = MetricsReport::new(opts.delta_e, rows, skipped);
    let out = opts.out_dir(Path::new("."))?;
    let json = out.join("report.json");
    nightsynth::raw_io::write_json(&json, &report)?;
    let csv = out.join("report.csv");
    let body = report_csv(&report)?;
    write_atomic(&csv, |w| w.write_all(&body))?;
    Ok(batch.finish(vec![json, csv]))
}

fn report_csv(report: &MetricsReport) -> anyhow::Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "psnr_db", "ssim", "delta_e", "angular_error_deg"])?;
    for r in &report.rows {
        w.write_record([
            r.name.clone(),
            r.psnr_db.to_string(),
            r.ssim.to_string(),
            r.delta_e.to_string(),
            opt(r.angular_error_deg),
        ])?;
    }
    let a = &report.aggregate;
    w.write_record([
        "mean".to_string(),
        a.psnr_db.to_string(),
        a.ssim.to_string(),
        a.delta_e.to_string(),
        opt(a.angular_error_deg),
    ])?;
    w.into_inner().map_err(|e| anyhow!("{e}"))
}

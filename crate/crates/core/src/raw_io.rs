//! On-disk containers: 16-bit PGM raw mosaics with a JSON metadata sidecar,
//! 8-bit PNG renders and the scene manifest.
//!
//! A raw capture `scene.pgm` always travels with `scene.json`:
//!
//! ```json
//! {"width":4032,"height":3024,"cfa_pattern":"RGGB","black_level":64,
//!  "white_level":1023,"wb_gains":[2.1,1.0,1.6],"iso":50,
//!  "exposure_time":0.01,"ccm":[...9 numbers, optional...]}
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayer::Illuminant;
use crate::error::{Error, Result};
use crate::isp::SrgbImage;
use crate::noise::NoiseParams;
use crate::synthesis::LightSource;

/// Tolerance on color-matrix row sums.
pub const CCM_ROW_SUM_TOLERANCE: f64 = 1e-6;

/// The four 2×2 Bayer layouts, named by reading the tile row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfaPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl CfaPattern {
    /// `(row, col)` offsets inside the 2×2 tile of the R, G1, G2 and B sites.
    ///
    /// G1 is the green sharing a row with red.
    pub const fn offsets(self) -> [(usize, usize); 4] {
        match self {
            CfaPattern::Rggb => [(0, 0), (0, 1), (1, 0), (1, 1)],
            CfaPattern::Bggr => [(1, 1), (1, 0), (0, 1), (0, 0)],
            CfaPattern::Grbg => [(0, 1), (0, 0), (1, 1), (1, 0)],
            CfaPattern::Gbrg => [(1, 0), (1, 1), (0, 0), (0, 1)],
        }
    }

    /// Color (0 = R, 1 = G, 2 = B) sampled at full-resolution site `(y, x)`.
    pub const fn color_at(self, y: usize, x: usize) -> usize {
        let tile = (y & 1, x & 1);
        let o = self.offsets();
        if tile.0 == o[0].0 && tile.1 == o[0].1 {
            0
        } else if tile.0 == o[3].0 && tile.1 == o[3].1 {
            2
        } else {
            1
        }
    }
}

/// Capture metadata consumed by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMeta {
    pub cfa_pattern: CfaPattern,
    pub black_level: u16,
    pub white_level: u16,
    /// Per-channel white-balance gains `(1/r, 1/g, 1/b)`, green normalized to 1.
    pub wb_gains: [f64; 3],
    pub iso: u32,
    pub exposure_time: f64,
    /// Row-major raw → linear sRGB matrix.
    pub ccm: Option<[f64; 9]>,
}

impl RawMeta {
    /// Metadata with unit gains, no color matrix and the given levels.
    pub fn new(cfa_pattern: CfaPattern, black_level: u16, white_level: u16) -> Self {
        Self {
            cfa_pattern,
            black_level,
            white_level,
            wb_gains: [1.0; 3],
            iso: 100,
            exposure_time: 0.01,
            ccm: None,
        }
    }

    /// The illuminant the gains neutralize.
    pub fn illuminant(&self) -> Result<Illuminant> {
        let [r, g, b] = self.wb_gains;
        Illuminant::new(1.0 / r, 1.0 / g, 1.0 / b)
    }

    /// Store the gains that neutralize `illum`.
    pub fn set_illuminant(&mut self, illum: &Illuminant) {
        self.wb_gains = illum.gains();
    }

    pub fn level_range(&self) -> f64 {
        f64::from(self.white_level) - f64::from(self.black_level)
    }

    fn validate(&mut self) -> Result<()> {
        if self.black_level >= self.white_level {
            return Err(Error::InvalidImage(format!(
                "black level {} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        if self.wb_gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidImage(format!(
                "white-balance gains must be finite and positive, got {:?}",
                self.wb_gains
            )));
        }
        let g = self.wb_gains[1];
        self.wb_gains = [self.wb_gains[0] / g, 1.0, self.wb_gains[2] / g];
        if let Some(ccm) = &self.ccm {
            validate_ccm(ccm)?;
        }
        if !(self.exposure_time.is_finite() && self.exposure_time >= 0.0) {
            return Err(Error::InvalidImage(format!(
                "exposure time must be a nonnegative number, got {}",
                self.exposure_time
            )));
        }
        Ok(())
    }
}

pub(crate) fn validate_ccm(ccm: &[f64; 9]) -> Result<()> {
    for (row, chunk) in ccm.chunks(3).enumerate() {
        let sum: f64 = chunk.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > CCM_ROW_SUM_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "color matrix row {row} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Single-plane 16-bit Bayer mosaic.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
    pub meta: RawMeta,
}

impl RawImage {
    /// Validate and build an image. Green gain is renormalized to 1.
    pub fn new(width: usize, height: usize, pixels: Vec<u16>, mut meta: RawMeta) -> Result<Self> {
        if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
            return Err(Error::InvalidImage(format!(
                "dimensions must be nonzero and even, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        meta.validate()?;
        if let Some(i) = pixels.iter().position(|&p| p > meta.white_level) {
            return Err(Error::InvalidImage(format!(
                "pixel ({}, {}) = {} exceeds white level {}",
                i % width,
                i / width,
                pixels[i],
                meta.white_level
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            meta,
        })
    }

    /// Image filled with one value.
    pub fn filled(width: usize, height: usize, value: u16, meta: RawMeta) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], meta)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Same geometry, CFA and levels.
    pub fn is_compatible(&self, other: &RawImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.meta.cfa_pattern == other.meta.cfa_pattern
            && self.meta.black_level == other.meta.black_level
            && self.meta.white_level == other.meta.white_level
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    cfa_pattern: CfaPattern,
    black_level: u16,
    white_level: u16,
    wb_gains: [f64; 3],
    iso: u32,
    exposure_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ccm: Option<[f64; 9]>,
}

/// Path of the JSON sidecar belonging to a raw file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Read `<stem>.pgm` and its `<stem>.json` sidecar.
pub fn read_raw(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let side_path = sidecar_path(path);
    let side_file = File::open(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_reader(BufReader::new(side_file))
        .map_err(|e| Error::format(&side_path, e.to_string()))?;

    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let (width, height, maxval) =
        read_pgm_header(&mut reader).map_err(|m| Error::format(path, m))?;
    if maxval != 65535 {
        return Err(Error::format(
            path,
            format!("maxval must be 65535, got {maxval}"),
        ));
    }
    if width != side.width || height != side.height {
        return Err(Error::format(
            path,
            format!(
                "PGM is {width}x{height} but sidecar says {}x{}",
                side.width, side.height
            ),
        ));
    }
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::format(
            path,
            format!("odd dimensions {width}x{height}"),
        ));
    }
    let mut bytes = vec![0u8; width * height * 2];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| Error::format(path, format!("truncated pixel data: {e}")))?;
    let pixels = bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();

    let meta = RawMeta {
        cfa_pattern: side.cfa_pattern,
        black_level: side.black_level,
        white_level: side.white_level,
        wb_gains: side.wb_gains,
        iso: side.iso,
        exposure_time: side.exposure_time,
        ccm: side.ccm,
    };
    RawImage::new(width, height, pixels, meta).map_err(|e| match e {
        Error::InvalidImage(m) => Error::format(path, m),
        other => other,
    })
}

fn read_pgm_header(reader: &mut impl BufRead) -> std::result::Result<(usize, usize, u32), String> {
    let mut magic = [0u8; 2];
    reader
        .read_exact(&mut magic)
        .map_err(|_| "missing PGM magic".to_string())?;
    if &magic != b"P5" {
        return Err(format!(
            "expected magic P5, found {:?}",
            String::from_utf8_lossy(&magic)
        ));
    }
    let mut fields = [0u64; 3];
    for field in &mut fields {
        *field = read_header_number(reader)?;
    }
    // exactly one whitespace byte separates the header from the payload;
    // read_header_number already consumed it
    let [w, h, maxval] = fields;
    let maxval = u32::try_from(maxval).map_err(|_| format!("maxval {maxval} out of range"))?;
    Ok((w as usize, h as usize, maxval))
}

fn read_header_number(reader: &mut impl BufRead) -> std::result::Result<u64, String> {
    let mut byte = [0u8; 1];
    let mut next = |r: &mut dyn BufRead| -> std::result::Result<u8, String> {
        r.read_exact(&mut byte)
            .map_err(|_| "truncated PGM header".to_string())?;
        Ok(byte[0])
    };
    let mut c = next(reader)?;
    loop {
        if c == b'#' {
            while c != b'\n' {
                c = next(reader)?;
            }
        } else if c.is_ascii_whitespace() {
            c = next(reader)?;
        } else {
            break;
        }
    }
    let mut value: u64 = 0;
    if !c.is_ascii_digit() {
        return Err(format!("unexpected byte {c:#04x} in PGM header"));
    }
    while c.is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u64::from(c - b'0')))
            .ok_or_else(|| "PGM header number overflows".to_string())?;
        c = next(reader)?;
    }
    if !c.is_ascii_whitespace() {
        return Err(format!("unexpected byte {c:#04x} in PGM header"));
    }
    Ok(value)
}

/// Write `<stem>.pgm` and `<stem>.json`.
pub fn write_raw(image: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        write!(w, "P5\n{} {}\n65535\n", image.width, image.height)?;
        let mut bytes = Vec::with_capacity(image.pixels.len() * 2);
        for p in &image.pixels {
            bytes.extend_from_slice(&p.to_be_bytes());
        }
        w.write_all(&bytes)
    })?;
    let side = Sidecar {
        width: image.width,
        height: image.height,
        cfa_pattern: image.meta.cfa_pattern,
        black_level: image.meta.black_level,
        white_level: image.meta.white_level,
        wb_gains: image.meta.wb_gains,
        iso: image.meta.iso,
        exposure_time: image.meta.exposure_time,
        ccm: image.meta.ccm,
    };
    write_json(sidecar_path(path), &side)
}

/// Write an 8-bit RGB PNG.
pub fn write_png(image: &SrgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| {
        let mut encoder = png::Encoder::new(w, image.width() as u32, image.height() as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fastest);
        let mut writer = encoder.write_header().map_err(std::io::Error::other)?;
        writer
            .write_image_data(image.data())
            .map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)
    })
}

/// Read an 8-bit PNG as RGB. Gray and alpha inputs are expanded or dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<SrgbImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => {
            return Err(Error::format(path, "palette PNG was not expanded"));
        }
    };
    SrgbImage::new(w, h, rgb)
}

/// One synthesized scene: everything needed to replay it bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub source_day_image: PathBuf,
    pub seed: u64,
    pub dim_factor: f64,
    pub light_sources: Vec<LightSource>,
    pub noise_params_used: NoiseParams,
    pub effective_wb: Illuminant,
}

pub fn write_manifest(records: &[SceneRecord], path: impl AsRef<Path>) -> Result<()> {
    write_json(path, records)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    read_json(path)
}

/// Serialize `value` as pretty JSON, atomically.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path.as_ref(), |w| w.write_all(text.as_bytes()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))
}

/// Write through a temporary file in the destination directory, then rename.
pub fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut File>) -> std::io::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        // the umask applies, as for a plain create
        builder.permissions(std::fs::Permissions::from_mode(0o666));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

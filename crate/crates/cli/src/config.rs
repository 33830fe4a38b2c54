use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nightsynth::RelightConfig;
use serde::{Deserialize, Serialize};

/// Settings for `synthesize`, read from a JSON file.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub illuminants: PathBuf,
    pub brightness: PathBuf,
    pub noise_params: PathBuf,
    /// Row of the noise table to use; may be omitted when it has one row.
    #[serde(default)]
    pub iso: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub relight: RelightConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.illuminants = base.join(&cfg.illuminants);
        cfg.brightness = base.join(&cfg.brightness);
        cfg.noise_params = base.join(&cfg.noise_params);
        cfg.out = cfg.out.map(|o| base.join(o));
        Ok(cfg)
    }

    /// Check that every referenced file exists and the ranges are sane.
    pub fn validate(&self) -> anyhow::Result<()> {
        for p in [&self.illuminants, &self.brightness, &self.noise_params] {
            if !p.is_file() {
                bail!("referenced file {} does not exist", p.display());
            }
        }
        if self.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        self.relight.validate()?;
        Ok(())
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nightsynth::DeltaEFormula;
use nightsynth_cli::{diag, Aborted, Options, Summary, WbSource};

#[derive(Parser, Debug)]
#[command(
    name = "nightsynth",
    version,
    about = "Synthesize nighttime raw pairs from daytime captures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline config (JSON), required by `synthesize`
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; scene i uses seed + i
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Process remaining items after a failure (the exit code stays nonzero)
    #[arg(long, global = true)]
    keep_going: bool,

    /// Color difference formula for `evaluate`
    #[arg(long, global = true, value_enum, default_value_t = DeltaE::Cie76)]
    delta_e: DeltaE,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the night illuminant dictionary from gray-card captures
    FitIlluminants {
        gray_card_dir: PathBuf,
        /// JSON object mapping file stem to {x, y, width, height}
        #[arg(long)]
        regions: PathBuf,
    },
    /// Fit the brightness dictionary from night captures
    FitBrightness { night_dir: PathBuf },
    /// Estimate noise parameters from a manifest of noisy/clean pairs
    EstimateNoise { pairs_manifest: PathBuf },
    /// Turn every day capture in a directory into a night pair
    Synthesize { day_dir: PathBuf },
    /// Average a burst of aligned frames
    Average { burst_dir: PathBuf },
    /// Render a raw file to an sRGB PNG
    Render {
        raw: PathBuf,
        #[arg(long, value_enum, default_value_t = Wb::Sidecar)]
        wb: Wb,
    },
    /// Score predictions against ground truth
    Evaluate { pred_dir: PathBuf, gt_dir: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DeltaE {
    Cie76,
    Ciede2000,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Wb {
    Sidecar,
    Unit,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::FitIlluminants { .. } => "fit-illuminants",
            Command::FitBrightness { .. } => "fit-brightness",
            Command::EstimateNoise { .. } => "estimate-noise",
            Command::Synthesize { .. } => "synthesize",
            Command::Average { .. } => "average",
            Command::Render { .. } => "render",
            Command::Evaluate { .. } => "evaluate",
        }
    }
}

fn run(cli: &Cli, opts: &Options) -> anyhow::Result<Summary> {
    match &cli.command {
        Command::FitIlluminants {
            gray_card_dir,
            regions,
        } => nightsynth_cli::fit_illuminants(gray_card_dir, regions, opts),
        Command::FitBrightness { night_dir } => nightsynth_cli::fit_brightness(night_dir, opts),
        Command::EstimateNoise { pairs_manifest } => {
            nightsynth_cli::estimate_noise(pairs_manifest, opts)
        }
        Command::Synthesize { day_dir } => {
            let Some(config) = &cli.config else {
                anyhow::bail!("synthesize needs --config");
            };
            nightsynth_cli::synthesize(day_dir, config, opts)
        }
        Command::Average { burst_dir } => nightsynth_cli::average(burst_dir, opts),
        Command::Render { raw, wb } => {
            let wb = match wb {
                Wb::Sidecar => WbSource::Sidecar,
                Wb::Unit => WbSource::Unit,
            };
            nightsynth_cli::render_file(raw, wb, opts)
        }
        Command::Evaluate { pred_dir, gt_dir } => nightsynth_cli::evaluate(pred_dir, gt_dir, opts),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = Options {
        out: cli.out.clone(),
        seed: cli.seed,
        jobs: cli.jobs.map(|j| j as usize),
        keep_going: cli.keep_going,
        delta_e: match cli.delta_e {
            DeltaE::Cie76 => DeltaEFormula::Cie76,
            DeltaE::Ciede2000 => DeltaEFormula::Ciede2000,
        },
    };
    let result = nightsynth_cli::with_workers(opts.jobs, || run(&cli, &opts));
    match result {
        Ok(summary) if summary.is_success() => ExitCode::SUCCESS,
        Ok(_) => ExitCode::FAILURE,
        Err(e) => {
            if e.downcast_ref::<Aborted>().is_none() {
                diag::emit(None, cli.command.stage(), format!("{e:#}"));
            }
            ExitCode::FAILURE
        }
    }
}

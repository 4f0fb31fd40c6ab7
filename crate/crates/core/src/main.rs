use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crowdcam::cli::{run, run_synth, RunConfig};
use crowdcam::synth::Preset;

#[derive(Parser)]
#[command(
    name = "crowdcam",
    version,
    about = "Find moving objects in a set of photos of one scene"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute dynamic probability maps for every image of a set.
    Detect(DetectArgs),
    /// Render a synthetic image set with ground truth.
    Synth {
        #[arg(long)]
        preset: Preset,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth masks; defaults to INPUT/gt when it exists.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Known fundamental matrices, keyed "refId|supId".
    #[arg(long)]
    fmatrices: Option<PathBuf>,
    /// Flat key = value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    debug_patches: bool,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    target_height: Option<String>,
    /// Three comma separated factors of the nominal width.
    #[arg(long)]
    width_factors: Option<String>,
    #[arg(long)]
    hog_weight: Option<String>,
    #[arg(long)]
    hs_weight: Option<String>,
    #[arg(long)]
    hs_bins: Option<String>,
    #[arg(long)]
    ransac_threshold: Option<String>,
    #[arg(long)]
    ransac_iterations: Option<String>,
    #[arg(long)]
    ransac_confidence: Option<String>,
    #[arg(long)]
    min_inliers: Option<String>,
    #[arg(long)]
    min_inlier_ratio: Option<String>,
    /// per-image, per-set or fixed.
    #[arg(long)]
    threshold_protocol: Option<String>,
    #[arg(long)]
    mask_threshold: Option<String>,
}

impl DetectArgs {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        [
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("target_height", &self.target_height),
            ("width_factors", &self.width_factors),
            ("hog_weight", &self.hog_weight),
            ("hs_weight", &self.hs_weight),
            ("hs_bins", &self.hs_bins),
            ("ransac_threshold", &self.ransac_threshold),
            ("ransac_iterations", &self.ransac_iterations),
            ("ransac_confidence", &self.ransac_confidence),
            ("min_inliers", &self.min_inliers),
            ("min_inlier_ratio", &self.min_inlier_ratio),
            ("threshold_protocol", &self.threshold_protocol),
            ("mask_threshold", &self.mask_threshold),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
        .collect()
    }

    fn config(&self) -> Result<RunConfig, crowdcam::cli::CliError> {
        let mut cfg = RunConfig::new(&self.input, &self.output);
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| crowdcam::cli::CliError::Io {
                path: path.clone(),
                source,
            })?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        cfg.gt = self.gt.clone();
        cfg.fmatrices = self.fmatrices.clone();
        cfg.debug_patches = self.debug_patches;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(args) => args.config().and_then(|cfg| run(&cfg)).map(|summary| {
            for id in &summary.detection.skipped {
                eprintln!("skipped {id}: no support images");
            }
        }),
        Command::Synth { preset, output, seed } => run_synth(preset, &output, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hips_core::fusion::FusionMode;
use hips_core::registration::Metric;
use hips_core::volume::BoundingBox;

use crate::config::{config_help, parse_crop};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "hips", version, about = "HIPS contrast synthesis and multi-atlas thalamic segmentation")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "HIPS_THREADS")]
    pub threads: Option<usize>,

    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the T1w -> WMn polynomial on registered pairs and average it.
    Fit(FitArgs),
    /// Synthesize a WMn-like image from a T1w image.
    Synth(SynthArgs),
    /// Segment thalamic nuclei from warped priors.
    Segment(SegmentArgs),
    /// Compare segmentations with reference labels.
    Evaluate(EvaluateArgs),
    /// Clinical group statistics on a cohort volume table.
    Stats(StatsArgs),
    /// Write a synthetic phantom bundle.
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Pairs manifest: {"pairs": [{"t1w", "wmn", "mask"?, "t1w_ref"?, "wmn_ref"?}]}.
    pub manifest: PathBuf,
    #[arg(long)]
    pub degree: Option<usize>,
    /// Choose the degree in 1..=4 by validation RMSE before fitting.
    #[arg(long)]
    pub select_degree: bool,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// T1w NIfTI image.
    pub input: PathBuf,
    /// "paper" or a model JSON written by `fit`.
    #[arg(long)]
    pub model: Option<String>,
    /// Crop box "i0,j0,k0,i1,j1,k1" (max exclusive) or "none".
    #[arg(long, value_parser = parse_crop_arg)]
    pub crop: Option<CropArg>,
    #[arg(long)]
    pub stretch_low: Option<f64>,
    #[arg(long)]
    pub stretch_high: Option<f64>,
    #[arg(long)]
    pub nbins: Option<usize>,
    #[arg(long)]
    pub tail_frac: Option<f64>,
    #[arg(long)]
    pub peak_height_frac: Option<f64>,
    /// Native WMn image on the same grid; adds SSIM and a density plot.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Target image (ideally the synthesized WMn-like image).
    pub target: PathBuf,
    /// Priors manifest: {"template"?, "priors": [{"intensity", "labels", "field"}]}.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<FusionMode>,
    #[arg(long, value_parser = parse_metric)]
    pub metric: Option<Metric>,
    /// Ignore the manifest's template; prior fields must be on the target grid.
    #[arg(long)]
    pub no_template: bool,
    /// Also write one posterior probability image per nucleus.
    #[arg(long)]
    pub posteriors: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Segmentation label image; repeat together with --ref for several subjects.
    #[arg(long = "seg", required = true)]
    pub seg: Vec<PathBuf>,
    /// Reference label image, one per --seg.
    #[arg(long = "ref", required = true)]
    pub reference: Vec<PathBuf>,
    /// Subject ids, one per --seg (default subject1, subject2, ...).
    #[arg(long)]
    pub subject: Vec<String>,
    #[arg(long, default_value = "hips")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Cohort CSV: id, group, hemisphere, age, icv, then one column per label.
    pub cohort: PathBuf,
    /// Comma-separated label columns.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Outlier |z| threshold, or "none".
    #[arg(long, value_parser = parse_outlier)]
    pub outlier_sd: Option<OutlierArg>,
    /// Method name recorded in the report.
    #[arg(long, default_value = "HIPS-THOMAS")]
    pub method: String,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Cubic grid size.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.01)]
    pub t1w_noise: f64,
    #[arg(long, default_value_t = 5)]
    pub priors: usize,
    /// SD of nucleus seed displacement between subject and priors (voxels).
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Inter-nuclear T1w contrast factor in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub contrast: f64,
    /// Maximum subject translation relative to the template (voxels).
    #[arg(long, default_value_t = 0.0)]
    pub misalign_translation: f64,
    /// Maximum subject rotation relative to the template (degrees).
    #[arg(long, default_value_t = 0.0)]
    pub misalign_rotation: f64,
}

fn parse_mode(s: &str) -> Result<FusionMode, String> {
    s.parse().map_err(|e: hips_core::Error| e.to_string())
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: hips_core::Error| e.to_string())
}

/// A crop flag value; `none` disables a crop set in the config.
#[derive(Debug, Clone, Copy)]
pub struct CropArg(pub Option<BoundingBox>);

/// An outlier threshold flag value; `none` disables outlier removal.
#[derive(Debug, Clone, Copy)]
pub struct OutlierArg(pub Option<f64>);

fn parse_crop_arg(s: &str) -> Result<CropArg, String> {
    parse_crop(s).map(CropArg)
}

fn parse_outlier(s: &str) -> Result<OutlierArg, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(OutlierArg(None));
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(OutlierArg(Some(v))),
        _ => Err(format!("expected a positive number or 'none', got '{s}'")),
    }
}

/// The clap command with the config reference attached to every subcommand.
pub fn command() -> clap::Command {
    let help = config_help();
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in names {
        let h = help.clone();
        cmd = cmd.mut_subcommand(name, move |s| s.after_help(h));
    }
    cmd
}

/// Parses arguments; help and version requests come back as
/// `Err(clap::Error)` with exit code 0.
pub fn parse_from<I, T>(args: I) -> Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    Cli::from_arg_matches(&matches)
}

impl Cli {
    pub fn init_threads(&self) -> CliResult<()> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::Usage("--threads must be >= 1".into()));
            }
            // a second initialization (tests calling run twice) is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(())
    }
}

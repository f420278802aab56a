//! JSON pipeline configuration. Every subcommand accepts `--config`; flags
//! given on the command line override the file.

use std::path::{Path, PathBuf};

use hips_core::fusion::{FusionMode, FusionParams};
use hips_core::intensity::HistogramParams;
use hips_core::registration::RegistrationConfig;
use hips_core::stats::ClinicalConfig;
use hips_core::synthesis::{paper_model, HipsParams, PolynomialModel, RescaleTarget};
use hips_core::volume::BoundingBox;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub crop: Option<BoundingBox>,
    pub histogram: HistogramParams,
    pub model: String,
    pub stretch_low: f64,
    pub stretch_high: f64,
    pub rescale: RescaleTarget,
    pub fusion_mode: FusionMode,
    pub fusion: FusionParams,
    pub registration: RegistrationConfig,
    pub priors: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub fit: FitConfig,
    pub clinical: ClinicalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub degree: usize,
    pub max_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { degree: 3, max_samples: 100_000 }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let hips = HipsParams::default();
        PipelineConfig {
            crop: None,
            histogram: hips.histogram,
            model: "paper".into(),
            stretch_low: hips.stretch_low,
            stretch_high: hips.stretch_high,
            rescale: hips.rescale,
            fusion_mode: FusionMode::default(),
            fusion: FusionParams::default(),
            registration: RegistrationConfig::default(),
            priors: None,
            output_dir: PathBuf::from("hips_out"),
            seed: 0,
            fit: FitConfig::default(),
            clinical: ClinicalConfig::default(),
        }
    }
}

/// Dotted config keys and their meaning, shown in every subcommand's help.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "crop",
        "voxel box {\"min\": [i,j,k], \"max\": [i,j,k]} (max exclusive) applied before synthesis, or null for none",
    ),
    ("histogram.nbins", "histogram bins for the WM reference"),
    ("histogram.peak_height_frac", "minimum peak height as a fraction of the highest smoothed bin"),
    ("histogram.smooth_window", "moving-average width applied to the histogram before peak search"),
    ("histogram.tail_frac", "fraction of voxels above the mode that defines the reference"),
    ("histogram.tail_denominator", "\"above_mode\" or \"total\": what tail_frac is a fraction of"),
    ("model", "\"paper\" for the published cubic, or a path to a fitted model JSON"),
    ("stretch_low", "lower contrast-stretch percentile of the foreground"),
    ("stretch_high", "upper contrast-stretch percentile of the foreground"),
    ("rescale.fixed", "final WM scale of the synthesized image; use \"input_reference\" to keep the input's scale"),
    ("fusion_mode", "\"joint\" (joint label fusion) or \"majority\""),
    ("fusion.patch_radius", "patch half-width in voxels"),
    ("fusion.search_radius", "local search half-width in voxels"),
    ("fusion.beta", "exponent on patch differences in the error correlation"),
    ("fusion.alpha_frac", "ridge added to the correlation matrix, as a fraction of its mean diagonal"),
    ("fusion.clamp_negative", "clip negative atlas weights to zero and renormalize"),
    ("registration.metric", "\"cc\" or \"mi\""),
    ("registration.pyramid_levels", "resolution levels, coarsest first"),
    ("registration.max_passes_per_level", "coordinate-descent sweeps per level"),
    ("registration.tol", "relative metric improvement that ends a level"),
    ("registration.mi_bins", "joint-histogram bins for mutual information"),
    ("priors", "priors manifest JSON (segment)"),
    ("output_dir", "directory receiving all outputs"),
    ("seed", "seed for sampling and phantom generation"),
    ("fit.degree", "polynomial degree for fit"),
    ("fit.max_samples", "voxel pairs sampled per subject for fit"),
    ("clinical.labels", "nucleus volume columns entering the clinical model"),
    ("clinical.outlier_sd", "within-group |z| above which a volume is an outlier, or null"),
    ("clinical.residual_fit", "\"controls_only\" or \"all\": subjects used to fit the residual adjustment"),
];

pub fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (JSON file given with --config; flags override):\n");
    for (k, d) in CONFIG_KEYS {
        out.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    out
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(PipelineConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |e: hips_core::Error| CliError::Usage(e.to_string());
        self.registration.validate().map_err(usage)?;
        self.fusion.validate().map_err(usage)?;
        if !(0.0 <= self.stretch_low && self.stretch_low < self.stretch_high && self.stretch_high <= 100.0) {
            return Err(CliError::Usage(format!(
                "stretch percentiles must satisfy 0 <= low < high <= 100, got {} and {}",
                self.stretch_low, self.stretch_high
            )));
        }
        if self.histogram.nbins < 2 || !(self.histogram.tail_frac > 0.0 && self.histogram.tail_frac < 1.0) {
            return Err(CliError::Usage("histogram.nbins must be >= 2 and tail_frac in (0, 1)".into()));
        }
        if !(1..=hips_core::synthesis::MAX_DEGREE).contains(&self.fit.degree) || self.fit.max_samples == 0 {
            return Err(CliError::Usage("fit.degree must be in 1..=4 and fit.max_samples positive".into()));
        }
        Ok(())
    }

    pub fn hips_params(&self) -> HipsParams {
        HipsParams {
            histogram: self.histogram,
            stretch_low: self.stretch_low,
            stretch_high: self.stretch_high,
            rescale: self.rescale,
        }
    }

    pub fn load_model(&self) -> CliResult<PolynomialModel> {
        if self.model.eq_ignore_ascii_case("paper") {
            return Ok(paper_model());
        }
        let text = std::fs::read_to_string(&self.model)
            .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", self.model)))?;
        PolynomialModel::from_json(&text).context(|| format!("model {}", self.model))
    }
}

/// Parses `i0,j0,k0,i1,j1,k1` or `none`.
pub fn parse_crop(s: &str) -> Result<Option<BoundingBox>, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad crop component '{t}': {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 6 {
        return Err(format!("crop needs 6 comma-separated integers, got {}", v.len()));
    }
    Ok(Some(BoundingBox::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])))
}

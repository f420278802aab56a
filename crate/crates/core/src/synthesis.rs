//! Polynomial intensity synthesis: paired sampling, least-squares fitting,
//! coefficient averaging, the published cubic, the full HIPS transform and
//! density-plot agreement data.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{self, HistogramParams, HistogramSummary};
use crate::linalg::{least_squares, Matrix};
use crate::volume::{ImageVolume, LabelVolume};

pub const MAX_DEGREE: usize = 4;

/// Averaged cubic mapping normalized T1w to normalized WMn intensity.
pub const PUBLISHED_COEFFS: [f64; 4] = [1.0, 0.597, -2.0067, 0.4529];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel {
    pub degree: usize,
    /// Ascending: `c0 + c1 x + c2 x^2 + ...`.
    pub coeffs: Vec<f64>,
    pub fit_rmse: f64,
    pub n_samples: usize,
}

impl PolynomialModel {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::InvalidArgument(format!(
                "need 2..={} coefficients, got {}",
                MAX_DEGREE + 1,
                coeffs.len()
            )));
        }
        Ok(PolynomialModel { degree: coeffs.len() - 1, coeffs, fit_rmse: 0.0, n_samples: 0 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEGREE).contains(&self.degree) || self.coeffs.len() != self.degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "degree {} with {} coefficients",
                self.degree,
                self.coeffs.len()
            )));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) || !(self.fit_rmse >= 0.0) {
            return Err(Error::InvalidArgument("non-finite polynomial model".into()));
        }
        Ok(())
    }

    /// Horner evaluation.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: PolynomialModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The published averaged cubic: `1 + 0.597x - 2.0067x^2 + 0.4529x^3`.
pub fn paper_model() -> PolynomialModel {
    PolynomialModel { degree: 3, coeffs: PUBLISHED_COEFFS.to_vec(), fit_rmse: 0.0, n_samples: 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    /// Normalized T1w intensity.
    pub x: f64,
    /// Normalized WMn intensity.
    pub y: f64,
}

/// Masked voxel pairs in scan order; above `max_n`, a seeded uniform subset
/// (still in scan order).
pub fn sample_pairs(
    t1_norm: &ImageVolume,
    wmn_norm: &ImageVolume,
    mask: &LabelVolume,
    max_n: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    t1_norm.grid().check_same(wmn_norm.grid(), "T1w vs WMn")?;
    t1_norm.grid().check_same(mask.grid(), "T1w vs mask")?;
    let idx: Vec<usize> = mask.data().iter().enumerate().filter(|(_, &m)| m != 0).map(|(i, _)| i).collect();
    if idx.is_empty() {
        return Err(Error::Empty("mask selects no voxels".into()));
    }
    let chosen: Vec<usize> = if idx.len() > max_n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = index::sample(&mut rng, idx.len(), max_n).into_vec();
        pick.sort_unstable();
        pick.into_iter().map(|p| idx[p]).collect()
    } else {
        idx
    };
    Ok(chosen.into_iter().map(|i| PairSample { x: t1_norm.data()[i] as f64, y: wmn_norm.data()[i] as f64 }).collect())
}

/// Ordinary least squares on the Vandermonde system.
pub fn fit_polynomial(pairs: &[PairSample], degree: usize) -> Result<PolynomialModel> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(Error::InvalidArgument(format!("degree must be in 1..={MAX_DEGREE}, got {degree}")));
    }
    if pairs.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::InvalidArgument("non-finite pair sample".into()));
    }
    let mut xs: Vec<f64> = pairs.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < degree + 1 {
        return Err(Error::RankDeficient(format!("{} distinct x values for a degree-{degree} fit", xs.len())));
    }
    let mut design = Matrix::zeros(pairs.len(), degree + 1);
    for (r, p) in pairs.iter().enumerate() {
        let mut v = 1.0;
        for c in 0..=degree {
            design[(r, c)] = v;
            v *= p.x;
        }
    }
    let y: Vec<f64> = pairs.iter().map(|p| p.y).collect();
    let fit = least_squares(&design, &y)?;
    let mut model = PolynomialModel { degree, coeffs: fit.coefficients, fit_rmse: 0.0, n_samples: pairs.len() };
    model.fit_rmse = rmse(&model, pairs);
    Ok(model)
}

pub fn rmse(model: &PolynomialModel, pairs: &[PairSample]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sse: f64 = pairs.iter().map(|p| (model.eval(p.x) - p.y).powi(2)).sum();
    (sse / pairs.len() as f64).sqrt()
}

/// Coefficient-wise unweighted mean.
pub fn average_models(models: &[PolynomialModel]) -> Result<PolynomialModel> {
    let first = models.first().ok_or_else(|| Error::Empty("no models to average".into()))?;
    if models.iter().any(|m| m.degree != first.degree) {
        return Err(Error::InvalidArgument("cannot average models of mixed degree".into()));
    }
    let k = models.len() as f64;
    let coeffs = (0..=first.degree).map(|c| models.iter().map(|m| m.coeffs[c]).sum::<f64>() / k).collect();
    Ok(PolynomialModel {
        degree: first.degree,
        coeffs,
        fit_rmse: models.iter().map(|m| m.fit_rmse).sum::<f64>() / k,
        n_samples: models.iter().map(|m| m.n_samples).sum(),
    })
}

pub fn apply_polynomial(model: &PolynomialModel, vol: &ImageVolume) -> ImageVolume {
    vol.map(|v| model.eval(v as f64) as f32)
}

/// Per-degree validation error and the chosen degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSelection {
    pub degrees: Vec<usize>,
    pub validation_rmse: Vec<f64>,
    pub selected: usize,
}

/// Fits each candidate degree on `train` and scores it on `validation`.
/// The lowest degree whose validation RMSE is within `rel_tol` of the best
/// is selected.
pub fn select_degree(
    train: &[PairSample],
    validation: &[PairSample],
    degrees: &[usize],
    rel_tol: f64,
) -> Result<DegreeSelection> {
    if degrees.is_empty() || validation.is_empty() {
        return Err(Error::Empty("degree selection needs candidates and validation data".into()));
    }
    let mut validation_rmse = Vec::with_capacity(degrees.len());
    for &d in degrees {
        let m = fit_polynomial(train, d)?;
        validation_rmse.push(rmse(&m, validation));
    }
    let best = validation_rmse.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..degrees.len()).collect();
    order.sort_by_key(|&i| degrees[i]);
    let pick = order.into_iter().find(|&i| validation_rmse[i] <= best * (1.0 + rel_tol)).unwrap();
    Ok(DegreeSelection { degrees: degrees.to_vec(), validation_rmse, selected: degrees[pick] })
}

/// Final intensity scale of the synthesized image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescaleTarget {
    /// Multiply the stretched [0, 1] image by a fixed standard WM value.
    Fixed(f64),
    /// Multiply by the input's own WM reference.
    InputReference,
}

impl Default for RescaleTarget {
    fn default() -> Self {
        RescaleTarget::Fixed(1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HipsParams {
    pub histogram: HistogramParams,
    pub stretch_low: f64,
    pub stretch_high: f64,
    pub rescale: RescaleTarget,
}

impl Default for HipsParams {
    fn default() -> Self {
        HipsParams {
            histogram: HistogramParams::default(),
            stretch_low: 1.0,
            stretch_high: 99.0,
            rescale: RescaleTarget::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HipsOutput {
    /// WMn-like image after rescaling.
    pub volume: ImageVolume,
    /// Stretched image in [0, 1] before rescaling.
    pub stretched: ImageVolume,
    /// WM histogram of the middle axial slice.
    pub summary: HistogramSummary,
    /// Polynomial-output values mapped to 0 and 1 by the stretch.
    pub stretch_bounds: (f64, f64),
    pub rescale_value: f64,
}

/// Normalize by the WM tail reference, apply the polynomial on the
/// foreground, stretch, and rescale. Voxels that are zero in the input stay
/// zero.
pub fn hips_transform(t1_cropped: &ImageVolume, model: &PolynomialModel, params: &HipsParams) -> Result<HipsOutput> {
    model.validate()?;
    if t1_cropped.data().iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("input has no foreground".into()));
    }
    let summary = intensity::slice_reference(t1_cropped, &params.histogram)?;
    let wm_ref = summary.reference_value;
    if !(wm_ref > 0.0) {
        return Err(Error::Degenerate(format!("WM reference {wm_ref} is not positive")));
    }
    let mapped: Vec<f64> =
        t1_cropped.data().iter().map(|&v| if v == 0.0 { 0.0 } else { model.eval(v as f64 / wm_ref) }).collect();
    let mut fg: Vec<f64> = t1_cropped.data().iter().zip(&mapped).filter(|(&v, _)| v != 0.0).map(|(_, &m)| m).collect();
    if !(0.0 <= params.stretch_low && params.stretch_low < params.stretch_high && params.stretch_high <= 100.0) {
        return Err(Error::InvalidArgument("stretch percentiles out of order".into()));
    }
    fg.sort_by(f64::total_cmp);
    let a = intensity::percentile_sorted(&fg, params.stretch_low);
    let b = intensity::percentile_sorted(&fg, params.stretch_high);
    if !(b > a) {
        return Err(Error::Degenerate(format!("stretch range is empty ({a} .. {b})")));
    }
    let stretched_data: Vec<f32> = t1_cropped
        .data()
        .iter()
        .zip(&mapped)
        .map(|(&v, &m)| if v == 0.0 { 0.0 } else { ((m - a) / (b - a)).clamp(0.0, 1.0) as f32 })
        .collect();
    let stretched = t1_cropped.with_grid_of(stretched_data)?;
    let rescale_value = match params.rescale {
        RescaleTarget::Fixed(v) if v > 0.0 && v.is_finite() => v,
        RescaleTarget::Fixed(v) => {
            return Err(Error::InvalidArgument(format!("rescale target must be positive, got {v}")))
        }
        RescaleTarget::InputReference => wm_ref,
    };
    let volume = intensity::rescale(&stretched, rescale_value);
    Ok(HipsOutput { volume, stretched, summary, stretch_bounds: (a, b), rescale_value })
}

/// Joint histogram of native vs synthesized intensities plus agreement
/// statistics against the unity line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPlotData {
    pub nbins: usize,
    /// Shared `[lo, hi]` range of both axes.
    pub range: (f64, f64),
    /// `counts[bx * nbins + by]`, x = native, y = synthesized.
    pub counts: Vec<u64>,
    pub pearson_r: f64,
    pub rms_unity_deviation: f64,
    pub n: usize,
}

impl DensityPlotData {
    pub fn count(&self, bx: usize, by: usize) -> u64 {
        self.counts[bx * self.nbins + by]
    }

    pub fn bin_center(&self, b: usize) -> f64 {
        let (lo, hi) = self.range;
        lo + (b as f64 + 0.5) * (hi - lo) / self.nbins as f64
    }

    /// `bin_x,bin_y,count` rows for nonzero cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_x,bin_y,count\n");
        for bx in 0..self.nbins {
            for by in 0..self.nbins {
                let c = self.count(bx, by);
                if c > 0 {
                    out.push_str(&format!("{bx},{by},{c}\n"));
                }
            }
        }
        out
    }
}

/// Pearson correlation; constant inputs give 1 when the pairs coincide and
/// 0 otherwise.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return if x == y { 1.0 } else { 0.0 };
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

pub fn density_plot_data(
    native: &ImageVolume,
    synth: &ImageVolume,
    mask: &LabelVolume,
    nbins: usize,
) -> Result<DensityPlotData> {
    native.grid().check_same(synth.grid(), "native vs synthesized")?;
    native.grid().check_same(mask.grid(), "image vs mask")?;
    if nbins == 0 {
        return Err(Error::InvalidArgument("nbins must be positive".into()));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for ((&m, &a), &b) in mask.data().iter().zip(native.data()).zip(synth.data()) {
        if m != 0 {
            xs.push(a as f64);
            ys.push(b as f64);
        }
    }
    if xs.is_empty() {
        return Err(Error::Empty("mask selects no voxels".into()));
    }
    let lo = xs.iter().chain(&ys).cloned().fold(f64::INFINITY, f64::min);
    let mut hi = xs.iter().chain(&ys).cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let bin = |v: f64| (((v - lo) / (hi - lo) * nbins as f64).floor() as usize).min(nbins - 1);
    let mut counts = vec![0u64; nbins * nbins];
    for (a, b) in xs.iter().zip(&ys) {
        counts[bin(*a) * nbins + bin(*b)] += 1;
    }
    let msd = xs.iter().zip(&ys).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / xs.len() as f64;
    Ok(DensityPlotData {
        nbins,
        range: (lo, hi),
        counts,
        pearson_r: pearson(&xs, &ys),
        rms_unity_deviation: msd.sqrt(),
        n: xs.len(),
    })
}

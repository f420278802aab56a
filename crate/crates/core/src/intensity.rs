//! Intensity machinery: histograms, tissue-peak selection, tail-reference
//! normalization, contrast stretching, rescaling and inversion-recovery
//! signal synthesis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ImageVolume;

/// Equal-width histogram over the nonzero values of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn nbins(&self) -> usize {
        self.counts.len()
    }

    pub fn center(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Which voxel count the tail fraction is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDenominator {
    /// Voxels in bins strictly above the mode.
    #[default]
    AboveMode,
    /// Every histogrammed voxel.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    pub nbins: usize,
    pub peak_height_frac: f64,
    pub smooth_window: usize,
    pub tail_frac: f64,
    pub tail_denominator: TailDenominator,
}

impl Default for HistogramParams {
    fn default() -> Self {
        HistogramParams {
            nbins: 256,
            peak_height_frac: 0.10,
            smooth_window: 3,
            tail_frac: 0.01,
            tail_denominator: TailDenominator::AboveMode,
        }
    }
}

/// Histogram plus the selected tissue mode and the normalization reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mode_bin: usize,
    pub mode_value: f64,
    pub reference_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tissue {
    Wm,
    Csf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub tissue: Tissue,
    pub reference_value: f64,
}

impl NormalizationParams {
    pub fn new(tissue: Tissue, reference_value: f64) -> Result<Self> {
        if !(reference_value > 0.0 && reference_value.is_finite()) {
            return Err(Error::InvalidArgument(format!("reference value must be positive, got {reference_value}")));
        }
        Ok(NormalizationParams { tissue, reference_value })
    }
}

/// Histogram of the nonzero values; zeros are background.
pub fn build_histogram(values: &[f32], nbins: usize) -> Result<Histogram> {
    if nbins == 0 {
        return Err(Error::InvalidArgument("nbins must be positive".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut n = 0usize;
    for &v in values.iter().filter(|&&v| v != 0.0) {
        let v = v as f64;
        lo = lo.min(v);
        hi = hi.max(v);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("no nonzero values to histogram".into()));
    }
    if !(hi > lo) {
        return Err(Error::Degenerate("all nonzero values are equal".into()));
    }
    let width = (hi - lo) / nbins as f64;
    let mut edges: Vec<f64> = (0..=nbins).map(|i| lo + i as f64 * width).collect();
    edges[nbins] = hi;
    let mut counts = vec![0u64; nbins];
    let scale = nbins as f64 / (hi - lo);
    for &v in values.iter().filter(|&&v| v != 0.0) {
        let b = (((v as f64) - lo) * scale).floor() as usize;
        counts[b.min(nbins - 1)] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Centered moving average; the window is truncated at the ends.
pub fn smooth_counts(counts: &[u64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    let n = counts.len();
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half).min(n - 1);
            let s: u64 = counts[a..=b].iter().sum();
            s as f64 / (b - a + 1) as f64
        })
        .collect()
}

/// Rightmost local maximum of the smoothed counts whose height reaches
/// `min_height_frac` of the global smoothed maximum. Returns
/// `(mode_bin, mode_value)` with the value at the bin centre.
pub fn select_target_peak(hist: &Histogram, min_height_frac: f64, smooth_window: usize) -> Result<(usize, f64)> {
    let s = smooth_counts(&hist.counts, smooth_window);
    let global = s.iter().cloned().fold(0.0, f64::max);
    if global <= 0.0 {
        return Err(Error::NoPeak);
    }
    let floor = min_height_frac * global;
    let n = s.len();
    (0..n)
        .rev()
        .find(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { s[i - 1] };
            let right = if i + 1 == n { f64::NEG_INFINITY } else { s[i + 1] };
            s[i] > 0.0 && s[i] >= floor && s[i] >= left && s[i] >= right
        })
        .map(|i| (i, hist.center(i)))
        .ok_or(Error::NoPeak)
}

/// Centre of the highest bin above `mode_bin` holding at least `frac` of the
/// denominator count. Trims the sparse high-intensity tail.
pub fn tail_reference(hist: &Histogram, mode_bin: usize, frac: f64, denominator: TailDenominator) -> Result<f64> {
    if mode_bin >= hist.nbins() {
        return Err(Error::InvalidArgument(format!("mode bin {mode_bin} out of range")));
    }
    let above = &hist.counts[mode_bin + 1..];
    let n_above: u64 = above.iter().sum();
    if n_above == 0 {
        return Err(Error::NoTail);
    }
    let denom = match denominator {
        TailDenominator::AboveMode => n_above,
        TailDenominator::Total => hist.total(),
    };
    let threshold = frac * denom as f64;
    above
        .iter()
        .enumerate()
        .rev()
        .find(|(_, &c)| c > 0 && c as f64 >= threshold)
        .map(|(off, _)| hist.center(mode_bin + 1 + off))
        .ok_or(Error::NoTail)
}

/// Full reference computation on a sample of intensities.
pub fn summarize(values: &[f32], params: &HistogramParams) -> Result<HistogramSummary> {
    let hist = build_histogram(values, params.nbins)?;
    let (mode_bin, mode_value) = select_target_peak(&hist, params.peak_height_frac, params.smooth_window)?;
    let reference_value = tail_reference(&hist, mode_bin, params.tail_frac, params.tail_denominator)?;
    Ok(HistogramSummary { bin_edges: hist.edges, counts: hist.counts, mode_bin, mode_value, reference_value })
}

/// Reference of the tissue of interest measured on the middle axial slice.
pub fn slice_reference(vol: &ImageVolume, params: &HistogramParams) -> Result<HistogramSummary> {
    summarize(&vol.middle_axial_slice().values, params)
}

pub fn normalize(vol: &ImageVolume, reference_value: f64) -> Result<ImageVolume> {
    if !(reference_value > 0.0 && reference_value.is_finite()) {
        return Err(Error::InvalidArgument(format!("normalization reference must be positive, got {reference_value}")));
    }
    Ok(vol.map(|v| (v as f64 / reference_value) as f32))
}

pub fn rescale(vol: &ImageVolume, reference_value: f64) -> ImageVolume {
    vol.map(|v| (v as f64 * reference_value) as f32)
}

/// Linear-interpolated percentile (`p` in [0, 100]) of a sorted sample.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

/// Percentile bounds of the nonzero voxels.
pub fn foreground_percentiles(vol: &ImageVolume, p_low: f64, p_high: f64) -> Result<(f64, f64)> {
    if !(0.0 <= p_low && p_low < p_high && p_high <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({p_low}, {p_high})"
        )));
    }
    let mut fg: Vec<f64> = vol.data().iter().filter(|&&v| v != 0.0).map(|&v| v as f64).collect();
    if fg.is_empty() {
        return Err(Error::Empty("no foreground voxels to stretch".into()));
    }
    fg.sort_by(f64::total_cmp);
    Ok((percentile_sorted(&fg, p_low), percentile_sorted(&fg, p_high)))
}

/// Maps the `[p_low, p_high]` percentile range of the nonzero voxels onto
/// `[0, 1]` with clamping; background zeros stay zero.
pub fn contrast_stretch(vol: &ImageVolume, p_low: f64, p_high: f64) -> Result<ImageVolume> {
    let (a, b) = foreground_percentiles(vol, p_low, p_high)?;
    stretch_with(vol, a, b)
}

pub fn stretch_with(vol: &ImageVolume, a: f64, b: f64) -> Result<ImageVolume> {
    if !(b > a) {
        return Err(Error::Degenerate(format!("stretch range is empty ({a} .. {b})")));
    }
    let span = b - a;
    Ok(vol.map(|v| if v == 0.0 { 0.0 } else { (((v as f64) - a) / span).clamp(0.0, 1.0) as f32 }))
}

/// Inversion-recovery inversion time used for WMn contrast (ms).
pub const WMN_INVERSION_TIME_MS: f64 = 670.0;

/// Longitudinal signal `1 - 2 exp(-TI / T1)`; voxels with `T1 <= 0` give 0.
pub fn ir_signal(t1_ms: f64, ti_ms: f64, magnitude: bool) -> f64 {
    if t1_ms <= 0.0 {
        return 0.0;
    }
    let s = 1.0 - 2.0 * (-ti_ms / t1_ms).exp();
    if magnitude {
        s.abs()
    } else {
        s
    }
}

pub fn ir_synthesize(t1map: &ImageVolume, ti_ms: f64, magnitude: bool) -> Result<ImageVolume> {
    if !(ti_ms > 0.0) {
        return Err(Error::InvalidArgument(format!("TI must be positive, got {ti_ms}")));
    }
    Ok(t1map.map(|t1| ir_signal(t1 as f64, ti_ms, magnitude) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn hist(counts: &[u64]) -> Histogram {
        Histogram { edges: (0..=counts.len()).map(|i| i as f64).collect(), counts: counts.to_vec() }
    }

    #[test]
    fn histogram_hand_count() {
        let h = build_histogram(&[1.0, 1.0, 2.0, 2.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.edges, vec![1.0, 2.0, 3.0]);
        assert_eq!(h.counts, vec![2, 4]);
    }

    #[test]
    fn histogram_excludes_zeros_and_scales() {
        let v = [0.0, 0.3, 0.9, 1.7, 0.0, 2.5, 1.1];
        let h = build_histogram(&v, 4).unwrap();
        assert_eq!(h.total(), 5);
        let scaled: Vec<f32> = v.iter().map(|x| x * 4.0).collect();
        let hs = build_histogram(&scaled, 4).unwrap();
        assert_eq!(hs.counts, h.counts);
        for (a, b) in hs.edges.iter().zip(&h.edges) {
            assert!((a - 4.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn histogram_errors() {
        assert!(matches!(build_histogram(&[0.0; 10], 8), Err(Error::Empty(_))));
        assert!(matches!(build_histogram(&[], 8), Err(Error::Empty(_))));
        assert!(matches!(build_histogram(&[2.0, 0.0, 2.0], 8), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_peak() {
        let h = hist(&[1, 5, 20, 5, 1]);
        assert_eq!(select_target_peak(&h, 0.1, 3).unwrap().0, 2);
    }

    #[test]
    fn right_peak_above_floor_wins() {
        // smoothed (window 3) heights: 100 at bin 2, 40 at bin 8
        let counts = [0, 100, 100, 100, 0, 0, 0, 40, 40, 40, 0];
        let h = hist(&counts);
        let s = smooth_counts(&counts, 3);
        assert!((s[2] - 100.0).abs() < 1e-12 && (s[8] - 40.0).abs() < 1e-12);
        let (bin, value) = select_target_peak(&h, 0.10, 3).unwrap();
        assert_eq!(bin, 8);
        assert_eq!(value, 8.5);
    }

    #[test]
    fn small_right_bump_is_ignored() {
        let counts = [0, 100, 100, 100, 0, 0, 0, 5, 5, 5, 0];
        let (bin, _) = select_target_peak(&hist(&counts), 0.10, 3).unwrap();
        assert_eq!(bin, 2);
    }

    #[test]
    fn tail_reference_hand_case() {
        // mode at bin 1; above-mode counts {300, 40, 2}: threshold 3.42
        let h = hist(&[10, 500, 300, 40, 2]);
        let r = tail_reference(&h, 1, 0.01, TailDenominator::AboveMode).unwrap();
        assert_eq!(r, h.center(3));
        // whole-histogram denominator: threshold 8.52, same answer here
        let r = tail_reference(&h, 1, 0.01, TailDenominator::Total).unwrap();
        assert_eq!(r, h.center(3));
        // denominators diverge once the tail bin falls between thresholds
        let h = hist(&[1_000, 5_000, 300, 40, 5]);
        assert_eq!(tail_reference(&h, 1, 0.01, TailDenominator::AboveMode).unwrap(), h.center(4));
        assert_eq!(tail_reference(&h, 1, 0.01, TailDenominator::Total).unwrap(), h.center(2));
    }

    #[test]
    fn tail_reference_single_bin_and_errors() {
        let h = hist(&[5, 50, 0, 1]);
        assert_eq!(tail_reference(&h, 1, 0.01, TailDenominator::AboveMode).unwrap(), h.center(3));
        let h = hist(&[5, 50, 0, 0]);
        assert!(matches!(tail_reference(&h, 1, 0.01, TailDenominator::AboveMode), Err(Error::NoTail)));
        assert!(matches!(tail_reference(&h, 3, 0.01, TailDenominator::AboveMode), Err(Error::NoTail)));
    }

    fn vol(data: Vec<f32>) -> ImageVolume {
        let n = data.len();
        ImageVolume::new(Grid::with_dims([n, 1, 1]), data).unwrap()
    }

    #[test]
    fn normalize_cases() {
        let v = vol(vec![200.0, 50.0, 0.0]);
        assert_eq!(normalize(&v, 1.0).unwrap(), v);
        assert_eq!(normalize(&v, 100.0).unwrap().data()[0], 2.0);
        let c = 2.0f32;
        assert_eq!(normalize(&v.scaled(c), 100.0 * c as f64).unwrap(), normalize(&v, 100.0).unwrap());
        assert!(normalize(&v, 0.0).is_err());
        assert!(normalize(&v, -3.0).is_err());
    }

    #[test]
    fn stretch_cases() {
        let v = vol(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let s = contrast_stretch(&v, 0.0, 100.0).unwrap();
        for (got, want) in s.data().iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!((got - want).abs() < 1e-6);
        }

        let u: Vec<f32> = (1..=100).map(|i| i as f32 / 100.0).collect();
        let s = contrast_stretch(&vol(u.clone()), 0.0, 100.0).unwrap();
        for (a, b) in s.data().iter().zip(&u) {
            // uniform on [0.01, 1]: map (x - 0.01) / 0.99
            assert!((a - (b - 0.01) / 0.99).abs() < 1e-6);
        }

        let wide = vol(vec![-0.4, 0.0, 0.2, 0.7, 1.0, 1.3]);
        let s = contrast_stretch(&wide, 10.0, 90.0).unwrap();
        assert!(s.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(s.data()[1], 0.0);

        assert!(matches!(contrast_stretch(&vol(vec![0.5; 4]), 1.0, 99.0), Err(Error::Degenerate(_))));
        assert!(contrast_stretch(&v, 50.0, 10.0).is_err());
        assert!(contrast_stretch(&vol(vec![0.0; 3]), 1.0, 99.0).is_err());
    }

    #[test]
    fn rescale_cases() {
        let v = vol(vec![0.5, 0.25]);
        assert_eq!(rescale(&v, 1.0), v);
        assert_eq!(rescale(&v, 400.0).data()[0], 200.0);
        let raw = vol(vec![120.0, 37.5, 480.0]);
        let back = rescale(&normalize(&raw, 480.0).unwrap(), 480.0);
        for (a, b) in back.data().iter().zip(raw.data()) {
            assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn ir_equation() {
        let null_t1 = WMN_INVERSION_TIME_MS / std::f64::consts::LN_2;
        assert!(ir_signal(null_t1, WMN_INVERSION_TIME_MS, true).abs() < 1e-9);
        assert!((ir_signal(1e-3, 670.0, false) - 1.0).abs() < 1e-12);
        let s = ir_signal(3000.0, 670.0, true);
        assert!((s - (1.0 - 2.0 * (-670.0f64 / 3000.0).exp()).abs()).abs() < 1e-15);
        // |1 - 2 exp(-0.22333)| = 0.59970
        assert!((s - 0.59970).abs() < 1e-4);
        // T1 longer than the null point leaves negative longitudinal signal
        assert!(ir_signal(3000.0, 670.0, false) < 0.0);
        assert!(ir_signal(500.0, 670.0, false) > 0.0);
        assert_eq!(ir_signal(0.0, 670.0, true), 0.0);
        assert_eq!(ir_signal(-10.0, 670.0, false), 0.0);

        let t1 = vol(vec![0.0, 500.0, null_t1 as f32, 3000.0]);
        let s = ir_synthesize(&t1, 670.0, true).unwrap();
        assert!(s.data().iter().all(|&x| x >= 0.0));
        assert!(ir_synthesize(&t1, 0.0, true).is_err());
    }

    #[test]
    fn slice_reference_on_two_tissue_slice() {
        // 2 tissues on the middle slice; brighter one at ~1.0 with a spread
        let nx = 40;
        let mut data = vec![0f32; nx * nx * 3];
        for j in 0..nx {
            for i in 0..nx {
                let idx = i + nx * (j + nx);
                let a = ((i * 7 + j * 3) % 11) as f32 / 10.0;
                let b = ((i * 3 + j * 5) % 7) as f32 / 6.0;
                data[idx] = if i < 10 { 0.3 } else { 0.9 + 0.05 * (a + b) };
            }
        }
        let v = ImageVolume::new(Grid::with_dims([nx, nx, 3]), data).unwrap();
        let s = slice_reference(&v, &HistogramParams::default()).unwrap();
        assert!(s.mode_value > 0.9);
        assert!(s.reference_value >= s.mode_value && s.reference_value <= 1.0001);
        assert!(s.mode_value >= s.bin_edges[s.mode_bin] && s.mode_value <= s.bin_edges[s.mode_bin + 1]);
    }
}

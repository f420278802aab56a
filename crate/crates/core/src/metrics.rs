//! Segmentation and image agreement: Dice, volume error, VSI, SSIM,
//! Bland-Altman limits, paired t-tests and the Bonferroni threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special;
use crate::volume::{nucleus_name, ImageVolume, LabelVolume, NUCLEI};

/// Dice overlap. Both-empty masks score 1 with `both_empty` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dice {
    pub value: f64,
    pub both_empty: bool,
}

/// Which voxels a metric row covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Label(u8),
    /// Union of nuclei 1..=12.
    Thalamus,
}

impl Structure {
    #[inline]
    pub fn contains(&self, v: u8) -> bool {
        match *self {
            Structure::Label(l) => v == l,
            Structure::Thalamus => (1..=NUCLEI.len() as u8).contains(&v),
        }
    }

    /// Row id in reports; the thalamus union uses 0.
    pub fn id(&self) -> u8 {
        match *self {
            Structure::Label(l) => l,
            Structure::Thalamus => 0,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Structure::Label(l) => nucleus_name(l).map_or_else(|| format!("label{l}"), str::to_string),
            Structure::Thalamus => "THAL".to_string(),
        }
    }

    /// THAL followed by the 12 nuclei.
    pub fn report_set() -> Vec<Structure> {
        std::iter::once(Structure::Thalamus).chain(NUCLEI.iter().map(|(id, _)| Structure::Label(*id))).collect()
    }
}

/// `(|A|, |B|, |A and B|)` for one structure.
pub fn overlap_counts(a: &LabelVolume, b: &LabelVolume, s: Structure) -> Result<(usize, usize, usize)> {
    a.grid().check_same(b.grid(), "segmentation vs reference")?;
    let (mut na, mut nb, mut both) = (0, 0, 0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (s.contains(x), s.contains(y));
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok((na, nb, both))
}

fn dice_from_counts(na: usize, nb: usize, both: usize) -> Dice {
    if na + nb == 0 {
        Dice { value: 1.0, both_empty: true }
    } else {
        Dice { value: 2.0 * both as f64 / (na + nb) as f64, both_empty: false }
    }
}

pub fn dice(a: &LabelVolume, b: &LabelVolume, label: u8) -> Result<Dice> {
    dice_structure(a, b, Structure::Label(label))
}

pub fn dice_structure(a: &LabelVolume, b: &LabelVolume, s: Structure) -> Result<Dice> {
    let (na, nb, both) = overlap_counts(a, b, s)?;
    Ok(dice_from_counts(na, nb, both))
}

/// Signed and absolute percentage volume error of `seg` against `reference`.
pub fn volume_error_pct_counts(v_seg: usize, v_ref: usize) -> Result<(f64, f64)> {
    if v_ref == 0 {
        return Err(Error::Empty("reference structure is empty".into()));
    }
    let signed = 100.0 * (v_seg as f64 - v_ref as f64) / v_ref as f64;
    Ok((signed, signed.abs()))
}

pub fn volume_error_pct(seg: &LabelVolume, reference: &LabelVolume, label: u8) -> Result<(f64, f64)> {
    let (ns, nr, _) = overlap_counts(seg, reference, Structure::Label(label))?;
    volume_error_pct_counts(ns, nr)
}

/// Volume similarity index `1 - |a - b| / (a + b)`.
pub fn vsi(v_a: usize, v_b: usize) -> Result<f64> {
    if v_a + v_b == 0 {
        return Err(Error::Empty("both volumes are zero".into()));
    }
    Ok(1.0 - (v_a as f64 - v_b as f64).abs() / (v_a + v_b) as f64)
}

/// One row of a per-structure agreement table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub label_id: u8,
    pub label_name: String,
    pub dice: f64,
    pub both_empty: bool,
    /// `None` when the reference structure is empty.
    pub volume_error_pct_signed: Option<f64>,
    pub volume_error_pct_abs: Option<f64>,
    pub vsi: f64,
    pub volume_seg: usize,
    pub volume_ref: usize,
}

pub fn agreement_row(seg: &LabelVolume, reference: &LabelVolume, s: Structure) -> Result<AgreementRow> {
    let (ns, nr, both) = overlap_counts(seg, reference, s)?;
    let d = dice_from_counts(ns, nr, both);
    let ve = volume_error_pct_counts(ns, nr).ok();
    Ok(AgreementRow {
        label_id: s.id(),
        label_name: s.name(),
        dice: d.value,
        both_empty: d.both_empty,
        volume_error_pct_signed: ve.map(|v| v.0),
        volume_error_pct_abs: ve.map(|v| v.1),
        vsi: vsi(ns, nr).unwrap_or(1.0),
        volume_seg: ns,
        volume_ref: nr,
    })
}

/// THAL plus the 12 nuclei.
pub fn agreement_report(seg: &LabelVolume, reference: &LabelVolume) -> Result<Vec<AgreementRow>> {
    Structure::report_set().into_iter().map(|s| agreement_row(seg, reference, s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 7, k1: 0.01, k2: 0.03 }
    }
}

/// Summed-volume table with a zero border: `t[(i,j,k)]` sums `[0,i)x[0,j)x[0,k)`.
struct Integral {
    dims: [usize; 3],
    t: Vec<f64>,
}

impl Integral {
    fn new(dims: [usize; 3], f: impl Fn(usize) -> f64) -> Self {
        let [nx, ny, nz] = dims;
        let (sx, sy) = (nx + 1, ny + 1);
        let mut t = vec![0.0; sx * sy * (nz + 1)];
        for k in 0..nz {
            for j in 0..ny {
                let mut row = 0.0;
                for i in 0..nx {
                    row += f(i + nx * (j + ny * k));
                    let at = (i + 1) + sx * ((j + 1) + sy * (k + 1));
                    t[at] = row + t[at - sx] + t[at - sx * sy] - t[at - sx - sx * sy];
                }
            }
        }
        Integral { dims, t }
    }

    /// Sum over `[lo, hi)` per axis.
    fn sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let sx = self.dims[0] + 1;
        let sy = self.dims[1] + 1;
        let at = |i: usize, j: usize, k: usize| self.t[i + sx * (j + sy * k)];
        at(hi[0], hi[1], hi[2]) - at(lo[0], hi[1], hi[2]) - at(hi[0], lo[1], hi[2]) - at(hi[0], hi[1], lo[2])
            + at(lo[0], lo[1], hi[2])
            + at(lo[0], hi[1], lo[2])
            + at(hi[0], lo[1], lo[2])
            - at(lo[0], lo[1], lo[2])
    }
}

/// Mean local SSIM over masked voxels whose cubic window lies inside the grid.
pub fn ssim(a: &ImageVolume, b: &ImageVolume, mask: &LabelVolume, params: SsimParams) -> Result<f64> {
    a.grid().check_same(b.grid(), "ssim inputs")?;
    a.grid().check_same(mask.grid(), "ssim mask")?;
    if params.window == 0 || params.window % 2 == 0 {
        return Err(Error::InvalidArgument(format!("window must be odd, got {}", params.window)));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for ((&m, &x), &y) in mask.data().iter().zip(a.data()).zip(b.data()) {
        if m != 0 {
            lo = lo.min(x as f64).min(y as f64);
            hi = hi.max(x as f64).max(y as f64);
        }
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Degenerate("zero dynamic range under the mask".into()));
    }
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let dims = a.dims();
    let (da, db) = (a.data(), b.data());
    let ia = Integral::new(dims, |i| da[i] as f64);
    let ib = Integral::new(dims, |i| db[i] as f64);
    let iaa = Integral::new(dims, |i| (da[i] as f64).powi(2));
    let ibb = Integral::new(dims, |i| (db[i] as f64).powi(2));
    let iab = Integral::new(dims, |i| da[i] as f64 * db[i] as f64);
    let r = params.window / 2;
    let nw = params.window.pow(3) as f64;
    let (mut total, mut count) = (0.0, 0usize);
    for (idx, &m) in mask.data().iter().enumerate() {
        if m == 0 {
            continue;
        }
        let c = a.grid().coords(idx);
        if (0..3).any(|ax| c[ax] < r || c[ax] + r >= dims[ax]) {
            continue;
        }
        let lo = [c[0] - r, c[1] - r, c[2] - r];
        let hi = [c[0] + r + 1, c[1] + r + 1, c[2] + r + 1];
        let mu_a = ia.sum(lo, hi) / nw;
        let mu_b = ib.sum(lo, hi) / nw;
        let var_a = (iaa.sum(lo, hi) / nw - mu_a * mu_a).max(0.0);
        let var_b = (ibb.sum(lo, hi) / nw - mu_b * mu_b).max(0.0);
        let cov = iab.sum(lo, hi) / nw - mu_a * mu_b;
        let s =
            ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        total += s;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Empty("mask covers no full SSIM window".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

pub fn bland_altman(diffs: &[f64]) -> Result<BlandAltman> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("Bland-Altman needs n >= 2, got {n}")));
    }
    let (mean, sd) = mean_sd(diffs);
    Ok(BlandAltman { n, mean_diff: mean, sd_diff: sd, loa_low: mean - 1.96 * sd, loa_high: mean + 1.96 * sd })
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

pub fn paired_ttest(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("paired t-test needs n >= 2".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let (mean, sd) = mean_sd(&d);
    if sd == 0.0 {
        if mean == 0.0 {
            return Ok(TTest { t: 0.0, df: (d.len() - 1) as f64, p_two_sided: 1.0 });
        }
        return Err(Error::Degenerate("differences have zero variance".into()));
    }
    let n = d.len() as f64;
    let t = mean / (sd / n.sqrt());
    let df = n - 1.0;
    Ok(TTest { t, df, p_two_sided: special::student_t_two_sided(t, df) })
}

pub fn bonferroni_threshold(alpha: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("number of comparisons must be >= 1".into()));
    }
    Ok(alpha / m as f64)
}

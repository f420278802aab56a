//! Similarity metrics, multi-resolution affine registration, and dense
//! displacement fields (application, inversion, composition).
//!
//! All transforms use the pull-back convention: a transform or field attached
//! to an output grid maps each output voxel to the point sampled in the source.

mod field;
mod metric;
mod transform;

pub use field::{
    affine_to_field, apply_field, chain_fields, compose_fields, inversion_residual, invert_field, pull_back,
    DisplacementField, InversionReport, INVERT_MAX_ITER, INVERT_TOL,
};
pub use metric::{cc_slices, metric_cc, metric_mi, mi_from_counts, mi_slices};
pub use transform::{apply_affine, resample_affine, rotation_matrix, AffineTransform, Interp, Sample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, ImageVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cc,
    Mi,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cc" => Ok(Metric::Cc),
            "mi" => Ok(Metric::Mi),
            other => Err(Error::InvalidArgument(format!("unknown metric '{other}' (cc|mi)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub metric: Metric,
    pub pyramid_levels: usize,
    pub max_passes_per_level: usize,
    pub tol: f64,
    pub mi_bins: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig { metric: Metric::Cc, pyramid_levels: 3, max_passes_per_level: 10, tol: 1e-5, mi_bins: 32 }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidArgument("pyramid_levels must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be > 0".into()));
        }
        if self.mi_bins < 2 {
            return Err(Error::InvalidArgument("mi_bins must be >= 2".into()));
        }
        Ok(())
    }
}

/// The 12 affine parameters: translation (voxels), rotation (radians),
/// log-scale and shear, applied about the fixed image centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams(pub [f64; 12]);

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams([0.0; 12])
    }
}

impl AffineParams {
    pub fn linear(&self) -> [[f64; 3]; 3] {
        let p = &self.0;
        let r = rotation_matrix(p[3], p[4], p[5]);
        let s = [p[6].exp(), p[7].exp(), p[8].exp()];
        let sh = [[1.0, p[9], p[10]], [0.0, 1.0, p[11]], [0.0, 0.0, 1.0]];
        let mut rs = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rs[i][j] = r[i][j] * s[j];
            }
        }
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| rs[i][k] * sh[k][j]).sum();
            }
        }
        out
    }

    /// `x -> L (x - c_fixed) + c_moving + t` in full-resolution voxels,
    /// re-expressed for a pyramid level whose voxels are `scale` times larger.
    /// Only the offset depends on the level.
    pub fn to_transform(&self, c_fixed: [f64; 3], c_moving: [f64; 3], scale: f64) -> Result<AffineTransform> {
        let l = self.linear();
        let mut m = crate::volume::IDENTITY_AFFINE;
        for r in 0..3 {
            m[r][..3].copy_from_slice(&l[r]);
            let lc: f64 = (0..3).map(|c| l[r][c] * c_fixed[c]).sum();
            m[r][3] = (c_moving[r] + self.0[r] - lc) / scale;
        }
        AffineTransform::new(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    /// 0 is full resolution.
    pub level: usize,
    pub dims: [usize; 3],
    pub passes: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// Maps fixed voxels to moving voxels.
    pub transform: AffineTransform,
    pub params: AffineParams,
    /// Final metric at full resolution.
    pub metric_value: f64,
    pub levels: Vec<LevelReport>,
}

fn grid_center(dims: [usize; 3]) -> [f64; 3] {
    [(dims[0] as f64 - 1.0) / 2.0, (dims[1] as f64 - 1.0) / 2.0, (dims[2] as f64 - 1.0) / 2.0]
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian smoothing with replicated borders.
pub fn gaussian_smooth(vol: &ImageVolume, sigma: f64) -> ImageVolume {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let dims = vol.dims();
    let mut data: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; data.len()];
    let strides = [1, dims[0], dims[0] * dims[1]];
    for ax in 0..3 {
        let n = dims[ax] as i64;
        let st = strides[ax];
        for (idx, out) in tmp.iter_mut().enumerate() {
            let c = (idx / st) as i64 % n;
            let base = idx - c as usize * st;
            *out = k
                .iter()
                .enumerate()
                .map(|(t, w)| w * data[base + (c + t as i64 - r).clamp(0, n - 1) as usize * st])
                .sum();
        }
        std::mem::swap(&mut data, &mut tmp);
    }
    ImageVolume::new(vol.grid().clone(), data.into_iter().map(|v| v as f32).collect()).expect("finite")
}

/// Pre-downsampling blur (finer-level voxels). Sigma 1 leaves sharp tissue
/// edges aliased, and trilinear resampling of such a level penalises
/// rotations enough to make grid-aligned poses score higher.
pub const DOWNSAMPLE_SIGMA: f64 = 2.0;

/// Levels stop once an axis would drop below this many voxels.
pub const MIN_LEVEL_DIM: usize = 16;

/// Gaussian smoothing (sigma `DOWNSAMPLE_SIGMA`) then keeping every second voxel.
pub fn downsample(vol: &ImageVolume) -> ImageVolume {
    let s = gaussian_smooth(vol, DOWNSAMPLE_SIGMA);
    let d = vol.dims();
    let nd = [d[0].div_ceil(2), d[1].div_ceil(2), d[2].div_ceil(2)];
    let g = Grid::with_dims(nd);
    let mut data = Vec::with_capacity(g.len());
    for k in 0..nd[2] {
        for j in 0..nd[1] {
            for i in 0..nd[0] {
                data.push(s.get(2 * i, 2 * j, 2 * k));
            }
        }
    }
    ImageVolume::new(g, data).expect("finite")
}

struct LevelProblem<'a> {
    fixed: &'a ImageVolume,
    moving: &'a ImageVolume,
    c_fixed: [f64; 3],
    c_moving: [f64; 3],
    scale: f64,
    metric: Metric,
    bins: usize,
    buf: Vec<f32>,
    evals: usize,
}

impl LevelProblem<'_> {
    fn evaluate(&mut self, p: &AffineParams) -> f64 {
        self.evals += 1;
        let Ok(t) = p.to_transform(self.c_fixed, self.c_moving, self.scale) else {
            return f64::NEG_INFINITY;
        };
        let m = t.matrix();
        let [nx, ny, nz] = self.fixed.dims();
        self.buf.clear();
        for k in 0..nz {
            for j in 0..ny {
                let (y, z) = (j as f64, k as f64);
                let mut q = [
                    m[0][1] * y + m[0][2] * z + m[0][3],
                    m[1][1] * y + m[1][2] * z + m[1][3],
                    m[2][1] * y + m[2][2] * z + m[2][3],
                ];
                let step = [m[0][0], m[1][0], m[2][0]];
                for _ in 0..nx {
                    self.buf.push(self.moving.sample_trilinear(q));
                    q[0] += step[0];
                    q[1] += step[1];
                    q[2] += step[2];
                }
            }
        }
        let v = match self.metric {
            Metric::Cc => cc_slices(self.fixed.data(), &self.buf).unwrap_or(-1.0),
            Metric::Mi => mi_slices(self.fixed.data(), &self.buf, self.bins),
        };
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section maximisation on `[a, b]`; on equal values the lower
/// sub-interval is kept.
fn golden_max(mut a: f64, mut b: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Search half-width and tolerance for each parameter at full resolution.
const BRACKET: [(f64, f64); 4] = [(2.0, 0.02), (0.04, 2e-4), (0.03, 1.5e-4), (0.03, 1.5e-4)];

fn bracket(param: usize, level: usize) -> (f64, f64) {
    let (r, tol) = BRACKET[match param {
        0..=2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }];
    let f = (1usize << level) as f64;
    (r * f, tol * f)
}

/// Affine registration maximising `config.metric` between `fixed` and
/// `moving` resampled through the transform. The returned transform maps
/// fixed voxels to moving voxels.
pub fn register_affine(fixed: &ImageVolume, moving: &ImageVolume, config: &RegistrationConfig) -> Result<Registration> {
    config.validate()?;
    for (v, what) in [(fixed, "fixed"), (moving, "moving")] {
        let (lo, hi) = v.min_max();
        if lo == hi {
            return Err(Error::Degenerate(format!("{what} image is constant")));
        }
    }
    let mut fixed_pyr = vec![fixed.clone()];
    let mut moving_pyr = vec![moving.clone()];
    for _ in 1..config.pyramid_levels {
        let (f, m) = (fixed_pyr.last().unwrap(), moving_pyr.last().unwrap());
        if f.dims().iter().chain(m.dims().iter()).any(|&d| d.div_ceil(2) < MIN_LEVEL_DIM) {
            break;
        }
        let (nf, nm) = (downsample(f), downsample(m));
        fixed_pyr.push(nf);
        moving_pyr.push(nm);
    }
    let c_fixed = grid_center(fixed.dims());
    let c_moving = grid_center(moving.dims());
    let mut params = AffineParams::default();
    let mut levels = Vec::new();
    for level in (0..fixed_pyr.len()).rev() {
        let scale = (1usize << level) as f64;
        let mut prob = LevelProblem {
            fixed: &fixed_pyr[level],
            moving: &moving_pyr[level],
            c_fixed,
            c_moving,
            scale,
            metric: config.metric,
            bins: config.mi_bins,
            buf: Vec::with_capacity(fixed_pyr[level].len()),
            evals: 0,
        };
        let mut current = prob.evaluate(&params);
        let mut passes = 0;
        while passes < config.max_passes_per_level {
            passes += 1;
            let start = current;
            // coarse levels stay rigid: on smooth heads a shear mimics a rotation
            // there, and the full 12 parameters are only resolved at full size
            for i in 0..if level > 0 { 6 } else { 12 } {
                let (r, tol) = bracket(i, level);
                let p0 = params.0[i];
                let (x, fx) = golden_max(p0 - r, p0 + r, tol, |v| {
                    let mut q = params;
                    q.0[i] = v;
                    prob.evaluate(&q)
                });
                if fx > current {
                    params.0[i] = x;
                    current = fx;
                }
            }
            if current - start < config.tol {
                break;
            }
        }
        levels.push(LevelReport { level, dims: fixed_pyr[level].dims(), passes, metric: current });
    }
    let transform = params.to_transform(c_fixed, c_moving, 1.0)?;
    let metric_value = levels.last().map_or(f64::NAN, |l| l.metric);
    Ok(Registration { transform, params, metric_value, levels })
}

/// Mean distance between two transforms' images of the given points.
pub fn mean_landmark_error(a: &AffineTransform, b: &AffineTransform, points: &[[f64; 3]]) -> f64 {
    points
        .iter()
        .map(|&p| {
            let (x, y) = (a.apply(p), b.apply(p));
            ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / points.len() as f64
}

/// Centre plus the 8 corners of a box spanning the middle half of the grid.
pub fn default_landmarks(dims: [usize; 3]) -> Vec<[f64; 3]> {
    let c = grid_center(dims);
    let h = [dims[0] as f64 / 4.0, dims[1] as f64 / 4.0, dims[2] as f64 / 4.0];
    let mut pts = vec![c];
    for s in 0..8 {
        let sign = |b: usize| if s & (1 << b) == 0 { -1.0 } else { 1.0 };
        pts.push([c[0] + sign(0) * h[0], c[1] + sign(1) * h[1], c[2] + sign(2) * h[2]]);
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_peak_and_breaks_ties_low() {
        let (x, _) = golden_max(-2.0, 2.0, 1e-6, |v| -(v - 0.3).powi(2));
        assert!((x - 0.3).abs() < 1e-5);
        // flat function: keeps shrinking toward the lower end
        let (x, _) = golden_max(0.0, 1.0, 1e-3, |_| 1.0);
        assert!(x < 0.01);
    }

    #[test]
    fn params_identity_and_translation() {
        let c = [10.0, 11.0, 12.0];
        let t = AffineParams::default().to_transform(c, c, 1.0).unwrap();
        assert_eq!(t, AffineTransform::identity());
        let mut p = AffineParams::default();
        p.0[0] = 3.0;
        p.0[1] = -2.0;
        let t = p.to_transform(c, c, 1.0).unwrap();
        assert_eq!(t.apply([0.0; 3]), [3.0, -2.0, 0.0]);
        // coarse level: x_full = 2 x_coarse
        let tc = p.to_transform(c, c, 2.0).unwrap();
        let q = tc.apply([4.0, 5.0, 6.0]);
        let f = t.apply([8.0, 10.0, 12.0]);
        for a in 0..3 {
            assert!((2.0 * q[a] - f[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_preserves_constants() {
        let g = Grid::with_dims([7, 6, 5]);
        let v = ImageVolume::new(g.clone(), vec![2.5; g.len()]).unwrap();
        assert!(gaussian_smooth(&v, 1.0).data().iter().all(|x| (x - 2.5).abs() < 1e-6));
        assert_eq!(downsample(&v).dims(), [4, 3, 3]);
    }
}

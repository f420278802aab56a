//! Label fusion of atlas candidates already resampled to the target grid:
//! majority voting and patch-based joint label fusion.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Matrix};
use crate::registration::{pull_back, DisplacementField, Interp};
use crate::volume::{Grid, ImageVolume, LabelVolume, Volume};

/// Label values 0 (background) through 12.
pub const N_CLASSES: usize = 13;

/// Posteriors closer than this to the maximum count as tied; the smallest
/// label then wins, so rounding noise from atlas order cannot flip a tie.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Atlas {
    pub intensity: ImageVolume,
    pub labels: LabelVolume,
}

#[derive(Debug, Clone)]
pub struct AtlasSet {
    entries: Vec<Atlas>,
}

impl AtlasSet {
    pub fn new(entries: Vec<Atlas>) -> Result<Self> {
        let first = entries.first().ok_or_else(|| Error::Empty("atlas set has no entries".into()))?;
        let grid = first.intensity.grid().clone();
        for (i, a) in entries.iter().enumerate() {
            grid.check_same(a.intensity.grid(), &format!("atlas {i} intensity"))?;
            grid.check_same(a.labels.grid(), &format!("atlas {i} labels"))?;
        }
        Ok(AtlasSet { entries })
    }

    pub fn entries(&self) -> &[Atlas] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.entries[0].intensity.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub beta: f64,
    pub alpha_frac: f64,
    pub clamp_negative: bool,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams { patch_radius: 2, search_radius: 1, beta: 2.0, alpha_frac: 0.1, clamp_negative: true }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.alpha_frac > 0.0 && self.alpha_frac.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha_frac must be > 0, got {}", self.alpha_frac)));
        }
        if self.patch_radius > 10 || self.search_radius > 10 {
            return Err(Error::InvalidArgument("patch and search radii must be <= 10".into()));
        }
        Ok(())
    }
}

/// Per-voxel probabilities over labels 0..=12, voxel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPosterior {
    grid: Grid,
    probs: Vec<f32>,
}

impl LabelPosterior {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn at(&self, idx: usize) -> &[f32] {
        &self.probs[idx * N_CLASSES..(idx + 1) * N_CLASSES]
    }

    /// Probability map of one label.
    pub fn label_map(&self, label: u8) -> ImageVolume {
        let l = label as usize;
        let data = (0..self.grid.len()).map(|i| self.probs[i * N_CLASSES + l]).collect();
        ImageVolume::new(self.grid.clone(), data).expect("finite probabilities")
    }
}

fn argmax_smallest(p: &[f64; N_CLASSES]) -> u8 {
    let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    p.iter().position(|&v| v >= max - TIE_EPS).unwrap_or(0) as u8
}

/// Most frequent label per voxel; ties go to the smallest label id.
pub fn majority_vote(label_volumes: &[&LabelVolume]) -> Result<LabelVolume> {
    let first = label_volumes.first().ok_or_else(|| Error::Empty("no label volumes to fuse".into()))?;
    for (i, v) in label_volumes.iter().enumerate() {
        first.grid().check_same(v.grid(), &format!("label volume {i}"))?;
    }
    let data = (0..first.len())
        .map(|idx| {
            let mut counts = [0u32; 256];
            for v in label_volumes {
                counts[v.data()[idx] as usize] += 1;
            }
            let max = *counts.iter().max().unwrap();
            counts.iter().position(|&c| c == max).unwrap() as u8
        })
        .collect();
    LabelVolume::new(first.grid().clone(), data)
}

struct Patches {
    dims: [usize; 3],
    radius: i64,
    len: usize,
}

impl Patches {
    fn new(dims: [usize; 3], radius: usize) -> Self {
        let w = 2 * radius + 1;
        Patches { dims, radius: radius as i64, len: w * w * w }
    }

    /// Zero-padded patch centred at `c`, normalized to zero mean and unit
    /// norm (all zeros when the patch is constant). Returns false for a constant patch.
    fn normalized(&self, data: &[f32], c: [i64; 3], out: &mut Vec<f64>) -> bool {
        out.clear();
        let r = self.radius;
        let [nx, ny, nz] = self.dims.map(|d| d as i64);
        for dz in -r..=r {
            let z = c[2] + dz;
            for dy in -r..=r {
                let y = c[1] + dy;
                for dx in -r..=r {
                    let x = c[0] + dx;
                    let inside = x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
                    out.push(if inside { data[(x + nx * (y + ny * z)) as usize] as f64 } else { 0.0 });
                }
            }
        }
        let mean = out.iter().sum::<f64>() / self.len as f64;
        let mut ss = 0.0;
        for v in out.iter_mut() {
            *v -= mean;
            ss += *v * *v;
        }
        if ss <= 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return false;
        }
        let norm = ss.sqrt();
        out.iter_mut().for_each(|v| *v /= norm);
        true
    }
}

fn label_at(labels: &LabelVolume, p: [i64; 3]) -> u8 {
    labels.get_checked(p[0], p[1], p[2]).unwrap_or(0)
}

/// Search offsets with the zero shift first, so it wins ties.
fn search_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut v = vec![[0, 0, 0]];
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if [dx, dy, dz] != [0, 0, 0] {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

/// Joint fusion weights from the absolute patch differences of each atlas.
fn fusion_weights(diffs: &[Vec<f64>], beta: f64, alpha_frac: f64, clamp_negative: bool) -> Vec<f64> {
    let n = diffs.len();
    let uniform = vec![1.0 / n as f64; n];
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = diffs[i].iter().zip(&diffs[j]).map(|(a, b)| (a * b).powf(beta)).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let trace = m.trace();
    if !(trace > 0.0) {
        return uniform;
    }
    let alpha = alpha_frac * trace / n as f64;
    for i in 0..n {
        m[(i, i)] += alpha;
    }
    let Ok(l) = cholesky(&m, 1e-14) else { return uniform };
    let mut w = cholesky_solve(&l, &vec![1.0; n]);
    if clamp_negative {
        w.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let s: f64 = w.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return uniform;
    }
    w.iter().map(|v| v / s).collect()
}

/// Patch-based joint label fusion (weighted voting with atlas weights that
/// account for correlated errors between atlases).
pub fn joint_label_fusion(
    target: &ImageVolume,
    atlases: &AtlasSet,
    params: &FusionParams,
) -> Result<(LabelVolume, LabelPosterior)> {
    params.validate()?;
    target.grid().check_same(atlases.grid(), "fusion target")?;
    let grid = target.grid().clone();
    let dims = grid.dims;
    let n = atlases.len();
    let offsets = search_offsets(params.search_radius);
    let patches = Patches::new(dims, params.patch_radius);

    let per_voxel: Vec<(u8, [f32; N_CLASSES])> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(patches.len), Vec::with_capacity(patches.len), vec![Vec::new(); n]),
            |(t_hat, cand, diffs), idx| {
                let c = grid.coords(idx).map(|v| v as i64);
                let shifted = |o: &[i64; 3]| [c[0] + o[0], c[1] + o[1], c[2] + o[2]];

                // every reachable atlas label agrees: the posterior is one-hot
                let l0 = label_at(&atlases.entries()[0].labels, c);
                let settled =
                    atlases.entries().iter().all(|a| offsets.iter().all(|o| label_at(&a.labels, shifted(o)) == l0));
                let mut post = [0.0f64; N_CLASSES];
                if settled {
                    post[l0 as usize] = 1.0;
                } else {
                    patches.normalized(target.data(), c, t_hat);
                    let t_sq: f64 = t_hat.iter().map(|v| v * v).sum();
                    let mut chosen = Vec::with_capacity(n);
                    for (a, d) in atlases.entries().iter().zip(diffs.iter_mut()) {
                        let mut best = (f64::INFINITY, [0i64; 3]);
                        for o in &offsets {
                            let nonconst = patches.normalized(a.intensity.data(), shifted(o), cand);
                            let dot: f64 = cand.iter().zip(t_hat.iter()).map(|(x, y)| x * y).sum();
                            let ssd = if nonconst { 1.0 } else { 0.0 } + t_sq - 2.0 * dot;
                            if ssd < best.0 {
                                best = (ssd, *o);
                            }
                        }
                        patches.normalized(a.intensity.data(), shifted(&best.1), cand);
                        d.clear();
                        d.extend(cand.iter().zip(t_hat.iter()).map(|(x, y)| (x - y).abs()));
                        chosen.push(best.1);
                    }
                    let w = fusion_weights(diffs, params.beta, params.alpha_frac, params.clamp_negative);
                    for ((a, o), wi) in atlases.entries().iter().zip(&chosen).zip(&w) {
                        post[label_at(&a.labels, shifted(o)) as usize] += wi;
                    }
                }
                (argmax_smallest(&post), post.map(|v| v as f32))
            },
        )
        .collect();

    let mut labels = Vec::with_capacity(grid.len());
    let mut probs = Vec::with_capacity(grid.len() * N_CLASSES);
    for (l, p) in per_voxel {
        labels.push(l);
        probs.extend_from_slice(&p);
    }
    Ok((LabelVolume::new(grid.clone(), labels)?, LabelPosterior { grid, probs }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Majority,
    #[default]
    Joint,
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "majority" | "mv" => Ok(FusionMode::Majority),
            "joint" | "jlf" => Ok(FusionMode::Joint),
            other => Err(Error::InvalidArgument(format!("unknown fusion mode '{other}' (majority|joint)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PriorInput<'a> {
    pub intensity: &'a ImageVolume,
    pub labels: &'a LabelVolume,
    /// On the target grid: target voxel `x` reads the prior at `x + field(x)`.
    pub field: &'a DisplacementField,
}

/// Resamples each prior's intensity (trilinear) and labels (nearest) onto
/// the target grid through its field.
pub fn warp_priors(target_grid: &Grid, priors: &[PriorInput<'_>]) -> Result<AtlasSet> {
    if priors.is_empty() {
        return Err(Error::Empty("no priors to fuse".into()));
    }
    let mut entries = Vec::with_capacity(priors.len());
    for (i, p) in priors.iter().enumerate() {
        target_grid.check_same(p.field.grid(), &format!("prior {i} field"))?;
        p.intensity.grid().check_same(p.labels.grid(), &format!("prior {i} labels"))?;
        entries.push(Atlas {
            intensity: pull_back(p.intensity, p.field, Interp::Trilinear),
            labels: pull_back(p.labels, p.field, Interp::Nearest),
        });
    }
    AtlasSet::new(entries)
}

/// Fuses warped candidates; the posterior is only produced by joint fusion.
pub fn fuse(
    target: &ImageVolume,
    atlases: &AtlasSet,
    params: &FusionParams,
    mode: FusionMode,
) -> Result<(LabelVolume, Option<LabelPosterior>)> {
    match mode {
        FusionMode::Majority => {
            target.grid().check_same(atlases.grid(), "fusion target")?;
            let refs: Vec<&Volume<u8>> = atlases.entries().iter().map(|a| &a.labels).collect();
            Ok((majority_vote(&refs)?, None))
        }
        FusionMode::Joint => {
            let (l, p) = joint_label_fusion(target, atlases, params)?;
            Ok((l, Some(p)))
        }
    }
}

/// Warps each prior into target space and fuses the candidates.
pub fn fusion_pipeline(
    target: &ImageVolume,
    priors: &[PriorInput<'_>],
    params: &FusionParams,
    mode: FusionMode,
) -> Result<LabelVolume> {
    let atlases = warp_priors(target.grid(), priors)?;
    Ok(fuse(target, &atlases, params, mode)?.0)
}

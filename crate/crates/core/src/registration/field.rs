use std::path::Path;

use serde::{Deserialize, Serialize};

use super::transform::{AffineTransform, Interp, Sample};
use crate::error::{Error, Result};
use crate::nifti::{build_header, read_raw, write_raw, DISPFIELD_INTENT_NAME, DT_FLOAT32, INTENT_DISPVECT};
use crate::volume::{Grid, Volume};

/// Dense displacement field in voxel units of its grid:
/// the source point of voxel `x` is `x + u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(grid: Grid, vectors: Vec<[f64; 3]>) -> Result<Self> {
        grid.validate()?;
        if vectors.len() != grid.len() {
            return Err(Error::InvalidVolume(format!("{} vectors for a grid of {} voxels", vectors.len(), grid.len())));
        }
        if let Some(i) = vectors.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(DisplacementField { grid, vectors })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        DisplacementField { grid, vectors: vec![[0.0; 3]; n] }
    }

    pub fn constant(grid: Grid, c: [f64; 3]) -> Self {
        let n = grid.len();
        DisplacementField { grid, vectors: vec![c; n] }
    }

    /// Field from a function of voxel coordinates.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Self> {
        let vectors = (0..grid.len())
            .map(|idx| {
                let [i, j, k] = grid.coords(idx);
                f([i as f64, j as f64, k as f64])
            })
            .collect();
        DisplacementField::new(grid, vectors)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).fold(0.0, f64::max)
    }

    /// Trilinear sample with coordinates clamped to the grid.
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let strides = [1, self.grid.dims[0], self.grid.dims[0] * self.grid.dims[1]];
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut step = [0usize; 3];
        for ax in 0..3 {
            let n = self.grid.dims[ax];
            let q = p[ax].clamp(0.0, (n - 1) as f64);
            base[ax] = q.floor() as usize;
            frac[ax] = q - base[ax] as f64;
            step[ax] = if base[ax] + 1 < n { strides[ax] } else { 0 };
        }
        let b = self.grid.index(base[0], base[1], base[2]);
        let v = &self.vectors;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            // lerp form keeps constant fields exact
            let l = |a: f64, b: f64, t: f64| a + (b - a) * t;
            let at = |d: usize| v[b + d][c];
            let c00 = l(at(0), at(step[0]), frac[0]);
            let c10 = l(at(step[1]), at(step[0] + step[1]), frac[0]);
            let c01 = l(at(step[2]), at(step[0] + step[2]), frac[0]);
            let c11 = l(at(step[1] + step[2]), at(step[0] + step[1] + step[2]), frac[0]);
            *o = l(l(c00, c10, frac[1]), l(c01, c11, frac[1]), frac[2]);
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = read_raw(path)?;
        let d = &raw.header.dims;
        let ok = d.len() == 5 && d[3] == 1 && d[4] == 3;
        if !ok {
            return Err(Error::UnsupportedDims(format!(
                "{}: displacement field needs dims (nx, ny, nz, 1, 3), got {d:?}",
                path.display()
            )));
        }
        let grid = Grid::new([d[0], d[1], d[2]], raw.header.spacing, raw.header.affine)?;
        // Fields not stamped as voxel-unit are taken as millimetres along the voxel axes.
        let scale = if raw.header.intent_name == DISPFIELD_INTENT_NAME {
            [1.0; 3]
        } else {
            [1.0 / grid.spacing[0], 1.0 / grid.spacing[1], 1.0 / grid.spacing[2]]
        };
        let n = grid.len();
        let vectors = (0..n)
            .map(|i| [raw.values[i] * scale[0], raw.values[n + i] * scale[1], raw.values[2 * n + i] * scale[2]])
            .collect();
        DisplacementField::new(grid, vectors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let [nx, ny, nz] = self.grid.dims;
        let header = build_header(&[nx, ny, nz, 1, 3], &self.grid, DT_FLOAT32, INTENT_DISPVECT, DISPFIELD_INTENT_NAME)?;
        let mut payload = Vec::with_capacity(self.vectors.len() * 12);
        for c in 0..3 {
            for v in &self.vectors {
                payload.extend_from_slice(&(v[c] as f32).to_le_bytes());
            }
        }
        write_raw(path, &header, &payload)
    }
}

/// `out(x) = vol(x + u(x))` on the field's grid, sampling `vol` in its own
/// voxel coordinates (which may belong to a different grid).
pub fn pull_back<T: Sample>(vol: &Volume<T>, u: &DisplacementField, interp: Interp) -> Volume<T> {
    let g = &u.grid;
    let data = u
        .vectors
        .iter()
        .enumerate()
        .map(|(idx, d)| {
            let [i, j, k] = g.coords(idx);
            T::sample(vol, [i as f64 + d[0], j as f64 + d[1], k as f64 + d[2]], interp)
        })
        .collect();
    Volume::from_parts(g.clone(), data).expect("length matches grid")
}

/// `out(x) = vol(x + u(x))`; volume and field must share a grid.
pub fn apply_field<T: Sample>(vol: &Volume<T>, u: &DisplacementField, interp: Interp) -> Result<Volume<T>> {
    vol.grid().check_same(&u.grid, "volume vs displacement field")?;
    Ok(pull_back(vol, u, interp))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub iterations: usize,
    /// Max over voxels of `|v(x) + u(x + v(x))|`.
    pub max_residual: f64,
    pub converged: bool,
}

pub const INVERT_MAX_ITER: usize = 50;
pub const INVERT_TOL: f64 = 0.01;

/// Fixed-point inverse `v(x) = -u(x + v(x))`, started from `-u`.
pub fn invert_field(u: &DisplacementField, max_iter: usize, tol: f64) -> Result<(DisplacementField, InversionReport)> {
    let mut v: Vec<[f64; 3]> = u.vectors.iter().map(|d| [-d[0], -d[1], -d[2]]).collect();
    let g = &u.grid;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut max_update = 0.0f64;
        let next: Vec<[f64; 3]> = v
            .iter()
            .enumerate()
            .map(|(idx, vx)| {
                let [i, j, k] = g.coords(idx);
                let s = u.sample([i as f64 + vx[0], j as f64 + vx[1], k as f64 + vx[2]]);
                let n = [-s[0], -s[1], -s[2]];
                let d = ((n[0] - vx[0]).powi(2) + (n[1] - vx[1]).powi(2) + (n[2] - vx[2]).powi(2)).sqrt();
                max_update = max_update.max(d);
                n
            })
            .collect();
        v = next;
        if max_update < tol {
            converged = true;
            break;
        }
    }
    let inv = DisplacementField::new(g.clone(), v)?;
    let max_residual = inversion_residual(u, &inv);
    if !converged && max_residual > 10.0 * tol {
        return Err(Error::NonConvergence(format!(
            "field inversion residual {max_residual:.4} voxel after {iterations} iterations"
        )));
    }
    Ok((inv, InversionReport { iterations, max_residual, converged }))
}

/// Max over voxels of `|v(x) + u(x + v(x))|`.
pub fn inversion_residual(u: &DisplacementField, v: &DisplacementField) -> f64 {
    let g = &v.grid;
    v.vectors
        .iter()
        .enumerate()
        .map(|(idx, vx)| {
            let [i, j, k] = g.coords(idx);
            let s = u.sample([i as f64 + vx[0], j as f64 + vx[1], k as f64 + vx[2]]);
            ((vx[0] + s[0]).powi(2) + (vx[1] + s[1]).powi(2) + (vx[2] + s[2]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// `w(x) = v(x) + u(x + v(x))` on `inner`'s grid, with `outer` sampled in
/// its own voxel coordinates.
pub fn chain_fields(outer: &DisplacementField, inner: &DisplacementField) -> DisplacementField {
    let g = &inner.grid;
    let vectors = inner
        .vectors
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let [i, j, k] = g.coords(idx);
            let u = outer.sample([i as f64 + v[0], j as f64 + v[1], k as f64 + v[2]]);
            [v[0] + u[0], v[1] + u[1], v[2] + u[2]]
        })
        .collect();
    DisplacementField { grid: g.clone(), vectors }
}

/// Applying the result equals applying `outer` first and then `inner`:
/// `apply(vol, w) = apply(apply(vol, outer), inner)`.
pub fn compose_fields(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    outer.grid.check_same(&inner.grid, "composed fields")?;
    Ok(chain_fields(outer, inner))
}

/// `u(x) = T x - x`.
pub fn affine_to_field(t: &AffineTransform, grid: &Grid) -> DisplacementField {
    let vectors = (0..grid.len())
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            let x = [i as f64, j as f64, k as f64];
            let y = t.apply(x);
            [y[0] - x[0], y[1] - x[1], y[2] - x[2]]
        })
        .collect();
    DisplacementField { grid: grid.clone(), vectors }
}

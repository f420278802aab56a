use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Affine, Grid, Volume, IDENTITY_AFFINE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    #[default]
    Trilinear,
    Nearest,
}

/// Voxel types that can be resampled. Labels always use nearest neighbour.
pub trait Sample: Copy + Default + Send + Sync {
    fn sample(vol: &Volume<Self>, p: [f64; 3], interp: Interp) -> Self;
}

impl Sample for f32 {
    #[inline]
    fn sample(vol: &Volume<f32>, p: [f64; 3], interp: Interp) -> f32 {
        match interp {
            Interp::Trilinear => vol.sample_trilinear(p),
            Interp::Nearest => vol.sample_nearest(p),
        }
    }
}

impl Sample for u8 {
    #[inline]
    fn sample(vol: &Volume<u8>, p: [f64; 3], _: Interp) -> u8 {
        vol.sample_nearest(p)
    }
}

/// Voxel-space affine mapping from output (target) voxels to source voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformJson", into = "TransformJson")]
pub struct AffineTransform {
    matrix: Affine,
}

#[derive(Serialize, Deserialize)]
struct TransformJson {
    matrix: [[f64; 4]; 4],
}

impl TryFrom<TransformJson> for AffineTransform {
    type Error = Error;
    fn try_from(j: TransformJson) -> Result<Self> {
        AffineTransform::new(j.matrix)
    }
}

impl From<AffineTransform> for TransformJson {
    fn from(t: AffineTransform) -> Self {
        TransformJson { matrix: t.matrix }
    }
}

fn det3(m: &Affine) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl AffineTransform {
    pub fn new(matrix: Affine) -> Result<Self> {
        if matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::SingularTransform("non-finite matrix entry".into()));
        }
        if matrix[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::SingularTransform(format!("last row must be [0,0,0,1], got {:?}", matrix[3])));
        }
        let d = det3(&matrix);
        if d.abs() < 1e-12 {
            return Err(Error::SingularTransform(format!("linear part has determinant {d:.3e}")));
        }
        Ok(AffineTransform { matrix })
    }

    pub fn identity() -> Self {
        AffineTransform { matrix: IDENTITY_AFFINE }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        let mut m = IDENTITY_AFFINE;
        for r in 0..3 {
            m[r][3] = t[r];
        }
        AffineTransform { matrix: m }
    }

    /// `x -> L (x - center) + center + t`.
    pub fn about_center(linear: [[f64; 3]; 3], center: [f64; 3], t: [f64; 3]) -> Result<Self> {
        let mut m = IDENTITY_AFFINE;
        for r in 0..3 {
            m[r][..3].copy_from_slice(&linear[r]);
            m[r][3] = center[r] + t[r] - (0..3).map(|c| linear[r][c] * center[c]).sum::<f64>();
        }
        AffineTransform::new(m)
    }

    pub fn matrix(&self) -> &Affine {
        &self.matrix
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.matrix)
    }

    #[inline]
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2] + m[0][3],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2] + m[1][3],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2] + m[2][3],
        ]
    }

    /// `self` after `inner`: `x -> self(inner(x))`.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        let mut m = [[0.0; 4]; 4];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| self.matrix[r][k] * inner.matrix[k][c]).sum();
            }
        }
        AffineTransform { matrix: m }
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        let m = &self.matrix;
        let d = det3(m);
        if d.abs() < 1e-12 {
            return Err(Error::SingularTransform("cannot invert".into()));
        }
        let mut inv = IDENTITY_AFFINE;
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / d;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / d;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / d;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / d;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / d;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / d;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / d;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / d;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / d;
        for r in 0..3 {
            inv[r][3] = -(0..3).map(|c| inv[r][c] * m[c][3]).sum::<f64>();
        }
        AffineTransform::new(inv)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Rotation matrix `Rz * Ry * Rx` from angles in radians.
pub fn rotation_matrix(rx: f64, ry: f64, rz: f64) -> [[f64; 3]; 3] {
    let (sx, cx) = rx.sin_cos();
    let (sy, cy) = ry.sin_cos();
    let (sz, cz) = rz.sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

/// `out(x) = vol(T x)` on `out_grid`.
pub fn resample_affine<T: Sample>(vol: &Volume<T>, t: &AffineTransform, out_grid: &Grid, interp: Interp) -> Volume<T> {
    let [nx, ny, nz] = out_grid.dims;
    let mut data = Vec::with_capacity(out_grid.len());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                data.push(T::sample(vol, t.apply([i as f64, j as f64, k as f64]), interp));
            }
        }
    }
    Volume::from_parts(out_grid.clone(), data).expect("length matches grid")
}

/// `out(x) = vol(T x)` on the input grid.
pub fn apply_affine<T: Sample>(vol: &Volume<T>, t: &AffineTransform, interp: Interp) -> Volume<T> {
    resample_affine(vol, t, vol.grid(), interp)
}

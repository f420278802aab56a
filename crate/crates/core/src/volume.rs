//! Volume data model: regular 3D grids carrying scalar intensities or labels.
//!
//! Voxels are stored x-fastest (`i + nx * (j + ny * k)`), the same order as
//! a NIfTI payload, so I/O is a straight copy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Affine = [[f64; 4]; 4];

pub const IDENTITY_AFFINE: Affine =
    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

/// Geometry shared by every volume on the same voxel lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Voxel to world (mm).
    pub affine: Affine,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine) -> Result<Self> {
        let grid = Grid { dims, spacing, affine };
        grid.validate()?;
        Ok(grid)
    }

    /// Unit-spacing grid with an identity affine.
    pub fn with_dims(dims: [usize; 3]) -> Self {
        Grid { dims, spacing: [1.0; 3], affine: IDENTITY_AFFINE }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("dims must be positive, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("spacing must be positive, got {:?}", self.spacing)));
        }
        if self.affine[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidVolume("affine last row must be [0, 0, 0, 1]".into()));
        }
        if self.affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("affine has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Same lattice: dims must match exactly, geometry within 1e-5.
    pub fn same_lattice(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| (a - b).abs() <= 1e-5)
            && self.affine.iter().flatten().zip(other.affine.iter().flatten()).all(|(a, b)| (a - b).abs() <= 1e-5)
    }

    pub fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what}: {:?} vs {:?}", self.dims, other.dims)))
        }
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3];
        }
        out
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// A scalar or label field on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    grid: Grid,
    data: Vec<T>,
}

pub type ImageVolume = Volume<f32>;
pub type LabelVolume = Volume<u8>;

impl<T: Copy> Volume<T> {
    pub(crate) fn from_parts(grid: Grid, data: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(Volume { grid, data })
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        let n = grid.len();
        Volume { grid, data: vec![value; n] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    /// Value at integer coordinates, `None` outside the grid.
    #[inline]
    pub fn get_checked(&self, i: i64, j: i64, k: i64) -> Option<T> {
        let [nx, ny, nz] = self.grid.dims;
        if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
            None
        } else {
            Some(self.get(i as usize, j as usize, k as usize))
        }
    }

    pub fn with_grid_of<U: Copy>(&self, data: Vec<U>) -> Result<Volume<U>> {
        Volume::from_parts(self.grid.clone(), data)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Volume<U> {
        Volume { grid: self.grid.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
        bbox.check_within(self.grid.dims)?;
        let [x0, y0, z0] = bbox.min;
        let out_dims = bbox.extent();
        let mut data = Vec::with_capacity(out_dims.iter().product());
        for k in z0..bbox.max[2] {
            for j in y0..bbox.max[1] {
                let start = self.grid.index(x0, j, k);
                data.extend_from_slice(&self.data[start..start + out_dims[0]]);
            }
        }
        let mut affine = self.grid.affine;
        let origin = self.grid.voxel_to_world([x0 as f64, y0 as f64, z0 as f64]);
        for (r, row) in affine.iter_mut().take(3).enumerate() {
            row[3] = origin[r];
        }
        Ok(Volume { grid: Grid { dims: out_dims, spacing: self.grid.spacing, affine }, data })
    }

    /// Nearest-neighbour sample (half rounds up); `background` outside the grid.
    #[inline]
    pub fn sample_nearest_or(&self, p: [f64; 3], background: T) -> T {
        let i = (p[0] + 0.5).floor();
        let j = (p[1] + 0.5).floor();
        let k = (p[2] + 0.5).floor();
        if !(i.is_finite() && j.is_finite() && k.is_finite()) {
            return background;
        }
        self.get_checked(i as i64, j as i64, k as i64).unwrap_or(background)
    }
}

impl<T: Copy + Default> Volume<T> {
    pub fn zeros(grid: Grid) -> Self {
        Volume::filled(grid, T::default())
    }

    pub fn sample_nearest(&self, p: [f64; 3]) -> T {
        self.sample_nearest_or(p, T::default())
    }
}

impl ImageVolume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Volume::from_parts(grid, data)
    }

    /// Trilinear interpolation with zero padding: neighbours outside the grid
    /// contribute 0, so points one voxel or more outside return 0.
    #[inline]
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f32 {
        let [nx, ny, nz] = self.grid.dims;
        if !(p[0] > -1.0 && p[1] > -1.0 && p[2] > -1.0) || !(p[0] < nx as f64 && p[1] < ny as f64 && p[2] < nz as f64) {
            return 0.0;
        }
        let fx = p[0].floor();
        let fy = p[1].floor();
        let fz = p[2].floor();
        let (tx, ty, tz) = (p[0] - fx, p[1] - fy, p[2] - fz);
        let (x0, y0, z0) = (fx as i64, fy as i64, fz as i64);
        let fetch = |i: i64, j: i64, k: i64| -> f64 { self.get_checked(i, j, k).map_or(0.0, f64::from) };
        // Fast path: all 8 corners in bounds.
        let inside = x0 >= 0 && y0 >= 0 && z0 >= 0 && x0 + 1 < nx as i64 && y0 + 1 < ny as i64 && z0 + 1 < nz as i64;
        let c = if inside {
            let base = self.grid.index(x0 as usize, y0 as usize, z0 as usize);
            let sx = 1;
            let sy = nx;
            let sz = nx * ny;
            let d = &self.data;
            [
                d[base] as f64,
                d[base + sx] as f64,
                d[base + sy] as f64,
                d[base + sx + sy] as f64,
                d[base + sz] as f64,
                d[base + sx + sz] as f64,
                d[base + sy + sz] as f64,
                d[base + sx + sy + sz] as f64,
            ]
        } else {
            [
                fetch(x0, y0, z0),
                fetch(x0 + 1, y0, z0),
                fetch(x0, y0 + 1, z0),
                fetch(x0 + 1, y0 + 1, z0),
                fetch(x0, y0, z0 + 1),
                fetch(x0 + 1, y0, z0 + 1),
                fetch(x0, y0 + 1, z0 + 1),
                fetch(x0 + 1, y0 + 1, z0 + 1),
            ]
        };
        // An exact voxel centre must reproduce the stored value bit-for-bit.
        if tx == 0.0 && ty == 0.0 && tz == 0.0 {
            return c[0] as f32;
        }
        let c00 = c[0] + (c[1] - c[0]) * tx;
        let c10 = c[2] + (c[3] - c[2]) * tx;
        let c01 = c[4] + (c[5] - c[4]) * tx;
        let c11 = c[6] + (c[7] - c[6]) * tx;
        let c0 = c00 + (c10 - c00) * ty;
        let c1 = c01 + (c11 - c01) * ty;
        (c0 + (c1 - c0) * tz) as f32
    }

    pub fn scaled(&self, c: f32) -> ImageVolume {
        self.map(|v| v * c)
    }

    /// Axial slice at `floor(nz / 2)`, row-major `[j][i]`.
    pub fn middle_axial_slice(&self) -> Slice2 {
        let [nx, ny, nz] = self.grid.dims;
        let k = nz / 2;
        let start = self.grid.index(0, 0, k);
        Slice2 { nx, ny, index: k, values: self.data[start..start + nx * ny].to_vec() }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

impl LabelVolume {
    /// Label volume whose nonzero values must be nuclei ids (1..=12).
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = data.iter().find(|&&v| v as usize > NUCLEI.len()) {
            return Err(Error::InvalidVolume(format!("label {bad} is not in the nuclei label table")));
        }
        Volume::from_parts(grid, data)
    }

    /// Binary mask (values 0/1) from a predicate.
    pub fn mask_from<T: Copy>(vol: &Volume<T>, pred: impl Fn(T) -> bool) -> LabelVolume {
        vol.map(|v| u8::from(pred(v)))
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn distinct_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&v| seen[v as usize]).collect()
    }
}

/// One 2D slice; `values[i + nx * j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2 {
    pub nx: usize,
    pub ny: usize,
    pub index: usize,
    pub values: Vec<f32>,
}

impl Slice2 {
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i + self.nx * j]
    }
}

/// Half-open voxel box: `min <= idx < max` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Self {
        BoundingBox { min, max }
    }

    pub fn full(dims: [usize; 3]) -> Self {
        BoundingBox { min: [0; 3], max: dims }
    }

    pub fn extent(&self) -> [usize; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn check_within(&self, dims: [usize; 3]) -> Result<()> {
        for axis in 0..3 {
            if !(self.min[axis] < self.max[axis] && self.max[axis] <= dims[axis]) {
                return Err(Error::InvalidArgument(format!(
                    "bounding box {:?}..{:?} out of range for dims {:?}",
                    self.min, self.max, dims
                )));
            }
        }
        Ok(())
    }

    /// Box `inner` given relative to the volume cropped by `self`, expressed
    /// in the original coordinates.
    pub fn compose(&self, inner: &BoundingBox) -> BoundingBox {
        let mut out = *inner;
        for axis in 0..3 {
            out.min[axis] += self.min[axis];
            out.max[axis] += self.min[axis];
        }
        out
    }
}

/// Thalamic nuclei and the mammillothalamic tract, ids 1..=12.
pub const NUCLEI: [(u8, &str); 12] = [
    (1, "AV"),
    (2, "VA"),
    (3, "VLa"),
    (4, "VLP"),
    (5, "VPL"),
    (6, "Pul"),
    (7, "LGN"),
    (8, "MGN"),
    (9, "CM"),
    (10, "MD-Pf"),
    (11, "Hb"),
    (12, "MTT"),
];

pub fn nucleus_name(id: u8) -> Option<&'static str> {
    NUCLEI.iter().find(|(i, _)| *i == id).map(|(_, n)| *n)
}

pub fn nucleus_id(name: &str) -> Option<u8> {
    NUCLEI.iter().find(|(_, n)| n.eq_ignore_ascii_case(name)).map(|(i, _)| *i)
}

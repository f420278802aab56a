//! Seeded synthetic head phantoms with known ground truth: paired T1w / WMn
//! volumes linked by a polynomial intensity mapping, a 12-nucleus thalamus,
//! a T1 map consistent with the inversion-recovery equation, and perturbed
//! prior atlases with their exact displacement fields.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64(spec.seed)`; each purpose draws from its own stream number
//! (see the `STREAM_*` constants), so streams never interleave.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::WMN_INVERSION_TIME_MS;
use crate::nifti::{save_image, save_labels};
use crate::registration::{
    affine_to_field, apply_field, rotation_matrix, AffineTransform, DisplacementField, Interp, Sample,
};
use crate::synthesis::{paper_model, PolynomialModel};
use crate::volume::{Grid, ImageVolume, LabelVolume, Volume, NUCLEI};

pub const STREAM_SUBJECT_ANATOMY: u64 = 1;
pub const STREAM_SUBJECT_NOISE: u64 = 2;
pub const STREAM_SUBJECT_POSE: u64 = 3;
pub const STREAM_TEMPLATE_NOISE: u64 = 4;
/// Prior `i` uses streams `STREAM_PRIOR_BASE + 2 i` (geometry) and `+ 2 i + 1` (noise).
pub const STREAM_PRIOR_BASE: u64 = 100;

/// Normalized T1w intensities of the non-nucleus tissues.
pub const T1W_WM: f64 = 0.97;
pub const T1W_CSF: f64 = 0.05;

/// Normalized T1w intensity of each nucleus (ids 1..=12), all distinct in [0.55, 0.85].
pub const NUCLEUS_T1W: [f64; 12] = {
    const ORDER: [usize; 12] = [5, 1, 8, 3, 11, 0, 9, 2, 10, 4, 7, 6];
    let mut out = [0.0; 12];
    let mut i = 0;
    while i < 12 {
        out[i] = 0.55 + 0.3 * ORDER[i] as f64 / 11.0;
        i += 1;
    }
    out
};

/// `ir_synthesize(t1map, 670) * T1MAP_SIGNAL_SCALE` reproduces the normalized WMn.
pub const T1MAP_SIGNAL_SCALE: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Per-axis translation drawn from `[-t, t]` voxels.
    pub max_translation_vox: f64,
    /// Per-axis rotation drawn from `[-r, r]` degrees.
    pub max_rotation_deg: f64,
    /// Amplitude (voxels) of the smooth sinusoidal component.
    pub smooth_amplitude_vox: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { max_translation_vox: 2.0, max_rotation_deg: 3.0, smooth_amplitude_vox: 1.0 }
    }
}

impl Perturbation {
    pub const NONE: Perturbation =
        Perturbation { max_translation_vox: 0.0, max_rotation_deg: 0.0, smooth_amplitude_vox: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub size: [usize; 3],
    pub seed: u64,
    /// Gaussian noise added to the normalized WMn.
    pub noise_sigma: f64,
    /// Gaussian noise added to the normalized T1w before the mapping.
    pub t1w_noise_sigma: f64,
    pub mapping: PolynomialModel,
    pub n_priors: usize,
    pub prior_perturbation: Perturbation,
    /// SD (voxels) of the per-volume displacement of nucleus seeds.
    pub anatomical_jitter_vox: f64,
    /// Rigid pose of the subject relative to the template (no smooth part).
    pub subject_misalignment: Perturbation,
    /// Scales inter-nuclear T1w differences about their mean (1 = unchanged).
    /// The WMn keeps the uncompressed contrast.
    pub t1w_nuclear_contrast: f64,
    /// Stored intensity = normalized intensity * scale.
    pub t1w_scale: f64,
    pub wmn_scale: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            size: [64; 3],
            seed: 0,
            noise_sigma: 0.01,
            t1w_noise_sigma: 0.01,
            mapping: paper_model(),
            n_priors: 5,
            prior_perturbation: Perturbation::default(),
            anatomical_jitter_vox: 0.0,
            subject_misalignment: Perturbation::NONE,
            t1w_nuclear_contrast: 1.0,
            t1w_scale: 800.0,
            wmn_scale: 1000.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&n| n < 32) {
            return Err(Error::InvalidArgument(format!("phantom size must be >= 32 per axis, got {:?}", self.size)));
        }
        if self.size.iter().any(|&n| n > 512) {
            return Err(Error::InvalidArgument(format!("phantom size {:?} is too large", self.size)));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("t1w_noise_sigma", self.t1w_noise_sigma),
            ("anatomical_jitter_vox", self.anatomical_jitter_vox),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        for p in [&self.prior_perturbation, &self.subject_misalignment] {
            if ![p.max_translation_vox, p.max_rotation_deg, p.smooth_amplitude_vox]
                .iter()
                .all(|v| *v >= 0.0 && v.is_finite())
            {
                return Err(Error::InvalidArgument("perturbation magnitudes must be >= 0".into()));
            }
        }
        if !(self.t1w_nuclear_contrast >= 0.0 && self.t1w_nuclear_contrast <= 1.0) {
            return Err(Error::InvalidArgument("t1w_nuclear_contrast must lie in [0, 1]".into()));
        }
        if !(self.t1w_scale > 0.0 && self.wmn_scale > 0.0) {
            return Err(Error::InvalidArgument("intensity scales must be > 0".into()));
        }
        self.mapping.validate()
    }
}

/// Smooth displacement `amp * (sin * cos)` per axis with one period across the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothWarp {
    pub amplitude: f64,
    pub phases: [f64; 6],
    pub omega: [f64; 3],
}

impl SmoothWarp {
    pub fn random(dims: [usize; 3], amplitude: f64, rng: &mut impl Rng) -> Self {
        let mut phases = [0.0; 6];
        for p in phases.iter_mut() {
            *p = rng.random_range(0.0..std::f64::consts::TAU);
        }
        let omega = dims.map(|n| std::f64::consts::TAU / n as f64);
        SmoothWarp { amplitude, phases, omega }
    }

    #[inline]
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        let (a, ph, w) = (self.amplitude, &self.phases, &self.omega);
        [
            a * (w[1] * p[1] + ph[0]).sin() * (w[2] * p[2] + ph[1]).cos(),
            a * (w[2] * p[2] + ph[2]).sin() * (w[0] * p[0] + ph[3]).cos(),
            a * (w[0] * p[0] + ph[4]).sin() * (w[1] * p[1] + ph[5]).cos(),
        ]
    }
}

/// Seeded smooth random displacement field with the given amplitude.
pub fn smooth_random_field(grid: &Grid, amplitude: f64, seed: u64) -> DisplacementField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = SmoothWarp::random(grid.dims, amplitude, &mut rng);
    DisplacementField::from_fn(grid.clone(), |p| w.eval(p)).expect("finite field")
}

/// `voxel -> R (voxel - c) + c + t + smooth(voxel)`, mapping a volume's voxels
/// into template coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseWarp {
    pub affine: AffineTransform,
    pub smooth: Option<SmoothWarp>,
}

impl PoseWarp {
    pub fn identity() -> Self {
        PoseWarp { affine: AffineTransform::identity(), smooth: None }
    }

    pub fn random(dims: [usize; 3], p: &Perturbation, rng: &mut impl Rng) -> Self {
        let mut draw = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let t = [draw(p.max_translation_vox), draw(p.max_translation_vox), draw(p.max_translation_vox)];
        let r = [
            draw(p.max_rotation_deg).to_radians(),
            draw(p.max_rotation_deg).to_radians(),
            draw(p.max_rotation_deg).to_radians(),
        ];
        let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let affine =
            AffineTransform::about_center(rotation_matrix(r[0], r[1], r[2]), c, t).expect("rotation is regular");
        let smooth = (p.smooth_amplitude_vox > 0.0).then(|| SmoothWarp::random(dims, p.smooth_amplitude_vox, rng));
        PoseWarp { affine, smooth }
    }

    #[inline]
    pub fn apply(&self, z: [f64; 3]) -> [f64; 3] {
        let a = self.affine.apply(z);
        match &self.smooth {
            None => a,
            Some(s) => {
                let d = s.eval(z);
                [a[0] + d[0], a[1] + d[1], a[2] + d[2]]
            }
        }
    }

    /// Solves `apply(z) = y` by fixed-point iteration on the smooth part.
    pub fn invert(&self, y: [f64; 3], inv_affine: &AffineTransform) -> [f64; 3] {
        let mut z = inv_affine.apply(y);
        let Some(s) = &self.smooth else { return z };
        for _ in 0..100 {
            let d = s.eval(z);
            let next = inv_affine.apply([y[0] - d[0], y[1] - d[1], y[2] - d[2]]);
            let delta = (0..3).map(|a| (next[a] - z[a]).abs()).fold(0.0, f64::max);
            z = next;
            if delta < 1e-11 {
                break;
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Background,
    Csf,
    Wm,
    Nucleus(u8),
}

/// Continuous scene in template voxel coordinates.
#[derive(Debug, Clone, PartialEq)]
struct Scene {
    center: [f64; 3],
    brain_r: [f64; 3],
    ventricles: Vec<([f64; 3], [f64; 3])>,
    thal_c: [f64; 3],
    thal_r: [f64; 3],
    seeds: [[f64; 3]; 12],
    weights: [f64; 12],
}

/// Normalized nucleus seed positions (x lateral, y anterior, z superior) and
/// power-diagram weights controlling relative nucleus size.
const SEEDS: [([f64; 3], f64); 12] = [
    ([0.0, 0.75, 0.45], 0.0),     // AV
    ([0.35, 0.55, 0.0], 0.0),     // VA
    ([0.45, 0.3, 0.1], 0.0),      // VLa
    ([0.5, 0.0, 0.2], 0.08),      // VLP
    ([0.5, -0.35, -0.1], 0.06),   // VPL
    ([0.1, -0.7, 0.0], 0.12),     // Pul
    ([0.6, -0.7, -0.5], -0.04),   // LGN
    ([0.3, -0.75, -0.55], -0.04), // MGN
    ([0.05, -0.2, -0.35], 0.0),   // CM
    ([-0.45, 0.0, 0.2], 0.12),    // MD-Pf
    ([-0.4, -0.55, 0.6], -0.06),  // Hb
    ([-0.3, 0.45, -0.5], -0.06),  // MTT
];

const CSF_SHELL: f64 = 0.9;

impl Scene {
    fn canonical(dims: [usize; 3]) -> Self {
        let s = dims.map(|n| n as f64 / 64.0);
        let c = dims.map(|n| (n as f64 - 1.0) / 2.0);
        let at = |o: [f64; 3]| [c[0] + o[0] * s[0], c[1] + o[1] * s[1], c[2] + o[2] * s[2]];
        let sc = |r: [f64; 3]| [r[0] * s[0], r[1] * s[1], r[2] * s[2]];
        Scene {
            center: c,
            brain_r: sc([26.0, 29.0, 24.0]),
            ventricles: vec![
                (at([-10.0, -2.0, 2.0]), sc([3.0, 9.0, 5.0])),
                (at([14.0, -14.0, 6.0]), sc([2.5, 3.5, 3.0])),
            ],
            thal_c: at([4.0, 0.0, -2.0]),
            thal_r: sc([10.0, 14.0, 9.0]),
            seeds: SEEDS.map(|(p, _)| p),
            weights: SEEDS.map(|(_, w)| w),
        }
    }

    /// Seeds and thalamus outline displaced by `jitter` voxels (SD).
    fn jittered(&self, jitter: f64, rng: &mut impl Rng) -> Self {
        let mut out = self.clone();
        if jitter == 0.0 {
            return out;
        }
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mean_r = (self.thal_r[0] + self.thal_r[1] + self.thal_r[2]) / 3.0;
        for seed in out.seeds.iter_mut() {
            for v in seed.iter_mut() {
                *v += n.sample(rng) * jitter / mean_r;
            }
        }
        for a in 0..3 {
            out.thal_c[a] += n.sample(rng) * jitter * 0.5;
            out.thal_r[a] *= 1.0 + n.sample(rng) * 0.02;
        }
        out
    }

    fn classify(&self, p: [f64; 3]) -> Tissue {
        let rho2 = |c: &[f64; 3], r: &[f64; 3]| (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>();
        let b = rho2(&self.center, &self.brain_r);
        if b > 1.0 {
            return Tissue::Background;
        }
        if b > CSF_SHELL * CSF_SHELL || self.ventricles.iter().any(|(c, r)| rho2(c, r) <= 1.0) {
            return Tissue::Csf;
        }
        if rho2(&self.thal_c, &self.thal_r) <= 1.0 {
            let u = [0, 1, 2].map(|a| (p[a] - self.thal_c[a]) / self.thal_r[a]);
            let mut best = (f64::INFINITY, 0u8);
            for (l, (s, w)) in self.seeds.iter().zip(&self.weights).enumerate() {
                let d = (0..3).map(|a| (u[a] - s[a]).powi(2)).sum::<f64>() - w;
                if d < best.0 {
                    best = (d, l as u8 + 1);
                }
            }
            return Tissue::Nucleus(best.1);
        }
        Tissue::Wm
    }
}

/// Uncompressed and displayed normalized T1w of a tissue.
fn tissue_t1w(t: Tissue, contrast: f64) -> (f64, f64) {
    match t {
        Tissue::Background => (0.0, 0.0),
        Tissue::Csf => (T1W_CSF, T1W_CSF),
        Tissue::Wm => (T1W_WM, T1W_WM),
        Tissue::Nucleus(l) => {
            let v = NUCLEUS_T1W[l as usize - 1];
            let mean = NUCLEUS_T1W.iter().sum::<f64>() / 12.0;
            (v, mean + contrast * (v - mean))
        }
    }
}

fn label_of(t: Tissue) -> u8 {
    match t {
        Tissue::Nucleus(l) => l,
        _ => 0,
    }
}

/// T1 (ms) whose magnitude inversion-recovery signal at the WMn inversion time
/// equals `s`, on the long-T1 branch (signal negative before magnitude).
pub fn t1_for_signal(s: f64) -> f64 {
    let s = s.clamp(0.0, 0.999);
    -WMN_INVERSION_TIME_MS / ((1.0 + s) / 2.0).ln()
}

/// One rendered volume set on a grid.
struct Rendered {
    t1w_norm: Vec<f32>,
    wmn_norm: Vec<f32>,
    wmn_clean: Vec<f32>,
    labels: Vec<u8>,
    tissue: Vec<Tissue>,
}

fn render(
    scene: &Scene,
    grid: &Grid,
    map: impl Fn([f64; 3]) -> [f64; 3],
    spec: &PhantomSpec,
    noise_rng: &mut ChaCha8Rng,
) -> Rendered {
    let n = grid.len();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut r = Rendered {
        t1w_norm: Vec::with_capacity(n),
        wmn_norm: Vec::with_capacity(n),
        wmn_clean: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        tissue: Vec::with_capacity(n),
    };
    for idx in 0..n {
        let [i, j, k] = grid.coords(idx);
        let t = scene.classify(map([i as f64, j as f64, k as f64]));
        // two draws per voxel regardless of tissue keep streams aligned across specs
        let (e1, e2): (f64, f64) = (unit.sample(noise_rng), unit.sample(noise_rng));
        let (true_t1w, shown_t1w) = tissue_t1w(t, spec.t1w_nuclear_contrast);
        if t == Tissue::Background {
            r.t1w_norm.push(0.0);
            r.wmn_norm.push(0.0);
            r.wmn_clean.push(0.0);
        } else {
            let d = e1 * spec.t1w_noise_sigma;
            let x_true = true_t1w + d;
            let x_shown = (shown_t1w + d).max(1e-4);
            let clean = spec.mapping.eval(true_t1w);
            let y = (spec.mapping.eval(x_true) + e2 * spec.noise_sigma).max(1e-4);
            r.t1w_norm.push(x_shown as f32);
            r.wmn_norm.push(y as f32);
            r.wmn_clean.push(clean as f32);
        }
        r.labels.push(label_of(t));
        r.tissue.push(t);
    }
    r
}

fn image(grid: &Grid, data: Vec<f32>) -> ImageVolume {
    ImageVolume::new(grid.clone(), data).expect("finite phantom intensities")
}

fn labels(grid: &Grid, data: Vec<u8>) -> LabelVolume {
    LabelVolume::new(grid.clone(), data).expect("nuclei ids")
}

fn scaled(v: &[f32], s: f64) -> Vec<f32> {
    v.iter().map(|&x| (x as f64 * s) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct Prior {
    /// WMn-contrast image in the prior's own space.
    pub intensity: ImageVolume,
    pub labels: LabelVolume,
    /// On the template grid: template voxel `y` corresponds to prior voxel `y + field(y)`.
    pub field: DisplacementField,
    pub pose: PoseWarp,
}

#[derive(Debug, Clone)]
pub struct PhantomBundle {
    pub spec: PhantomSpec,
    pub t1w: ImageVolume,
    pub wmn: ImageVolume,
    pub t1map: ImageVolume,
    pub labels: LabelVolume,
    pub wm_mask: LabelVolume,
    pub csf_mask: LabelVolume,
    /// Normalized T1w (WM near 1) before storage scaling.
    pub t1w_norm: ImageVolume,
    /// Normalized WMn (`mapping(t1w_norm)` plus noise) before storage scaling.
    pub wmn_norm: ImageVolume,
    /// Template (unjittered anatomy, identity pose) WMn image and labels.
    pub template_wmn: ImageVolume,
    pub template_labels: LabelVolume,
    /// Subject voxel to template voxel.
    pub subject_to_template: AffineTransform,
    pub priors: Vec<Prior>,
}

impl PhantomBundle {
    /// Labels sorted by ground-truth voxel count, largest first.
    pub fn nuclei_by_size(&self) -> Vec<(u8, usize)> {
        let mut v: Vec<(u8, usize)> = NUCLEI.iter().map(|(id, _)| (*id, self.labels.count(*id))).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    /// Exact prior-to-subject fields: subject voxel `x` corresponds to prior
    /// voxel `x + field(x)`.
    pub fn prior_fields_to_subject(&self) -> Vec<DisplacementField> {
        self.priors
            .iter()
            .map(|p| {
                let inv = p.pose.affine.inverse().expect("regular pose");
                DisplacementField::from_fn(self.labels.grid().clone(), |x| {
                    let y = self.subject_to_template.apply(x);
                    let z = p.pose.invert(y, &inv);
                    [z[0] - x[0], z[1] - x[1], z[2] - x[2]]
                })
                .expect("finite field")
            })
            .collect()
    }
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<PhantomBundle> {
    spec.validate()?;
    let grid = Grid::with_dims(spec.size);
    let canonical = Scene::canonical(spec.size);

    let subject_scene = canonical.jittered(spec.anatomical_jitter_vox, &mut stream(spec.seed, STREAM_SUBJECT_ANATOMY));
    let pose = {
        let mut p = spec.subject_misalignment;
        p.smooth_amplitude_vox = 0.0;
        PoseWarp::random(spec.size, &p, &mut stream(spec.seed, STREAM_SUBJECT_POSE))
    };
    let subject_to_template = pose.affine;
    let sub = render(
        &subject_scene,
        &grid,
        |x| subject_to_template.apply(x),
        spec,
        &mut stream(spec.seed, STREAM_SUBJECT_NOISE),
    );

    let t1map: Vec<f32> = sub
        .wmn_clean
        .iter()
        .zip(&sub.tissue)
        .map(|(&w, &t)| if t == Tissue::Background { 0.0 } else { t1_for_signal(w as f64 / T1MAP_SIGNAL_SCALE) as f32 })
        .collect();
    let wm_mask = sub.tissue.iter().map(|&t| u8::from(t == Tissue::Wm)).collect();
    let csf_mask = sub.tissue.iter().map(|&t| u8::from(t == Tissue::Csf)).collect();

    let tmpl = render(&canonical, &grid, |x| x, spec, &mut stream(spec.seed, STREAM_TEMPLATE_NOISE));

    let mut priors = Vec::with_capacity(spec.n_priors);
    for i in 0..spec.n_priors as u64 {
        let mut geo = stream(spec.seed, STREAM_PRIOR_BASE + 2 * i);
        let scene = canonical.jittered(spec.anatomical_jitter_vox, &mut geo);
        let pw = PoseWarp::random(spec.size, &spec.prior_perturbation, &mut geo);
        let r = render(&scene, &grid, |z| pw.apply(z), spec, &mut stream(spec.seed, STREAM_PRIOR_BASE + 2 * i + 1));
        let inv = pw.affine.inverse()?;
        let field = DisplacementField::from_fn(grid.clone(), |y| {
            let z = pw.invert(y, &inv);
            [z[0] - y[0], z[1] - y[1], z[2] - y[2]]
        })?;
        priors.push(Prior {
            intensity: image(&grid, scaled(&r.wmn_norm, spec.wmn_scale)),
            labels: labels(&grid, r.labels),
            field,
            pose: pw,
        });
    }

    Ok(PhantomBundle {
        spec: spec.clone(),
        t1w: image(&grid, scaled(&sub.t1w_norm, spec.t1w_scale)),
        wmn: image(&grid, scaled(&sub.wmn_norm, spec.wmn_scale)),
        t1map: image(&grid, t1map),
        labels: labels(&grid, sub.labels),
        wm_mask: labels(&grid, wm_mask),
        csf_mask: labels(&grid, csf_mask),
        t1w_norm: image(&grid, sub.t1w_norm),
        wmn_norm: image(&grid, sub.wmn_norm),
        template_wmn: image(&grid, scaled(&tmpl.wmn_norm, spec.wmn_scale)),
        template_labels: labels(&grid, tmpl.labels),
        subject_to_template,
        priors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Random rigid motion: translations up to `magnitude` voxels and
    /// rotations up to `magnitude` degrees per axis.
    Affine,
    /// Smooth sinusoidal field of amplitude `magnitude` voxels.
    SmoothField,
}

/// Warps `vol` by a seeded perturbation and returns the exact field used.
pub fn perturb<T: Sample>(
    vol: &Volume<T>,
    kind: PerturbKind,
    magnitude: f64,
    seed: u64,
) -> Result<(Volume<T>, DisplacementField)> {
    if !(magnitude >= 0.0 && magnitude.is_finite()) {
        return Err(Error::InvalidArgument(format!("magnitude must be >= 0, got {magnitude}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = match kind {
        PerturbKind::Affine => {
            let p =
                Perturbation { max_translation_vox: magnitude, max_rotation_deg: magnitude, smooth_amplitude_vox: 0.0 };
            affine_to_field(&PoseWarp::random(vol.dims(), &p, &mut rng).affine, vol.grid())
        }
        PerturbKind::SmoothField => {
            let w = SmoothWarp::random(vol.dims(), magnitude, &mut rng);
            DisplacementField::from_fn(vol.grid().clone(), |p| w.eval(p))?
        }
    };
    let warped = apply_field(vol, &field, Interp::Trilinear)?;
    Ok((warped, field))
}

/// Pure translation: `out(x) = vol(x + t)` with the constant field `t`.
pub fn translate<T: Sample>(vol: &Volume<T>, t: [f64; 3]) -> Result<(Volume<T>, DisplacementField)> {
    let field = DisplacementField::constant(vol.grid().clone(), t);
    Ok((apply_field(vol, &field, Interp::Trilinear)?, field))
}

/// File names and ground-truth metadata of a bundle written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomManifest {
    pub spec: PhantomSpec,
    pub t1w: String,
    pub wmn: String,
    pub t1map: String,
    pub labels: String,
    pub wm_mask: String,
    pub csf_mask: String,
    pub template_wmn: String,
    pub template_labels: String,
    /// Stored-to-normalized divisors (`t1w / t1w_ref` has WM near 1).
    pub t1w_ref: f64,
    pub wmn_ref: f64,
    pub t1map_signal_scale: f64,
    pub inversion_time_ms: f64,
    pub subject_to_template: AffineTransform,
    pub priors: Vec<PriorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub intensity: String,
    pub labels: String,
    pub field: String,
}

pub fn write_bundle(bundle: &PhantomBundle, dir: impl AsRef<Path>) -> Result<PhantomManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let save = |name: &str, v: &ImageVolume| -> Result<String> {
        save_image(v, dir.join(name))?;
        Ok(name.to_string())
    };
    let save_l = |name: &str, v: &LabelVolume| -> Result<String> {
        save_labels(v, dir.join(name))?;
        Ok(name.to_string())
    };
    let mut priors = Vec::new();
    for (i, p) in bundle.priors.iter().enumerate() {
        let field = format!("prior{i:02}_field.nii.gz");
        p.field.save(dir.join(&field))?;
        priors.push(PriorEntry {
            intensity: save(&format!("prior{i:02}_wmn.nii.gz"), &p.intensity)?,
            labels: save_l(&format!("prior{i:02}_labels.nii.gz"), &p.labels)?,
            field,
        });
    }
    let manifest = PhantomManifest {
        spec: bundle.spec.clone(),
        t1w: save("t1w.nii.gz", &bundle.t1w)?,
        wmn: save("wmn.nii.gz", &bundle.wmn)?,
        t1map: save("t1map.nii.gz", &bundle.t1map)?,
        labels: save_l("labels.nii.gz", &bundle.labels)?,
        wm_mask: save_l("wm_mask.nii.gz", &bundle.wm_mask)?,
        csf_mask: save_l("csf_mask.nii.gz", &bundle.csf_mask)?,
        template_wmn: save("template_wmn.nii.gz", &bundle.template_wmn)?,
        template_labels: save_l("template_labels.nii.gz", &bundle.template_labels)?,
        t1w_ref: bundle.spec.t1w_scale,
        wmn_ref: bundle.spec.wmn_scale,
        t1map_signal_scale: T1MAP_SIGNAL_SCALE,
        inversion_time_ms: WMN_INVERSION_TIME_MS,
        subject_to_template: bundle.subject_to_template,
        priors,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

//! Multi-atlas segmentation: optional affine registration of the target to
//! the template that the prior fields are defined on, prior warping and
//! label fusion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, warp_priors, FusionMode, FusionParams, LabelPosterior, PriorInput};
use crate::registration::{
    affine_to_field, chain_fields, register_affine, DisplacementField, Registration, RegistrationConfig,
};
use crate::volume::{ImageVolume, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SegmentConfig {
    pub registration: RegistrationConfig,
    pub fusion: FusionParams,
    pub mode: FusionMode,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: LabelVolume,
    pub posterior: Option<LabelPosterior>,
    /// Template-to-target registration, when a template was given.
    pub registration: Option<Registration>,
}

/// Segments `target` from priors whose fields map `template` voxels into
/// each prior. Without a template the fields must already be on the target
/// grid.
pub fn segment(
    target: &ImageVolume,
    template: Option<&ImageVolume>,
    priors: &[PriorInput<'_>],
    config: &SegmentConfig,
) -> Result<Segmentation> {
    if priors.is_empty() {
        return Err(Error::Empty("no priors given".into()));
    }
    let (fields, registration) = match template {
        None => (priors.iter().map(|p| p.field.clone()).collect::<Vec<DisplacementField>>(), None),
        Some(tmpl) => {
            for (i, p) in priors.iter().enumerate() {
                tmpl.grid().check_same(p.field.grid(), &format!("prior {i} field vs template"))?;
            }
            let reg = register_affine(tmpl, target, &config.registration)?;
            // target voxel -> template voxel, then template -> prior through each field
            let to_template = affine_to_field(&reg.transform.inverse()?, target.grid());
            (priors.iter().map(|p| chain_fields(p.field, &to_template)).collect(), Some(reg))
        }
    };
    let composed: Vec<PriorInput<'_>> = priors
        .iter()
        .zip(&fields)
        .map(|(p, f)| PriorInput { intensity: p.intensity, labels: p.labels, field: f })
        .collect();
    let atlases = warp_priors(target.grid(), &composed)?;
    let (labels, posterior) = fuse(target, &atlases, &config.fusion, config.mode)?;
    Ok(Segmentation { labels, posterior, registration })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;
    use crate::phantom::{generate_phantom, Perturbation, PhantomSpec};
    use crate::registration::{mean_landmark_error, Metric};

    #[test]
    fn zero_fields_identical_priors_give_labels() {
        let b = generate_phantom(&PhantomSpec { size: [32; 3], n_priors: 0, ..Default::default() }).unwrap();
        let zero = DisplacementField::zeros(b.wmn.grid().clone());
        let priors = vec![PriorInput { intensity: &b.wmn, labels: &b.labels, field: &zero }; 3];
        for mode in [FusionMode::Majority, FusionMode::Joint] {
            let cfg = SegmentConfig { mode, ..Default::default() };
            assert_eq!(segment(&b.wmn, None, &priors, &cfg).unwrap().labels, b.labels);
        }
    }

    #[test]
    fn misaligned_subject_through_template() {
        let spec = PhantomSpec {
            size: [48; 3],
            seed: 3,
            n_priors: 3,
            subject_misalignment: Perturbation {
                max_translation_vox: 3.0,
                max_rotation_deg: 4.0,
                smooth_amplitude_vox: 0.0,
            },
            ..Default::default()
        };
        let b = generate_phantom(&spec).unwrap();
        let priors: Vec<PriorInput> = b
            .priors
            .iter()
            .map(|p| PriorInput { intensity: &p.intensity, labels: &p.labels, field: &p.field })
            .collect();
        let cfg = SegmentConfig {
            registration: RegistrationConfig { metric: Metric::Cc, ..Default::default() },
            ..Default::default()
        };
        let seg = segment(&b.wmn, Some(&b.template_wmn), &priors, &cfg).unwrap();
        // template voxel -> subject voxel is the inverse of the subject pose
        let truth = b.subject_to_template.inverse().unwrap();
        let reg = seg.registration.as_ref().unwrap();
        let err = mean_landmark_error(&reg.transform, &truth, &crate::registration::default_landmarks([48; 3]));
        assert!(err < 0.5, "landmark error {err}");
        let big = b.nuclei_by_size()[0].0;
        assert!(dice(&seg.labels, &b.labels, big).unwrap().value > 0.85);
        assert!(seg.posterior.is_some());
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hips_core::fusion::{FusionMode, PriorInput};
use hips_core::intensity::{contrast_stretch, normalize, slice_reference};
use hips_core::metrics::{agreement_report, bland_altman, ssim, AgreementRow, BlandAltman, SsimParams};
use hips_core::nifti::{load_image, load_labels, save_image, save_labels};
use hips_core::phantom::{generate_phantom, write_bundle, Perturbation, PhantomSpec};
use hips_core::registration::{DisplacementField, Metric};
use hips_core::segmentation::{segment, SegmentConfig};
use hips_core::stats::{clinical_pipeline, Group, SubjectRecord};
use hips_core::synthesis::{
    average_models, density_plot_data, fit_polynomial, hips_transform, rmse, sample_pairs, select_degree, PairSample,
    PolynomialModel,
};
use hips_core::volume::{ImageVolume, LabelVolume, NUCLEI};
use serde::{Deserialize, Serialize};

use crate::cli::{Cli, Command, EvaluateArgs, FitArgs, PhantomArgs, SegmentArgs, StatsArgs, SynthArgs};
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Context};
use crate::plot;

pub fn run(cli: Cli) -> CliResult<()> {
    cli.init_threads()?;
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cfg),
        Command::Synth(a) => cmd_synth(a, cfg),
        Command::Segment(a) => cmd_segment(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg),
        Command::Stats(a) => cmd_stats(a, cfg),
        Command::Phantom(a) => cmd_phantom(a, cfg),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("invalid {what} {}: {e}", path.display())))
}

fn image(path: &Path) -> CliResult<ImageVolume> {
    load_image(path).context(|| format!("reading {}", path.display()))
}

fn labels(path: &Path) -> CliResult<LabelVolume> {
    load_labels(path).context(|| format!("reading {}", path.display()))
}

/// Manifest entries are relative to the manifest's directory.
fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn csv_row<I, S>(w: &mut csv::Writer<std::fs::File>, row: I) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::Data(e.to_string()))
}

fn csv_finish(mut w: csv::Writer<std::fs::File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitManifest {
    pub pairs: Vec<FitPair>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitPair {
    pub t1w: String,
    pub wmn: String,
    /// Voxels to fit on; default is the nonzero T1w voxels.
    #[serde(default)]
    pub mask: Option<String>,
    /// Known normalization divisors; histogram references are used when absent.
    #[serde(default)]
    pub t1w_ref: Option<f64>,
    #[serde(default)]
    pub wmn_ref: Option<f64>,
}

fn pair_samples(
    manifest: &Path,
    i: usize,
    p: &FitPair,
    cfg: &PipelineConfig,
) -> CliResult<(Vec<PairSample>, f64, f64)> {
    let t1 = image(&resolve(manifest, &p.t1w))?;
    let wmn = image(&resolve(manifest, &p.wmn))?;
    t1.grid().check_same(wmn.grid(), "T1w vs WMn").context(|| format!("pair {i}"))?;
    let reference = |v: &ImageVolume, given: Option<f64>, what: &str| -> CliResult<f64> {
        match given {
            Some(r) => Ok(r),
            None => Ok(slice_reference(v, &cfg.histogram)
                .context(|| format!("pair {i}: {what} reference"))?
                .reference_value),
        }
    };
    let t1_ref = reference(&t1, p.t1w_ref, "T1w")?;
    let wmn_ref = reference(&wmn, p.wmn_ref, "WMn")?;
    let t1n = normalize(&t1, t1_ref).context(|| format!("pair {i}"))?;
    let wmnn = normalize(&wmn, wmn_ref).context(|| format!("pair {i}"))?;
    let mask = match &p.mask {
        Some(m) => labels(&resolve(manifest, m))?,
        None => LabelVolume::mask_from(&t1, |v| v != 0.0),
    };
    let samples = sample_pairs(&t1n, &wmnn, &mask, cfg.fit.max_samples, cfg.seed.wrapping_add(i as u64))
        .context(|| format!("pair {i}: sampling"))?;
    Ok((samples, t1_ref, wmn_ref))
}

pub fn cmd_fit(a: &FitArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    if let Some(d) = a.degree {
        cfg.fit.degree = d;
    }
    if let Some(n) = a.max_samples {
        cfg.fit.max_samples = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let manifest: FitManifest = read_json(&a.manifest, "pairs manifest")?;
    if manifest.pairs.is_empty() {
        return Err(CliError::Data(format!("pairs manifest {} lists no pairs", a.manifest.display())));
    }
    let mut per_pair = Vec::with_capacity(manifest.pairs.len());
    for (i, p) in manifest.pairs.iter().enumerate() {
        per_pair.push(pair_samples(&a.manifest, i, p, &cfg)?);
    }
    create_dir(&cfg.output_dir)?;
    if a.select_degree {
        // even-indexed samples train, odd-indexed validate
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (s, _, _) in &per_pair {
            for (k, x) in s.iter().enumerate() {
                if k % 2 == 0 {
                    train.push(*x)
                } else {
                    val.push(*x)
                }
            }
        }
        let sel = select_degree(&train, &val, &[1, 2, 3, 4], 1e-3).context(|| "degree selection".into())?;
        cfg.fit.degree = sel.selected;
        write_json(&cfg.output_dir.join("degree_selection.json"), &sel)?;
    }
    let mut models: Vec<PolynomialModel> = Vec::new();
    let mut w = csv_writer(&cfg.output_dir.join("fit_pairs.csv"))?;
    let mut head = vec!["pair".to_string(), "t1w".into(), "n_samples".into(), "t1w_ref".into(), "wmn_ref".into()];
    head.extend((0..=cfg.fit.degree).map(|c| format!("c{c}")));
    head.push("rmse".into());
    csv_row(&mut w, &head)?;
    for (i, ((samples, t1_ref, wmn_ref), p)) in per_pair.iter().zip(&manifest.pairs).enumerate() {
        let m = fit_polynomial(samples, cfg.fit.degree).context(|| format!("pair {i}: fit"))?;
        let mut row =
            vec![i.to_string(), p.t1w.clone(), samples.len().to_string(), csv_float(*t1_ref), csv_float(*wmn_ref)];
        row.extend(m.coeffs.iter().map(|c| csv_float(*c)));
        row.push(csv_float(rmse(&m, samples)));
        csv_row(&mut w, &row)?;
        models.push(m);
    }
    csv_finish(w)?;
    let avg = average_models(&models).context(|| "averaging models".into())?;
    write_text(&cfg.output_dir.join("model.json"), &(avg.to_json()? + "\n"))
}

#[derive(Debug, Serialize)]
struct ReferenceComparison {
    path: String,
    ssim_stretched: f64,
    pearson_r: f64,
    rms_unity_deviation: f64,
}

#[derive(Debug, Serialize)]
struct SynthReport {
    input: String,
    model: PolynomialModel,
    crop: Option<hips_core::volume::BoundingBox>,
    dims: [usize; 3],
    wm_mode_value: f64,
    wm_reference_value: f64,
    stretch_low_pct: f64,
    stretch_high_pct: f64,
    stretch_bounds: (f64, f64),
    rescale_value: f64,
    foreground_voxels: usize,
    reference: Option<ReferenceComparison>,
}

pub fn cmd_synth(a: &SynthArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    if let Some(m) = &a.model {
        cfg.model = m.clone();
    }
    if let Some(c) = a.crop {
        cfg.crop = c.0;
    }
    if let Some(v) = a.stretch_low {
        cfg.stretch_low = v;
    }
    if let Some(v) = a.stretch_high {
        cfg.stretch_high = v;
    }
    if let Some(v) = a.nbins {
        cfg.histogram.nbins = v;
    }
    if let Some(v) = a.tail_frac {
        cfg.histogram.tail_frac = v;
    }
    if let Some(v) = a.peak_height_frac {
        cfg.histogram.peak_height_frac = v;
    }
    cfg.validate()?;
    let model = cfg.load_model()?;
    let crop = |v: ImageVolume| -> CliResult<ImageVolume> {
        match &cfg.crop {
            Some(b) => v.crop(b).context(|| "cropping".into()),
            None => Ok(v),
        }
    };
    let t1 = crop(image(&a.input)?)?;
    let out =
        hips_transform(&t1, &model, &cfg.hips_params()).context(|| format!("synthesizing {}", a.input.display()))?;
    create_dir(&cfg.output_dir)?;
    save_image(&out.volume, cfg.output_dir.join("hips.nii.gz")).context(|| "writing hips.nii.gz".into())?;

    let mut hist = csv_writer(&cfg.output_dir.join("histogram.csv"))?;
    csv_row(&mut hist, ["bin_low", "bin_high", "count"])?;
    for (k, c) in out.summary.counts.iter().enumerate() {
        let e = &out.summary.bin_edges;
        csv_row(&mut hist, [csv_float(e[k]), csv_float(e[k + 1]), c.to_string()])?;
    }
    csv_finish(hist)?;

    let mask = LabelVolume::mask_from(&t1, |v| v != 0.0);
    let reference = match &a.reference {
        None => None,
        Some(path) => {
            let native = crop(image(path)?)?;
            native.grid().check_same(t1.grid(), "reference vs input").context(|| path.display().to_string())?;
            let native_s = contrast_stretch(&native, cfg.stretch_low, cfg.stretch_high)
                .context(|| format!("stretching {}", path.display()))?;
            let s = ssim(&out.stretched, &native_s, &mask, SsimParams::default()).context(|| "SSIM".into())?;
            let d = density_plot_data(&native_s, &out.stretched, &mask, 64).context(|| "density plot".into())?;
            write_text(&cfg.output_dir.join("density.csv"), &d.to_csv())?;
            write_text(
                &cfg.output_dir.join("density.svg"),
                &plot::density_svg(&d, "HIPS vs native WMn (stretched)", "native WMn", "HIPS"),
            )?;
            Some(ReferenceComparison {
                path: path.display().to_string(),
                ssim_stretched: s,
                pearson_r: d.pearson_r,
                rms_unity_deviation: d.rms_unity_deviation,
            })
        }
    };
    let report = SynthReport {
        input: a.input.display().to_string(),
        model,
        crop: cfg.crop,
        dims: t1.grid().dims,
        wm_mode_value: out.summary.mode_value,
        wm_reference_value: out.summary.reference_value,
        stretch_low_pct: cfg.stretch_low,
        stretch_high_pct: cfg.stretch_high,
        stretch_bounds: out.stretch_bounds,
        rescale_value: out.rescale_value,
        foreground_voxels: mask.nonzero_count(),
        reference,
    };
    write_json(&cfg.output_dir.join("synth_report.json"), &report)
}

/// Priors manifest. The phantom bundle manifest is accepted as is: its
/// `template_wmn` names the template.
#[derive(Debug, Clone, Deserialize)]
pub struct PriorsManifest {
    #[serde(default, alias = "template_wmn")]
    pub template: Option<String>,
    pub priors: Vec<PriorFiles>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PriorFiles {
    pub intensity: String,
    pub labels: String,
    pub field: String,
}

struct LoadedPrior {
    intensity: ImageVolume,
    labels: LabelVolume,
    field: DisplacementField,
}

#[derive(Debug, Serialize)]
struct SegmentReport {
    target: String,
    n_priors: usize,
    mode: FusionMode,
    registration: Option<RegistrationSummary>,
    volumes_voxels: BTreeMap<String, usize>,
}

#[derive(Debug, Serialize)]
struct RegistrationSummary {
    metric: Metric,
    final_metric: f64,
    template_to_target: hips_core::registration::AffineTransform,
}

pub fn cmd_segment(a: &SegmentArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    if let Some(p) = &a.priors {
        cfg.priors = Some(p.clone());
    }
    if let Some(m) = a.mode {
        cfg.fusion_mode = m;
    }
    if let Some(m) = a.metric {
        cfg.registration.metric = m;
    }
    cfg.validate()?;
    let manifest_path = cfg.priors.clone().ok_or_else(|| CliError::Usage("no priors manifest (--priors)".into()))?;
    let manifest: PriorsManifest = read_json(&manifest_path, "priors manifest")?;
    if manifest.priors.is_empty() {
        return Err(CliError::Data(format!("priors manifest {} lists no priors", manifest_path.display())));
    }
    let target = image(&a.target)?;
    let mut loaded = Vec::with_capacity(manifest.priors.len());
    for (i, p) in manifest.priors.iter().enumerate() {
        let name = |kind: &str, f: &str| format!("prior {i} {kind} ({})", resolve(&manifest_path, f).display());
        loaded.push(LoadedPrior {
            intensity: load_image(resolve(&manifest_path, &p.intensity)).context(|| name("intensity", &p.intensity))?,
            labels: load_labels(resolve(&manifest_path, &p.labels)).context(|| name("labels", &p.labels))?,
            field: DisplacementField::load(resolve(&manifest_path, &p.field)).context(|| name("field", &p.field))?,
        });
    }
    let template = match (&manifest.template, a.no_template) {
        (Some(t), false) => Some(image(&resolve(&manifest_path, t))?),
        _ => None,
    };
    let inputs: Vec<PriorInput<'_>> =
        loaded.iter().map(|p| PriorInput { intensity: &p.intensity, labels: &p.labels, field: &p.field }).collect();
    let seg_cfg = SegmentConfig { registration: cfg.registration, fusion: cfg.fusion, mode: cfg.fusion_mode };
    let seg = segment(&target, template.as_ref(), &inputs, &seg_cfg)
        .context(|| format!("segmenting {}", a.target.display()))?;

    create_dir(&cfg.output_dir)?;
    save_labels(&seg.labels, cfg.output_dir.join("labels.nii.gz")).context(|| "writing labels.nii.gz".into())?;
    if a.posteriors {
        match &seg.posterior {
            Some(post) => {
                for (id, name) in NUCLEI {
                    let file = format!("posterior_{}.nii.gz", name.replace('-', "_"));
                    save_image(&post.label_map(id), cfg.output_dir.join(&file))
                        .context(|| format!("writing {file}"))?;
                }
            }
            None => return Err(CliError::Usage("posteriors are only produced by joint fusion".into())),
        }
    }
    let report = SegmentReport {
        target: a.target.display().to_string(),
        n_priors: loaded.len(),
        mode: cfg.fusion_mode,
        registration: seg.registration.as_ref().map(|r| RegistrationSummary {
            metric: cfg.registration.metric,
            final_metric: r.metric_value,
            template_to_target: r.transform,
        }),
        volumes_voxels: NUCLEI.iter().map(|(id, name)| (name.to_string(), seg.labels.count(*id))).collect(),
    };
    write_json(&cfg.output_dir.join("segment_report.json"), &report)
}

pub fn cmd_evaluate(a: &EvaluateArgs, cfg: PipelineConfig) -> CliResult<()> {
    cfg.validate()?;
    if a.seg.len() != a.reference.len() {
        return Err(CliError::Usage(format!("{} --seg but {} --ref", a.seg.len(), a.reference.len())));
    }
    if !a.subject.is_empty() && a.subject.len() != a.seg.len() {
        return Err(CliError::Usage("give one --subject per --seg or none".into()));
    }
    // per subject: rows plus the voxel volume
    let mut results: Vec<(String, Vec<AgreementRow>, f64)> = Vec::new();
    for (i, (s, r)) in a.seg.iter().zip(&a.reference).enumerate() {
        let seg = labels(s)?;
        let reference = labels(r)?;
        let rows = agreement_report(&seg, &reference).context(|| format!("{} vs {}", s.display(), r.display()))?;
        let subject = a.subject.get(i).cloned().unwrap_or_else(|| format!("subject{}", i + 1));
        results.push((subject, rows, seg.grid().voxel_volume_mm3()));
    }
    create_dir(&cfg.output_dir)?;
    let mut w = csv_writer(&cfg.output_dir.join("evaluation.csv"))?;
    csv_row(&mut w, ["subject", "method", "label_id", "label_name", "dice", "vol_err_signed", "vol_err_abs", "vsi"])?;
    for (subject, rows, _) in &results {
        for row in rows {
            csv_row(
                &mut w,
                [
                    subject.clone(),
                    a.method.clone(),
                    row.label_id.to_string(),
                    row.label_name.clone(),
                    csv_float(row.dice),
                    csv_float(row.volume_error_pct_signed.unwrap_or(f64::NAN)),
                    csv_float(row.volume_error_pct_abs.unwrap_or(f64::NAN)),
                    csv_float(row.vsi),
                ],
            )?;
        }
    }
    csv_finish(w)?;

    // Bland-Altman of segmented minus reference volume (mm^3), per structure
    // across subjects and pooled over the 12 nuclei.
    let n_rows = results[0].1.len();
    let mut ba = csv_writer(&cfg.output_dir.join("bland_altman.csv"))?;
    csv_row(&mut ba, ["label_id", "label_name", "n", "mean_diff_mm3", "sd_diff_mm3", "loa_low_mm3", "loa_high_mm3"])?;
    let ba_row =
        |ba: &mut csv::Writer<std::fs::File>, id: &str, name: &str, diffs: &[f64]| -> CliResult<Option<BlandAltman>> {
            let b = bland_altman(diffs).ok();
            let f = |g: fn(&BlandAltman) -> f64| csv_float(b.as_ref().map_or(f64::NAN, g));
            csv_row(
                ba,
                [
                    id.to_string(),
                    name.to_string(),
                    diffs.len().to_string(),
                    f(|b| b.mean_diff),
                    f(|b| b.sd_diff),
                    f(|b| b.loa_low),
                    f(|b| b.loa_high),
                ],
            )?;
            Ok(b)
        };
    let (mut means, mut diffs, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_rows {
        let mut d = Vec::new();
        for (_, rows, vox) in &results {
            let (s, r) = (rows[k].volume_seg as f64 * vox, rows[k].volume_ref as f64 * vox);
            d.push(s - r);
            if rows[k].label_id != 0 {
                means.push((s + r) / 2.0);
                diffs.push(s - r);
                pairs.push((r, s));
            }
        }
        let row = &results[0].1[k];
        ba_row(&mut ba, &row.label_id.to_string(), &row.label_name, &d)?;
    }
    let pooled = ba_row(&mut ba, "", "ALL_NUCLEI", &diffs)?;
    csv_finish(ba)?;
    write_text(
        &cfg.output_dir.join("volumes.svg"),
        &plot::scatter_svg(&pairs, "Nucleus volumes (mm^3)", "reference", "segmentation"),
    )?;
    write_text(
        &cfg.output_dir.join("bland_altman.svg"),
        &plot::bland_altman_svg(&means, &diffs, pooled.as_ref(), "Bland-Altman, nucleus volumes (mm^3)"),
    )
}

/// Reads `id, group, hemisphere, age, icv, <label>...`.
pub fn read_cohort_csv(path: &Path) -> CliResult<Vec<SubjectRecord>> {
    let mut rd =
        csv::Reader::from_path(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let header = rd.headers().map_err(|e| CliError::Data(e.to_string()))?.clone();
    const FIXED: [&str; 5] = ["id", "group", "hemisphere", "age", "icv"];
    for (k, name) in FIXED.iter().enumerate() {
        if header.get(k).map(str::trim) != Some(name) {
            return Err(CliError::Data(format!("cohort column {} must be '{name}'", k + 1)));
        }
    }
    let labels: Vec<String> = header.iter().skip(5).map(|s| s.trim().to_string()).collect();
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
        let bad = |what: &str| CliError::Data(format!("{}: row {}: bad {what}", path.display(), line + 2));
        let num = |k: usize, what: &str| -> CliResult<f64> {
            rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(what))
        };
        let group: Group = rec.get(1).unwrap_or("").parse().map_err(|_| bad("group"))?;
        let mut volumes = BTreeMap::new();
        for (j, l) in labels.iter().enumerate() {
            volumes.insert(l.clone(), num(5 + j, l)?);
        }
        out.push(SubjectRecord {
            id: rec.get(0).unwrap_or("").trim().to_string(),
            group,
            hemisphere: rec.get(2).unwrap_or("").trim().to_string(),
            age: num(3, "age")?,
            icv: num(4, "icv")?,
            volumes,
        });
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("cohort {} has no rows", path.display())));
    }
    Ok(out)
}

pub fn write_cohort_csv(records: &[SubjectRecord], path: &Path) -> CliResult<()> {
    let labels: Vec<String> = records.first().map(|r| r.volumes.keys().cloned().collect()).unwrap_or_default();
    let mut w = csv_writer(path)?;
    let mut head: Vec<String> = ["id", "group", "hemisphere", "age", "icv"].iter().map(|s| s.to_string()).collect();
    head.extend(labels.iter().cloned());
    csv_row(&mut w, &head)?;
    for r in records {
        let group = match r.group {
            Group::Control => "control",
            Group::Patient => "patient",
        };
        let mut row = vec![r.id.clone(), group.into(), r.hemisphere.clone(), csv_float(r.age), csv_float(r.icv)];
        for l in &labels {
            row.push(csv_float(r.volume(l)?));
        }
        csv_row(&mut w, &row)?;
    }
    csv_finish(w)
}

pub fn cmd_stats(a: &StatsArgs, mut cfg: PipelineConfig) -> CliResult<()> {
    if let Some(l) = &a.labels {
        cfg.clinical.labels = l.clone();
    }
    if let Some(o) = a.outlier_sd {
        cfg.clinical.outlier_sd = o.0;
    }
    cfg.validate()?;
    let records = read_cohort_csv(&a.cohort)?;
    let report =
        clinical_pipeline(&records, &cfg.clinical, &a.method).context(|| format!("cohort {}", a.cohort.display()))?;
    create_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("clinical_report.json"), &report)?;
    write_text(&cfg.output_dir.join("clinical_report.csv"), &report.to_csv())
}

pub fn cmd_phantom(a: &PhantomArgs, cfg: PipelineConfig) -> CliResult<()> {
    cfg.validate()?;
    let spec = PhantomSpec {
        size: [a.size; 3],
        seed: a.seed.unwrap_or(cfg.seed),
        noise_sigma: a.noise,
        t1w_noise_sigma: a.t1w_noise,
        n_priors: a.priors,
        anatomical_jitter_vox: a.jitter,
        t1w_nuclear_contrast: a.contrast,
        subject_misalignment: Perturbation {
            max_translation_vox: a.misalign_translation,
            max_rotation_deg: a.misalign_rotation,
            smooth_amplitude_vox: 0.0,
        },
        ..Default::default()
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bundle = generate_phantom(&spec).context(|| "generating phantom".into())?;
    write_bundle(&bundle, &cfg.output_dir).context(|| format!("writing bundle to {}", cfg.output_dir.display()))?;
    Ok(())
}

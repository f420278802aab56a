//! Clinical-validation statistics: OLS with inference, the two-group ANCOVA
//! effect, residual-method covariate adjustment, IRLS logistic regression and
//! rank-based ROC AUC.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, least_squares, Matrix};
use crate::metrics::mean_sd;
use crate::special::student_t_two_sided;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Control,
    Patient,
}

impl Group {
    pub fn indicator(self) -> f64 {
        match self {
            Group::Control => 0.0,
            Group::Patient => 1.0,
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "control" | "hc" | "0" => Ok(Group::Control),
            "patient" | "aud" | "1" => Ok(Group::Patient),
            other => Err(Error::InvalidArgument(format!("unknown group '{other}'"))),
        }
    }
}

/// One subject (one hemisphere) of a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub group: Group,
    pub hemisphere: String,
    pub age: f64,
    pub icv: f64,
    pub volumes: BTreeMap<String, f64>,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.age > 0.0) {
            return Err(Error::InvalidArgument(format!("{}: age must be > 0", self.id)));
        }
        if !(self.icv > 0.0) {
            return Err(Error::InvalidArgument(format!("{}: icv must be > 0", self.id)));
        }
        if let Some((k, v)) = self.volumes.iter().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{}: volume {k} = {v} is negative", self.id)));
        }
        Ok(())
    }

    pub fn volume(&self, label: &str) -> Result<f64> {
        self.volumes
            .get(label)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("{}: no volume for '{label}'", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    pub df_residual: usize,
    /// Residual variance estimate.
    pub sigma2: f64,
}

impl LinearModelFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum()
    }
}

pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearModelFit> {
    let (n, p) = (x.rows(), x.cols());
    if n <= p {
        return Err(Error::RankDeficient(format!("{n} observations for {p} coefficients")));
    }
    let ls = least_squares(x, y)?;
    let b = ls.coefficients;
    let residuals: Vec<f64> = (0..n).map(|r| y[r] - x.row(r).iter().zip(&b).map(|(a, c)| a * c).sum::<f64>()).collect();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let ymean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - ymean).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else if ssr == 0.0 {
        1.0
    } else {
        0.0
    };
    let df = n - p;
    let sigma2 = ssr / df as f64;
    let mut std_errors = Vec::with_capacity(p);
    let mut t_stats = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for (j, &bj) in b.iter().enumerate() {
        let se = (sigma2 * ls.xtx_inverse[(j, j)]).max(0.0).sqrt();
        let t = if se > 0.0 {
            bj / se
        } else if bj == 0.0 {
            0.0
        } else {
            bj.signum() * f64::INFINITY
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(student_t_two_sided(t, df as f64));
    }
    Ok(LinearModelFit { coefficients: b, std_errors, t_stats, p_values, residuals, r_squared, df_residual: df, sigma2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEffect {
    /// Patient minus control, adjusted for age and ICV.
    pub coefficient: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Group main effect from `volume ~ 1 + group + age + icv`.
pub fn ancova_group_effect(records: &[SubjectRecord], label: &str) -> Result<GroupEffect> {
    let n_pat = records.iter().filter(|r| r.group == Group::Patient).count();
    if n_pat == 0 || n_pat == records.len() {
        return Err(Error::InvalidArgument("ANCOVA needs both groups".into()));
    }
    let rows: Vec<Vec<f64>> = records.iter().map(|r| vec![1.0, r.group.indicator(), r.age, r.icv]).collect();
    let y = records.iter().map(|r| r.volume(label)).collect::<Result<Vec<_>>>()?;
    let fit = ols_fit(&Matrix::from_rows(&rows)?, &y)?;
    let scale = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    if fit.sigma2 <= 1e-24 * scale {
        return Err(Error::Degenerate(format!("'{label}': zero residual variance")));
    }
    Ok(GroupEffect {
        coefficient: fit.coefficients[1],
        std_error: fit.std_errors[1],
        t: fit.t_stats[1],
        p: fit.p_values[1],
        n: records.len(),
    })
}

/// Which subjects the residual-method regression is fitted on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualFitSubset {
    #[default]
    ControlsOnly,
    All,
}

/// `volume - predicted(age, icv) + mean(volume over the fitting subset)` for every record.
pub fn residual_adjust(records: &[SubjectRecord], label: &str, subset: ResidualFitSubset) -> Result<Vec<f64>> {
    let fitting: Vec<&SubjectRecord> =
        records.iter().filter(|r| subset == ResidualFitSubset::All || r.group == Group::Control).collect();
    if fitting.len() < 4 {
        return Err(Error::InvalidArgument(format!("residual fit needs >= 4 subjects, got {}", fitting.len())));
    }
    let rows: Vec<Vec<f64>> = fitting.iter().map(|r| vec![1.0, r.age, r.icv]).collect();
    let y = fitting.iter().map(|r| r.volume(label)).collect::<Result<Vec<_>>>()?;
    let fit = ols_fit(&Matrix::from_rows(&rows)?, &y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    records.iter().map(|r| Ok(r.volume(label)? - fit.predict(&[1.0, r.age, r.icv]) + mean)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Perfect or quasi-complete separation: the MLE does not exist and the
    /// coefficients are only meaningful as a ranking direction.
    pub separated: bool,
}

impl LogisticFit {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum()
    }
}

pub const LOGISTIC_MAX_ITER: usize = 100;
pub const LOGISTIC_TOL: f64 = 1e-8;
pub const SEPARATION_NORM: f64 = 1e3;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Log-likelihood of a logistic model.
pub fn logistic_log_likelihood(x: &Matrix, y: &[bool], beta: &[f64]) -> f64 {
    (0..x.rows())
        .map(|r| {
            let eta: f64 = x.row(r).iter().zip(beta).map(|(a, b)| a * b).sum();
            // log(1 + e^eta) computed stably
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            if y[r] {
                eta - softplus
            } else {
                -softplus
            }
        })
        .sum()
}

fn separates(x: &Matrix, y: &[bool], beta: &[f64]) -> bool {
    let (mut min_pos, mut max_neg) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in 0..x.rows() {
        let eta: f64 = x.row(r).iter().zip(beta).map(|(a, b)| a * b).sum();
        if y[r] {
            min_pos = min_pos.min(eta);
        } else {
            max_neg = max_neg.max(eta);
        }
    }
    min_pos >= max_neg
}

/// Maximum likelihood by IRLS from a zero start.
pub fn logistic_fit(x: &Matrix, y: &[bool]) -> Result<LogisticFit> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::InvalidArgument(format!("{n} rows but {} labels", y.len())));
    }
    let npos = y.iter().filter(|&&v| v).count();
    if npos == 0 || npos == n {
        return Err(Error::InvalidArgument("logistic regression needs both classes".into()));
    }
    let mut beta = vec![0.0; p];
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    while iterations < LOGISTIC_MAX_ITER {
        iterations += 1;
        let mut h = Matrix::zeros(p, p);
        let mut g = vec![0.0; p];
        for r in 0..n {
            let row = x.row(r);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = sigmoid(eta);
            let w = mu * (1.0 - mu);
            let resid = if y[r] { 1.0 } else { 0.0 } - mu;
            for i in 0..p {
                g[i] += row[i] * resid;
                for j in 0..=i {
                    h[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        let step = match cholesky(&h, 1e-14) {
            Ok(l) => cholesky_solve(&l, &g),
            Err(e) => {
                // Weights vanish once every fitted probability saturates
                if separates(x, y, &beta) {
                    separated = true;
                    break;
                }
                return Err(e);
            }
        };
        let max_step = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > SEPARATION_NORM || !norm.is_finite() {
            separated = true;
            break;
        }
        if max_step < LOGISTIC_TOL {
            converged = true;
            break;
        }
    }
    if !converged && !separated {
        if separates(x, y, &beta) {
            separated = true;
        } else {
            return Err(Error::NonConvergence(format!("IRLS did not converge in {LOGISTIC_MAX_ITER} iterations")));
        }
    }
    Ok(LogisticFit { coefficients: beta, iterations, converged, separated })
}

/// Mann-Whitney pair counts: `(2 * concordant + ties, positive-negative pairs)`.
pub fn roc_auc_counts(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite(scores.iter().position(|s| s.is_nan()).unwrap()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let npos = labels.iter().filter(|&&v| v).count() as u64;
    let nneg = labels.len() as u64 - npos;
    if npos == 0 || nneg == 0 {
        return Err(Error::InvalidArgument("ROC needs both classes".into()));
    }
    // sweep tie blocks in ascending score order
    let (mut twice, mut neg_below) = (0u64, 0u64);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos_here = idx[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        let neg_here = (j - i) as u64 - pos_here;
        twice += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok((twice, npos * nneg))
}

/// Mann-Whitney AUC with half credit for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (twice, pairs) = roc_auc_counts(scores, labels)?;
    Ok(twice as f64 / (2 * pairs) as f64)
}

/// Reference AUCs reported for the joint VLP+VPL model, as report context.
pub const PAPER_REFERENCE_AUCS: [(&str, f64); 3] = [("WMn-THOMAS", 0.84), ("HIPS-THOMAS", 0.79), ("T1w-THOMAS", 0.73)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClinicalConfig {
    pub labels: Vec<String>,
    /// Within-group |z| threshold on raw volume; `None` disables removal.
    pub outlier_sd: Option<f64>,
    pub residual_fit: ResidualFitSubset,
}

impl Default for ClinicalConfig {
    fn default() -> Self {
        ClinicalConfig {
            labels: vec!["VLP".into(), "VPL".into()],
            outlier_sd: Some(3.0),
            residual_fit: ResidualFitSubset::ControlsOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusResult {
    pub label: String,
    pub n_control: usize,
    pub n_patient: usize,
    pub outliers: Vec<String>,
    pub group_coefficient: f64,
    pub group_p: f64,
    pub mean_adjusted_control: f64,
    pub mean_adjusted_patient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemisphereResult {
    pub hemisphere: String,
    pub nuclei: Vec<NucleusResult>,
    /// Subjects that survive outlier removal for every label.
    pub n_joint: usize,
    /// Coefficients on z-scored adjusted volumes: intercept, then one per label.
    pub logistic_coefficients: Vec<f64>,
    pub logistic_separated: bool,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalReport {
    pub method: String,
    pub reference_aucs: BTreeMap<String, f64>,
    pub config: ClinicalConfig,
    pub hemispheres: Vec<HemisphereResult>,
}

impl ClinicalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,hemisphere,label,n_control,n_patient,n_outliers,group_coeff,group_p,auc\n");
        for h in &self.hemispheres {
            for n in &h.nuclei {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    self.method,
                    h.hemisphere,
                    n.label,
                    n.n_control,
                    n.n_patient,
                    n.outliers.len(),
                    n.group_coefficient,
                    n.group_p,
                    h.auc
                ));
            }
        }
        out
    }
}

fn outlier_ids(records: &[&SubjectRecord], label: &str, sd: f64) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for g in [Group::Control, Group::Patient] {
        let members: Vec<&&SubjectRecord> = records.iter().filter(|r| r.group == g).collect();
        if members.len() < 3 {
            continue;
        }
        let v = members.iter().map(|r| r.volume(label)).collect::<Result<Vec<_>>>()?;
        let (m, s) = mean_sd(&v);
        if s == 0.0 {
            continue;
        }
        out.extend(members.iter().zip(&v).filter(|(_, x)| ((*x - m) / s).abs() > sd).map(|(r, _)| r.id.clone()));
    }
    Ok(out)
}

fn z_score(v: &[f64]) -> Vec<f64> {
    let (m, s) = mean_sd(v);
    let s = if s > 0.0 { s } else { 1.0 };
    v.iter().map(|x| (x - m) / s).collect()
}

/// Per hemisphere: outlier removal, residual adjustment and ANCOVA per label,
/// then a joint logistic model on the adjusted volumes and its ROC AUC.
pub fn clinical_pipeline(records: &[SubjectRecord], config: &ClinicalConfig, method: &str) -> Result<ClinicalReport> {
    if config.labels.is_empty() {
        return Err(Error::InvalidArgument("no labels selected".into()));
    }
    for r in records {
        r.validate()?;
    }
    let mut hemis: Vec<String> = records.iter().map(|r| r.hemisphere.clone()).collect();
    hemis.sort();
    hemis.dedup();
    let mut results = Vec::new();
    for hemi in hemis {
        let subset: Vec<&SubjectRecord> = records.iter().filter(|r| r.hemisphere == hemi).collect();
        let mut nuclei = Vec::new();
        let mut excluded: Vec<String> = Vec::new();
        for label in &config.labels {
            let outliers = match config.outlier_sd {
                Some(sd) => outlier_ids(&subset, label, sd)?,
                None => Vec::new(),
            };
            excluded.extend(outliers.iter().cloned());
            let kept: Vec<SubjectRecord> =
                subset.iter().filter(|r| !outliers.contains(&r.id)).map(|r| (*r).clone()).collect();
            let effect = ancova_group_effect(&kept, label)?;
            let adjusted = residual_adjust(&kept, label, config.residual_fit)?;
            let mean_of = |g: Group| {
                let v: Vec<f64> = kept.iter().zip(&adjusted).filter(|(r, _)| r.group == g).map(|(_, a)| *a).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            nuclei.push(NucleusResult {
                label: label.clone(),
                n_control: kept.iter().filter(|r| r.group == Group::Control).count(),
                n_patient: kept.iter().filter(|r| r.group == Group::Patient).count(),
                outliers,
                group_coefficient: effect.coefficient,
                group_p: effect.p,
                mean_adjusted_control: mean_of(Group::Control),
                mean_adjusted_patient: mean_of(Group::Patient),
            });
        }
        let joint: Vec<SubjectRecord> =
            subset.iter().filter(|r| !excluded.contains(&r.id)).map(|r| (*r).clone()).collect();
        let mut columns = Vec::new();
        for label in &config.labels {
            columns.push(z_score(&residual_adjust(&joint, label, config.residual_fit)?));
        }
        let rows: Vec<Vec<f64>> =
            (0..joint.len()).map(|i| std::iter::once(1.0).chain(columns.iter().map(|c| c[i])).collect()).collect();
        let x = Matrix::from_rows(&rows)?;
        let y: Vec<bool> = joint.iter().map(|r| r.group == Group::Patient).collect();
        let fit = logistic_fit(&x, &y)?;
        let scores: Vec<f64> = rows.iter().map(|r| fit.linear_predictor(r)).collect();
        let auc = roc_auc(&scores, &y)?;
        results.push(HemisphereResult {
            hemisphere: hemi,
            nuclei,
            n_joint: joint.len(),
            logistic_coefficients: fit.coefficients,
            logistic_separated: fit.separated,
            auc,
        });
    }
    Ok(ClinicalReport {
        method: method.to_string(),
        reference_aucs: PAPER_REFERENCE_AUCS.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        config: config.clone(),
        hemispheres: results,
    })
}

/// Parameters of a seeded synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_control: usize,
    pub n_patient: usize,
    /// Patient shift of every label, in units of the label's residual SD.
    pub shift_sd: f64,
    pub hemispheres: Vec<String>,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec { n_control: 23, n_patient: 21, shift_sd: 0.0, hemispheres: vec!["L".into(), "R".into()], seed: 0 }
    }
}

/// Cohort with VLP and VPL volumes depending linearly on age and ICV plus
/// Gaussian noise; patients are shifted by `shift_sd` residual SDs.
pub fn simulate_cohort(spec: &CohortSpec) -> Vec<SubjectRecord> {
    // (label, mean mm^3, per-year slope, per-mm^3-ICV slope, residual SD)
    const LABELS: [(&str, f64, f64, f64, f64); 2] =
        [("VLP", 900.0, -2.0, 3e-4, 60.0), ("VPL", 420.0, -1.0, 1.5e-4, 35.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let age = Uniform::new(25.0, 65.0).expect("valid range");
    let icv = Normal::new(1.5e6, 1.2e5).expect("valid sd");
    let unit = Normal::new(0.0, 1.0).expect("valid sd");
    let mut out = Vec::new();
    for (g, n) in [(Group::Control, spec.n_control), (Group::Patient, spec.n_patient)] {
        for s in 0..n {
            let a: f64 = age.sample(&mut rng);
            let v: f64 = icv.sample(&mut rng);
            for hemi in &spec.hemispheres {
                let volumes = LABELS
                    .iter()
                    .map(|&(name, mean, b_age, b_icv, sd)| {
                        let shift = if g == Group::Patient { spec.shift_sd * sd } else { 0.0 };
                        let e: f64 = unit.sample(&mut rng);
                        let vol = mean + b_age * (a - 45.0) + b_icv * (v - 1.5e6) + shift + sd * e;
                        (name.to_string(), vol.max(1.0))
                    })
                    .collect();
                out.push(SubjectRecord {
                    id: format!("{}{:02}", if g == Group::Control { "hc" } else { "pt" }, s),
                    group: g,
                    hemisphere: hemi.clone(),
                    age: a,
                    icv: v,
                    volumes,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&xs.iter().map(|&x| vec![1.0, x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ols_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.5, 7.0];
        let y: Vec<f64> = xs.iter().map(|x| 2.0 + 3.0 * x).collect();
        let f = ols_fit(&design(&xs), &y).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-12 && (f.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn ols_orthogonal_and_hand_case() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let f = ols_fit(&design(&xs), &[1.0, -1.0, 0.0, -1.0, 1.0]).unwrap();
        assert!(f.coefficients[1].abs() < 1e-14);
        let f = ols_fit(&design(&[1.0, 2.0, 3.0, 4.0, 5.0]), &[2.0, 4.0, 5.0, 4.0, 5.0]).unwrap();
        assert!((f.coefficients[0] - 2.2).abs() < 1e-12);
        assert!((f.coefficients[1] - 0.6).abs() < 1e-12);
        // SSR = 2.4, sigma2 = 0.8, Sxx = 10 -> se(slope) = sqrt(0.08)
        assert!((f.sigma2 - 0.8).abs() < 1e-12);
        assert!((f.std_errors[1] - 0.08f64.sqrt()).abs() < 1e-12);
        assert!((f.r_squared - 0.6).abs() < 1e-12);
    }

    fn rec(id: &str, g: Group, age: f64, icv: f64, vlp: f64) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            group: g,
            hemisphere: "L".into(),
            age,
            icv,
            volumes: [("VLP".to_string(), vlp)].into_iter().collect(),
        }
    }

    #[test]
    fn ancova_exact_shift() {
        let mut recs = Vec::new();
        let covs = [(30.0, 1.4e6), (41.0, 1.6e6), (52.0, 1.5e6), (60.0, 1.3e6), (35.0, 1.55e6)];
        for (i, &(a, v)) in covs.iter().enumerate() {
            let base = 800.0 - 2.0 * a + 1e-4 * v + [3.0, -5.0, 8.0, -1.0, 4.0][i];
            recs.push(rec(&format!("c{i}"), Group::Control, a, v, base));
            recs.push(rec(&format!("p{i}"), Group::Patient, a, v, base - 500.0));
        }
        let e = ancova_group_effect(&recs, "VLP").unwrap();
        assert!((e.coefficient + 500.0).abs() < 1e-8);
        assert!(e.p < 1e-6);
    }

    #[test]
    fn ancova_errors() {
        let recs: Vec<_> = (0..8)
            .map(|i| {
                rec(
                    &format!("s{i}"),
                    if i % 2 == 0 { Group::Control } else { Group::Patient },
                    30.0 + i as f64 * 3.0,
                    1.4e6 + (i * i) as f64 * 1e4,
                    700.0,
                )
            })
            .collect();
        assert!(matches!(ancova_group_effect(&recs, "VLP"), Err(Error::Degenerate(_))));
        let mut constant_age = recs.clone();
        for (i, r) in constant_age.iter_mut().enumerate() {
            r.age = 40.0;
            r.volumes.insert("VLP".into(), 700.0 + i as f64);
        }
        assert!(matches!(ancova_group_effect(&constant_age, "VLP"), Err(Error::RankDeficient(_))));
        let controls: Vec<_> = recs.iter().filter(|r| r.group == Group::Control).cloned().collect();
        assert!(ancova_group_effect(&controls, "VLP").is_err());
    }

    #[test]
    fn ancova_null_seed() {
        let cohort = simulate_cohort(&CohortSpec { seed: 2, hemispheres: vec!["L".into()], ..Default::default() });
        let e = ancova_group_effect(&cohort, "VLP").unwrap();
        assert!(e.p > 0.05, "p = {}", e.p);
    }

    #[test]
    fn residual_adjust_properties() {
        let cohort = simulate_cohort(&CohortSpec {
            seed: 3,
            shift_sd: 1.0,
            hemispheres: vec!["R".into()],
            ..Default::default()
        });
        let adj = residual_adjust(&cohort, "VLP", ResidualFitSubset::ControlsOnly).unwrap();
        let ctrl: Vec<usize> = (0..cohort.len()).filter(|&i| cohort[i].group == Group::Control).collect();
        let raw_mean = ctrl.iter().map(|&i| cohort[i].volumes["VLP"]).sum::<f64>() / ctrl.len() as f64;
        let adj_ctrl: Vec<f64> = ctrl.iter().map(|&i| adj[i]).collect();
        let adj_mean = adj_ctrl.iter().sum::<f64>() / ctrl.len() as f64;
        assert!((adj_mean - raw_mean).abs() < 1e-9);
        let ages: Vec<f64> = ctrl.iter().map(|&i| cohort[i].age).collect();
        let icvs: Vec<f64> = ctrl.iter().map(|&i| cohort[i].icv).collect();
        assert!(crate::synthesis::pearson(&adj_ctrl, &ages).abs() < 1e-8);
        assert!(crate::synthesis::pearson(&adj_ctrl, &icvs).abs() < 1e-8);
    }

    #[test]
    fn residual_adjust_exact_icv_dependence() {
        let recs: Vec<_> = (0..6)
            .map(|i| {
                let icv = 1.3e6 + i as f64 * 5e4;
                rec(&format!("c{i}"), Group::Control, 30.0 + (i * 7 % 5) as f64, icv, 2.0 * icv)
            })
            .collect();
        let adj = residual_adjust(&recs, "VLP", ResidualFitSubset::ControlsOnly).unwrap();
        let mean = recs.iter().map(|r| r.volumes["VLP"]).sum::<f64>() / 6.0;
        assert!(adj.iter().all(|a| (a - mean).abs() < 1e-6 * mean));
        assert!(residual_adjust(&recs[..3], "VLP", ResidualFitSubset::ControlsOnly).is_err());
    }

    #[test]
    fn logistic_intercept_only_and_separation() {
        let x = Matrix::from_rows(&vec![vec![1.0]; 6]).unwrap();
        let y = [true, false, true, false, true, false];
        let f = logistic_fit(&x, &y).unwrap();
        assert!(f.converged && f.coefficients[0].abs() < 1e-12);

        let x = design(&[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let f = logistic_fit(&x, &[false, false, false, true, true, true]).unwrap();
        assert!(f.separated && !f.converged);
        let scores: Vec<f64> = (0..6).map(|r| f.linear_predictor(x.row(r))).collect();
        assert_eq!(roc_auc(&scores, &[false, false, false, true, true, true]).unwrap(), 1.0);
        assert!(logistic_fit(&x, &[true; 6]).is_err());
    }

    #[test]
    fn logistic_matches_grid_search() {
        let xs = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0];
        let y = [false, false, true, false, false, true, false, true, true, true];
        let x = design(&xs);
        let f = logistic_fit(&x, &y).unwrap();
        assert!(f.converged && !f.separated);
        // coarse-to-fine grid search on the log-likelihood
        let (mut c0, mut c1, mut step) = (0.0, 0.0, 1.0);
        for _ in 0..30 {
            let mut best = (f64::NEG_INFINITY, c0, c1);
            for i in -10..=10 {
                for j in -10..=10 {
                    let b = [c0 + i as f64 * step, c1 + j as f64 * step];
                    let ll = logistic_log_likelihood(&x, &y, &b);
                    if ll > best.0 {
                        best = (ll, b[0], b[1]);
                    }
                }
            }
            c0 = best.1;
            c1 = best.2;
            step *= 0.5;
        }
        assert!((f.coefficients[0] - c0).abs() < 1e-3, "{} vs {c0}", f.coefficients[0]);
        assert!((f.coefficients[1] - c1).abs() < 1e-3, "{} vs {c1}", f.coefficients[1]);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    /// Trapezoidal area under the empirical ROC curve.
    fn trapezoid_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let npos = labels.iter().filter(|&&l| l).count() as f64;
        let nneg = labels.len() as f64 - npos;
        let (mut area, mut prev) = (0.0, (0.0, 0.0));
        for t in thresholds {
            let tp = scores.iter().zip(labels).filter(|(s, &l)| l && **s >= t).count() as f64 / npos;
            let fp = scores.iter().zip(labels).filter(|(s, &l)| !l && **s >= t).count() as f64 / nneg;
            area += (fp - prev.0) * (tp + prev.1) / 2.0;
            prev = (fp, tp);
        }
        area
    }

    #[test]
    fn auc_equals_trapezoid() {
        let scores = [0.3, 0.3, 0.5, 0.1, 0.9, 0.5, 0.5, 0.2, 0.7];
        let labels = [true, false, true, false, true, false, true, false, false];
        assert!((roc_auc(&scores, &labels).unwrap() - trapezoid_auc(&scores, &labels)).abs() < 1e-15);
    }

    #[test]
    fn pipeline_detects_shift_and_null() {
        let cfg = ClinicalConfig::default();
        let shifted = simulate_cohort(&CohortSpec { shift_sd: -2.0, seed: 7, ..Default::default() });
        let rep = clinical_pipeline(&shifted, &cfg, "phantom").unwrap();
        assert_eq!(rep.hemispheres.len(), 2);
        for h in &rep.hemispheres {
            let vlp = h.nuclei.iter().find(|n| n.label == "VLP").unwrap();
            assert!(vlp.group_p < 0.01, "p = {}", vlp.group_p);
            assert!(h.auc > 0.85, "auc = {}", h.auc);
        }
        assert_eq!(rep.reference_aucs["HIPS-THOMAS"], 0.79);

        let null = simulate_cohort(&CohortSpec { shift_sd: 0.0, seed: 2, ..Default::default() });
        let rep = clinical_pipeline(&null, &cfg, "phantom").unwrap();
        for h in &rep.hemispheres {
            assert!((0.35..=0.65).contains(&h.auc), "auc = {}", h.auc);
        }
    }
}

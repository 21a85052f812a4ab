use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{baseline_marginal, baseline_stratified};
use super::metrics::{misclassification, rps, ProbabilisticForecast};
use crate::data::{OrdinalDataset, LHU_KEY, REGION_KEY};
use crate::design::{DesignMatrix, DesignSpec, GroupBlock};
use crate::error::{Error, Result};
use crate::fit::{fit, fit_restricted, FitOptions, Restriction};
use crate::model::predict;
use crate::penalty::HyperParams;

/// Fold index (0-based) of every unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub n_folds: usize,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_folds];
        for &f in &self.fold_of {
            s[f] += 1;
        }
        s
    }
}

fn check_fold_count(n: usize, n_folds: usize) -> Result<()> {
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(Error::Config(format!("{n} units cannot fill {n_folds} folds")));
    }
    Ok(())
}

/// Uniform random partition of `0..n` into `n_folds` folds whose sizes
/// differ by at most one.
pub fn make_folds(n: usize, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    check_fold_count(n, n_folds)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % n_folds;
    }
    Ok(FoldAssignment { fold_of, n_folds, seed })
}

/// Like [`make_folds`] but deals each label group round-robin across folds,
/// so every fold sees every group in close to its overall share.
pub fn make_stratified_folds(labels: &[String], n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    check_fold_count(labels.len(), n_folds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut fold_of = vec![0; labels.len()];
    let mut pos = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = pos % n_folds;
            pos += 1;
        }
    }
    Ok(FoldAssignment { fold_of, n_folds, seed })
}

/// Predictors compared by [`cross_validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Training class proportions.
    Marginal,
    /// Training class proportions within strata formed by `key`.
    Stratified { key: Vec<String> },
    /// Unpenalized parallel cumulative logit.
    Parallel { group: GroupBlock },
    /// Unpenalized margin-specific cumulative logit.
    NonParallel { group: GroupBlock },
    /// Penalized semi-parallel cumulative logit.
    SemiParallel { hyper: HyperParams, group: GroupBlock },
}

impl ModelKind {
    fn group(&self) -> Option<GroupBlock> {
        match self {
            ModelKind::Marginal | ModelKind::Stratified { .. } => None,
            ModelKind::Parallel { group } | ModelKind::NonParallel { group } | ModelKind::SemiParallel { group, .. } => {
                Some(*group)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub kind: ModelKind,
}

impl ModelDescriptor {
    pub fn new(name: &str, kind: ModelKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
        }
    }
}

/// The comparison family of the survey analysis: marginal and stratified
/// baselines, the two unpenalized ordinal models, and the semi-parallel model
/// under ridge, lasso and elastic-net mixing at `lambda`, `rho`.
pub fn default_model_family(lambda: f64, rho: f64, sex: &str, age: &str) -> Vec<ModelDescriptor> {
    let key = |first: &str| vec![first.to_string(), sex.to_string(), age.to_string()];
    let semi = |alpha| ModelKind::SemiParallel {
        hyper: HyperParams { lambda, alpha, rho },
        group: GroupBlock::Lhu,
    };
    vec![
        ModelDescriptor::new("Marginal mean", ModelKind::Marginal),
        ModelDescriptor::new("Region:Sex:AgeClass", ModelKind::Stratified { key: key(REGION_KEY) }),
        ModelDescriptor::new("LHU:Sex:AgeClass", ModelKind::Stratified { key: key(LHU_KEY) }),
        ModelDescriptor::new("Ordinal parallel model", ModelKind::Parallel { group: GroupBlock::Lhu }),
        ModelDescriptor::new("Ordinal non-parallel model", ModelKind::NonParallel { group: GroupBlock::Region }),
        ModelDescriptor::new("Ridge LHU (alpha=0)", semi(0.0)),
        ModelDescriptor::new("Lasso LHU (alpha=1)", semi(1.0)),
        ModelDescriptor::new("ElasticNet LHU (alpha=0.5)", semi(0.5)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    /// Weight validation averages by the survey weights.
    pub weighted_metrics: bool,
    /// Deal folds within strata of these columns instead of uniformly.
    pub stratify_folds: Option<Vec<String>>,
    pub fit: FitOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            weighted_metrics: false,
            stratify_folds: None,
            fit: FitOptions::default(),
        }
    }
}

/// Outcome of one model on one validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub model: String,
    /// 0-based fold index.
    pub fold: usize,
    pub rps: Option<f64>,
    pub me: Option<f64>,
    pub n_train: usize,
    pub n_valid: usize,
    /// Validation units predicted by the marginal fallback of a stratified rule.
    pub fallback_units: usize,
    /// Validation units whose predicted margins crossed and were repaired.
    pub repaired_units: usize,
    /// Validation units with a group label absent from training.
    pub unseen_groups: usize,
    pub separation: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_rps: Option<f64>,
    pub mean_me: Option<f64>,
    pub failed_folds: usize,
}

/// Per-fold metrics of every model, ordered by model then fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub models: Vec<String>,
    pub n_folds: usize,
    pub seed: u64,
    pub results: Vec<FoldResult>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.3}", x * scale))
}

impl EvaluationReport {
    pub fn for_model<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a FoldResult> + 'a {
        self.results.iter().filter(move |r| r.model == model)
    }

    /// Means over the folds that succeeded.
    pub fn summary(&self) -> Vec<ModelSummary> {
        self.models
            .iter()
            .map(|m| ModelSummary {
                model: m.clone(),
                mean_rps: mean(self.for_model(m).filter_map(|r| r.rps)),
                mean_me: mean(self.for_model(m).filter_map(|r| r.me)),
                failed_folds: self.for_model(m).filter(|r| r.error.is_some()).count(),
            })
            .collect()
    }

    pub fn mean_rps(&self, model: &str) -> Option<f64> {
        mean(self.for_model(model).filter_map(|r| r.rps))
    }

    /// Long table `model,fold,rps,me,...` with 1-based folds.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,fold,rps,me,rps_x100,me_x100,n_train,n_valid,fallback_units,repaired_units,error\n");
        for r in &self.results {
            let raw = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.10}"));
            let _ = writeln!(
                out,
                "\"{}\",{},{},{},{},{},{},{},{},{},\"{}\"",
                r.model,
                r.fold + 1,
                raw(r.rps),
                raw(r.me),
                fmt_opt(r.rps, 100.0),
                fmt_opt(r.me, 100.0),
                r.n_train,
                r.n_valid,
                r.fallback_units,
                r.repaired_units,
                r.error.as_deref().unwrap_or("").replace('"', "'")
            );
        }
        out
    }

    /// Two wide tables (RPS x 100 and misclassification x 100), one row per
    /// model, one column per fold plus the average.
    pub fn summary_text(&self) -> String {
        let width = self.models.iter().map(|m| m.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let metrics: [(&str, fn(&FoldResult) -> Option<f64>); 2] = [
            ("Ranked probability score x 100", |r| r.rps),
            ("Misclassification error rate x 100", |r| r.me),
        ];
        for (title, get) in metrics {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<width$}", "Model");
            for f in 0..self.n_folds {
                let _ = write!(out, " {:>8}", format!("Fold {}", f + 1));
            }
            let _ = writeln!(out, " {:>8}", "Average");
            for m in &self.models {
                let _ = write!(out, "{m:<width$}");
                for r in self.for_model(m) {
                    let _ = write!(out, " {:>8}", fmt_opt(get(r), 100.0));
                }
                let _ = writeln!(out, " {:>8}", fmt_opt(mean(self.for_model(m).filter_map(get)), 100.0));
            }
            out.push('\n');
        }
        out
    }
}

/// Designs of one training fold and its validation fold.
pub(crate) struct FoldDesign {
    pub train: DesignMatrix,
    pub valid: DesignMatrix,
    pub unseen_groups: usize,
}

/// Training/validation split of one fold with the designs required by the
/// models under evaluation, all estimated on the training rows only.
pub(crate) struct FoldPlan {
    pub train: OrdinalDataset,
    pub valid: OrdinalDataset,
    pub designs: BTreeMap<GroupBlock, std::result::Result<FoldDesign, String>>,
}

fn fold_design(spec: &DesignSpec, group: GroupBlock, train: &OrdinalDataset, valid: &OrdinalDataset) -> Result<FoldDesign> {
    let spec = DesignSpec { group, ..spec.clone() };
    let train_design = spec.fit(train)?;
    let (valid_design, report) = spec.transfer(valid, &train_design.scaling)?;
    Ok(FoldDesign {
        train: train_design,
        valid: valid_design,
        unseen_groups: report.unseen_groups,
    })
}

pub(crate) fn plan_folds(
    data: &OrdinalDataset,
    spec: &DesignSpec,
    folds: &FoldAssignment,
    groups: &[GroupBlock],
) -> Vec<FoldPlan> {
    let mut keys = groups.to_vec();
    keys.sort();
    keys.dedup();
    (0..folds.n_folds)
        .into_par_iter()
        .map(|f| {
            let train = data.subset(&folds.training(f));
            let valid = data.subset(&folds.validation(f));
            let designs = keys
                .iter()
                .map(|&k| {
                    let d = fold_design(spec, k, &train, &valid).map_err(|e| e.to_string());
                    (k, d)
                })
                .collect();
            FoldPlan { train, valid, designs }
        })
        .collect()
}

pub(crate) struct Scores {
    pub rps: f64,
    pub me: f64,
    pub fallback_units: usize,
    pub repaired_units: usize,
    pub unseen_groups: usize,
    pub separation: bool,
}

fn score(forecast: &ProbabilisticForecast, valid: &OrdinalDataset, weighted: bool) -> Result<(f64, f64)> {
    let w = weighted.then(|| valid.weights());
    Ok((
        rps(forecast, valid.responses(), w)?,
        misclassification(forecast, valid.responses(), w)?,
    ))
}

pub(crate) fn evaluate(kind: &ModelKind, plan: &FoldPlan, options: &CvOptions) -> Result<Scores> {
    let k = plan.train.n_categories();
    let (train, valid) = (&plan.train, &plan.valid);
    let train_w = Some(train.weights());
    let mut scores = Scores {
        rps: 0.0,
        me: 0.0,
        fallback_units: 0,
        repaired_units: 0,
        unseen_groups: 0,
        separation: false,
    };
    let forecast = match kind {
        ModelKind::Marginal => {
            let rule = baseline_marginal(train.responses(), train_w, k)?;
            ProbabilisticForecast::constant(&rule.probs, valid.len())?
        }
        ModelKind::Stratified { key } => {
            let rule = baseline_stratified(train.responses(), train_w, &train.stratum_labels(key)?, k)?;
            let labels = valid.stratum_labels(key)?;
            let mut probs = ndarray::Array2::zeros((valid.len(), k));
            for (i, label) in labels.iter().enumerate() {
                let (p, fallback) = rule.predict(label);
                scores.fallback_units += fallback as usize;
                probs.row_mut(i).assign(&ndarray::ArrayView1::from(p));
            }
            ProbabilisticForecast::new(probs)?
        }
        _ => {
            let group = kind.group().expect("model-based descriptor");
            let design = plan
                .designs
                .get(&group)
                .expect("design planned for every model group")
                .as_ref()
                .map_err(|e| Error::Config(e.clone()))?;
            let fitted = match kind {
                ModelKind::Parallel { .. } | ModelKind::NonParallel { .. } => {
                    let restriction = if matches!(kind, ModelKind::Parallel { .. }) {
                        Restriction::Parallel
                    } else {
                        Restriction::NonParallel
                    };
                    let hyper = HyperParams {
                        lambda: 0.0,
                        alpha: 0.0,
                        rho: 1.0,
                    };
                    let opts = options.fit.clone().with_restriction(restriction);
                    fit_restricted(train, &design.train, &hyper, &opts)?
                }
                ModelKind::SemiParallel { hyper, .. } => fit(train, &design.train, hyper, &options.fit)?,
                _ => unreachable!(),
            };
            let prediction = predict(&design.valid, &fitted.coefs)?;
            scores.repaired_units = prediction.repaired;
            scores.unseen_groups = design.unseen_groups;
            scores.separation = fitted.separation;
            ProbabilisticForecast::new(prediction.probs)?
        }
    };
    let (r, m) = score(&forecast, valid, options.weighted_metrics)?;
    scores.rps = r;
    scores.me = m;
    Ok(scores)
}

/// `V`-fold cross-validation of `models` with folds drawn from `seed`.
pub fn cross_validate(
    data: &OrdinalDataset,
    spec: &DesignSpec,
    models: &[ModelDescriptor],
    n_folds: usize,
    seed: u64,
    options: &CvOptions,
) -> Result<EvaluationReport> {
    let folds = match &options.stratify_folds {
        Some(cols) => make_stratified_folds(&data.stratum_labels(cols)?, n_folds, seed)?,
        None => make_folds(data.len(), n_folds, seed)?,
    };
    cross_validate_with_folds(data, spec, models, &folds, options)
}

/// [`cross_validate`] on a fixed fold assignment. The design's `group`
/// field is ignored: each model descriptor names its own block.
pub fn cross_validate_with_folds(
    data: &OrdinalDataset,
    spec: &DesignSpec,
    models: &[ModelDescriptor],
    folds: &FoldAssignment,
    options: &CvOptions,
) -> Result<EvaluationReport> {
    if models.is_empty() {
        return Err(Error::Config("no models to evaluate".into()));
    }
    if folds.fold_of.len() != data.len() {
        return Err(Error::Dimension(format!(
            "fold assignment covers {} units, data has {}",
            folds.fold_of.len(),
            data.len()
        )));
    }
    options.fit.validate()?;
    let groups: Vec<GroupBlock> = models.iter().filter_map(|m| m.kind.group()).collect();
    let plans = plan_folds(data, spec, folds, &groups);
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..folds.n_folds).map(move |f| (m, f)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(m, f)| {
            let plan = &plans[f];
            let mut r = FoldResult {
                model: models[m].name.clone(),
                fold: f,
                rps: None,
                me: None,
                n_train: plan.train.len(),
                n_valid: plan.valid.len(),
                fallback_units: 0,
                repaired_units: 0,
                unseen_groups: 0,
                separation: false,
                error: None,
            };
            match evaluate(&models[m].kind, plan, options) {
                Ok(s) => {
                    r.rps = Some(s.rps);
                    r.me = Some(s.me);
                    r.fallback_units = s.fallback_units;
                    r.repaired_units = s.repaired_units;
                    r.unseen_groups = s.unseen_groups;
                    r.separation = s.separation;
                }
                Err(e) => r.error = Some(e.to_string()),
            }
            r
        })
        .collect();
    Ok(EvaluationReport {
        models: models.iter().map(|m| m.name.clone()).collect(),
        n_folds: folds.n_folds,
        seed: folds.seed,
        results,
    })
}

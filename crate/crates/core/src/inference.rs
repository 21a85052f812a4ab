//! Stratified bootstrap, percentile intervals, pseudo-R2 and the variance
//! decomposition of the linear predictor.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::OrdinalDataset;
use crate::design::{ColumnRole, DesignMatrix, DesignSpec};
use crate::error::{Error, Result};
use crate::fit::{fit_from, FitOptions, ModelFit};
use crate::model::CoefficientSet;
use crate::penalty::HyperParams;

/// Variance of the standard logistic distribution.
pub const LOGISTIC_VARIANCE: f64 = PI * PI / 3.0;
/// Fewest successful replicates accepted by [`percentile_interval`].
pub const MIN_REPLICATES: usize = 20;
/// Share of failed replicates above which an ensemble is unreliable.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub key: String,
    pub indices: Vec<usize>,
}

impl Stratum {
    pub fn new(key: String, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty(format!("stratum `{key}` has no members")));
        }
        Ok(Self { key, indices })
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Strata formed by the composite label of `columns`, in label order.
pub fn build_strata(data: &OrdinalDataset, columns: &[String]) -> Result<Vec<Stratum>> {
    if data.is_empty() {
        return Err(Error::Empty("cannot stratify an empty dataset".into()));
    }
    data.strata(columns)?
        .into_iter()
        .map(|(k, idx)| Stratum::new(k, idx))
        .collect()
}

fn check_partition(strata: &[Stratum], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for s in strata {
        for &i in &s.indices {
            if i >= n || seen[i] {
                return Err(Error::Config(format!(
                    "strata do not partition the data (row {i} in `{}`)",
                    s.key
                )));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Config("strata do not cover every row".into()));
    }
    Ok(())
}

/// Seed of replicate `r` under `master`, independent of scheduling.
pub fn replicate_seed(master: u64, r: u64) -> u64 {
    // splitmix64 finalizer over a counter offset from the master seed.
    let mut z = master.wrapping_add(r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn resample_indices(strata: &[Stratum], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(strata.iter().map(Stratum::size).sum());
    for s in strata {
        for _ in 0..s.size() {
            out.push(s.indices[rng.random_range(0..s.size())]);
        }
    }
    out
}

/// Draws `n_s` members with replacement from every stratum. Returns the
/// replicate and the source row of each of its units.
pub fn stratified_resample(data: &OrdinalDataset, strata: &[Stratum], seed: u64) -> Result<(OrdinalDataset, Vec<usize>)> {
    check_partition(strata, data.len())?;
    let idx = resample_indices(strata, seed);
    Ok((data.subset(&idx), idx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    /// Columns whose composite label defines the resampling strata.
    pub strata: Vec<String>,
    /// Start each refit from the full-data estimate.
    pub warm_start: bool,
    pub fit: FitOptions,
}

impl BootstrapOptions {
    pub fn new(strata: Vec<String>) -> Self {
        Self {
            strata,
            warm_start: true,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    pub coefs: CoefficientSet,
    pub converged: bool,
    pub separation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub master_seed: u64,
    pub requested: usize,
    pub columns: Vec<String>,
    pub full_fit: ModelFit,
    pub replicates: Vec<Replicate>,
    pub failures: Vec<ReplicateFailure>,
    pub warm_started: bool,
    pub unreliable: bool,
}

/// Addresses one coefficient of a [`CoefficientSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefficientIndex {
    Threshold(usize),
    Shared(usize),
    Specific(usize, usize),
    /// `beta_p + B_pj`, the slope acting on margin `j`.
    Effective(usize, usize),
}

impl CoefficientIndex {
    pub fn value(&self, c: &CoefficientSet) -> f64 {
        match *self {
            CoefficientIndex::Threshold(j) => c.thresholds[j],
            CoefficientIndex::Shared(p) => c.shared[p],
            CoefficientIndex::Specific(p, j) => c.specific[[p, j]],
            CoefficientIndex::Effective(p, j) => c.shared[p] + c.specific[[p, j]],
        }
    }

    pub fn name(&self, columns: &[String]) -> String {
        match *self {
            CoefficientIndex::Threshold(j) => format!("threshold[{}]", j + 1),
            CoefficientIndex::Shared(p) => format!("{}:shared", columns[p]),
            CoefficientIndex::Specific(p, j) => format!("{}:specific[{}]", columns[p], j + 1),
            CoefficientIndex::Effective(p, j) => format!("{}:margin[{}]", columns[p], j + 1),
        }
    }

    /// Thresholds then the effective slope of every column on every margin.
    pub fn reported(n_columns: usize, n_margins: usize) -> Vec<Self> {
        let mut out: Vec<Self> = (0..n_margins).map(CoefficientIndex::Threshold).collect();
        for p in 0..n_columns {
            out.extend((0..n_margins).map(|j| CoefficientIndex::Effective(p, j)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub coefficient: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub sd: f64,
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl BootstrapEnsemble {
    pub fn values(&self, index: CoefficientIndex) -> Vec<f64> {
        self.replicates.iter().map(|r| index.value(&r.coefs)).collect()
    }

    pub fn replicate_coefficients(&self) -> Vec<CoefficientSet> {
        self.replicates.iter().map(|r| r.coefs.clone()).collect()
    }

    pub fn interval(&self, index: CoefficientIndex, level: f64) -> Result<(f64, f64)> {
        percentile_interval(&self.values(index), level)
    }

    /// Full-data estimate, percentile band and bootstrap standard deviation
    /// of every reported coefficient.
    pub fn summary(&self, level: f64) -> Result<Vec<IntervalRow>> {
        let c = &self.full_fit.coefs;
        CoefficientIndex::reported(c.n_columns(), c.n_margins())
            .into_iter()
            .map(|idx| {
                let v = self.values(idx);
                let (lo, hi) = percentile_interval(&v, level)?;
                Ok(IntervalRow {
                    coefficient: idx.name(&self.columns),
                    estimate: idx.value(c),
                    lo,
                    hi,
                    sd: sample_sd(&v),
                })
            })
            .collect()
    }

    pub fn summary_csv(&self, level: f64) -> Result<String> {
        let mut out = String::from("coefficient,estimate,lo,hi,sd\n");
        for r in self.summary(level)? {
            let _ = writeln!(out, "\"{}\",{:.10},{:.10},{:.10},{:.10}", r.coefficient, r.estimate, r.lo, r.hi, r.sd);
        }
        let _ = writeln!(
            out,
            "# successful replicates: {} of {}; warm start: {}; unreliable: {}",
            self.replicates.len(),
            self.requested,
            self.warm_started,
            self.unreliable
        );
        Ok(out)
    }
}

/// Stratified bootstrap of the fit at `hyper`. Every replicate reuses the
/// full-data design rows (and so its scaling), keeping coefficients on one
/// scale across replicates.
pub fn bootstrap(
    data: &OrdinalDataset,
    spec: &DesignSpec,
    hyper: &HyperParams,
    replicates: usize,
    seed: u64,
    options: &BootstrapOptions,
) -> Result<BootstrapEnsemble> {
    let seeds: Vec<u64> = (0..replicates as u64).map(|r| replicate_seed(seed, r)).collect();
    bootstrap_with_seeds(data, spec, hyper, &seeds, seed, options)
}

/// [`bootstrap`] with explicit per-replicate seeds.
pub fn bootstrap_with_seeds(
    data: &OrdinalDataset,
    spec: &DesignSpec,
    hyper: &HyperParams,
    seeds: &[u64],
    master_seed: u64,
    options: &BootstrapOptions,
) -> Result<BootstrapEnsemble> {
    if seeds.is_empty() {
        return Err(Error::Config("the bootstrap needs at least one replicate".into()));
    }
    let strata = build_strata(data, &options.strata)?;
    let design = spec.fit(data)?;
    let full_fit = fit_from(data, &design, hyper, &options.fit, None)?;
    let start = options.warm_start.then_some(&full_fit.coefs);

    let outcomes: Vec<std::result::Result<Replicate, ReplicateFailure>> = seeds
        .par_iter()
        .enumerate()
        .map(|(index, &seed)| {
            let idx = resample_indices(&strata, seed);
            let sample = data.subset(&idx);
            let rows = design.select_rows(&idx);
            match fit_from(&sample, &rows, hyper, &options.fit, start) {
                Ok(f) => Ok(Replicate {
                    index,
                    seed,
                    coefs: f.coefs,
                    converged: f.converged,
                    separation: f.separation,
                }),
                Err(e) => Err(ReplicateFailure {
                    index,
                    seed,
                    error: e.to_string(),
                }),
            }
        })
        .collect();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => reps.push(r),
            Err(f) => failures.push(f),
        }
    }
    let unreliable = failures.len() as f64 > MAX_FAILURE_SHARE * seeds.len() as f64;
    Ok(BootstrapEnsemble {
        master_seed,
        requested: seeds.len(),
        columns: design.column_names(),
        full_fit,
        replicates: reps,
        failures,
        warm_started: options.warm_start,
        unreliable,
    })
}

/// Type-7 sample quantile of sorted `x`: linear interpolation between order
/// statistics at position `(n - 1) q`.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central `level` percentile interval of `values` (type-7 quantiles).
pub fn percentile_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level must lie in (0, 1), got {level}")));
    }
    if values.len() < MIN_REPLICATES {
        return Err(Error::TooFewReplicates {
            available: values.len(),
            required: MIN_REPLICATES,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_type7(&sorted, tail), quantile_type7(&sorted, 1.0 - tail)))
}

/// `n x J` matrix of linear predictors without the thresholds, which do not
/// affect any variance below.
fn slope_part(design: &DesignMatrix, coefs: &CoefficientSet, columns: &[usize]) -> Array2<f64> {
    let g = coefs.effective();
    let mut out = Array2::zeros((design.n_rows(), coefs.n_margins()));
    for &p in columns {
        let x = design.values.column(p);
        for j in 0..coefs.n_margins() {
            let gp = g[[p, j]];
            if gp != 0.0 {
                out.column_mut(j).scaled_add(gp, &x);
            }
        }
    }
    out
}

fn covariance(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

pub fn pseudo_r2_from_variance(variance: f64) -> f64 {
    variance / (variance + LOGISTIC_VARIANCE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginVariance {
    /// Sample variance of the fitted linear predictor.
    pub linear_predictor: f64,
    /// `linear_predictor` plus the standard logistic variance.
    pub latent_total: f64,
    /// Variance of the group-indicator contribution, when the design has one.
    pub fixed_effects: Option<f64>,
    /// Variance of the main-effect and interaction contribution.
    pub covariates: f64,
    /// Covariance of the two contributions, when both exist.
    pub covariance: Option<f64>,
    pub pseudo_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub margins: Vec<MarginVariance>,
}

fn check_rows(design: &DesignMatrix, coefs: &CoefficientSet) -> Result<()> {
    if design.n_rows() < 2 {
        return Err(Error::Empty("variances need at least two rows".into()));
    }
    if design.n_columns() != coefs.n_columns() {
        return Err(Error::Dimension(format!(
            "design has {} columns, coefficients {}",
            design.n_columns(),
            coefs.n_columns()
        )));
    }
    Ok(())
}

/// Per margin, splits the sample variance of the linear predictor into the
/// group-indicator part, the covariate part and twice their covariance.
pub fn variance_decomposition(coefs: &CoefficientSet, design: &DesignMatrix) -> Result<VarianceDecomposition> {
    check_rows(design, coefs)?;
    let group = design.group_columns();
    let covariate: Vec<usize> = (0..design.n_columns())
        .filter(|&p| design.columns[p].role != ColumnRole::Group)
        .collect();
    let all: Vec<usize> = (0..design.n_columns()).collect();
    let total = slope_part(design, coefs, &all);
    let cov_part = slope_part(design, coefs, &covariate);
    let group_part = (!group.is_empty()).then(|| slope_part(design, coefs, &group));
    let margins = (0..coefs.n_margins())
        .map(|j| {
            let v = covariance(total.column(j), total.column(j));
            MarginVariance {
                linear_predictor: v,
                latent_total: v + LOGISTIC_VARIANCE,
                fixed_effects: group_part.as_ref().map(|g| covariance(g.column(j), g.column(j))),
                covariates: covariance(cov_part.column(j), cov_part.column(j)),
                covariance: group_part.as_ref().map(|g| covariance(g.column(j), cov_part.column(j))),
                pseudo_r2: pseudo_r2_from_variance(v),
            }
        })
        .collect();
    Ok(VarianceDecomposition { margins })
}

/// `R2_j = s2_j / (s2_j + pi^2 / 3)` with `s2_j` the sample variance of the
/// fitted linear predictor on margin `j`.
pub fn pseudo_r2(coefs: &CoefficientSet, design: &DesignMatrix) -> Result<Vec<f64>> {
    Ok(variance_decomposition(coefs, design)?
        .margins
        .iter()
        .map(|m| m.pseudo_r2)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub margin: usize,
    pub quantity: String,
    pub estimate: f64,
    /// Bootstrap standard deviation, when replicates are supplied.
    pub sd: Option<f64>,
}

fn quantities(m: &MarginVariance) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("linear_predictor", Some(m.linear_predictor)),
        ("latent_total", Some(m.latent_total)),
        ("fixed_effects", m.fixed_effects),
        ("covariates", Some(m.covariates)),
        ("covariance", m.covariance),
        ("pseudo_r2", Some(m.pseudo_r2)),
    ]
}

/// Decomposition of `coefs` on `design` with bootstrap standard deviations
/// computed from `replicates` evaluated on the same design.
pub fn decomposition_table(
    coefs: &CoefficientSet,
    replicates: &[CoefficientSet],
    design: &DesignMatrix,
) -> Result<Vec<DecompositionRow>> {
    let full = variance_decomposition(coefs, design)?;
    let reps = replicates
        .iter()
        .map(|r| variance_decomposition(r, design))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (j, m) in full.margins.iter().enumerate() {
        for (q, (name, est)) in quantities(m).into_iter().enumerate() {
            let Some(estimate) = est else { continue };
            let values: Vec<f64> = reps.iter().filter_map(|d| quantities(&d.margins[j])[q].1).collect();
            rows.push(DecompositionRow {
                margin: j,
                quantity: name.to_string(),
                estimate,
                sd: (values.len() >= 2).then(|| sample_sd(&values)),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn type7_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = percentile_interval(&v, 0.95).unwrap();
        assert!((lo - 3.475).abs() < 1e-12 && (hi - 97.525).abs() < 1e-12);
        let (lo, hi) = percentile_interval(&v, 0.5).unwrap();
        assert!((lo - 25.75).abs() < 1e-12 && (hi - 75.25).abs() < 1e-12);
        assert_eq!(percentile_interval(&[2.5; 30], 0.9).unwrap(), (2.5, 2.5));
        assert!(percentile_interval(&v, 0.0).is_err());
        assert!(percentile_interval(&v, 1.0).is_err());
        assert!(matches!(
            percentile_interval(&v[..19], 0.9),
            Err(Error::TooFewReplicates { available: 19, .. })
        ));
    }

    #[test]
    fn pseudo_r2_values() {
        assert_eq!(pseudo_r2_from_variance(0.0), 0.0);
        assert!((pseudo_r2_from_variance(LOGISTIC_VARIANCE) - 0.5).abs() < 1e-15);
        assert!((pseudo_r2_from_variance(PI * PI) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn intercept_only_has_zero_r2() {
        let design = DesignMatrix::from_values(array![[1.0], [2.0], [5.0]]);
        let cs = CoefficientSet::intercept_only(vec![-1.0, 1.0], 1);
        assert_eq!(pseudo_r2(&cs, &design).unwrap(), vec![0.0, 0.0]);
        let one = DesignMatrix::from_values(array![[1.0]]);
        assert!(pseudo_r2(&cs, &one).is_err());
    }

    #[test]
    fn resample_preserves_strata() {
        let d = OrdinalDataset::from_responses(3, vec![0, 1, 2, 0, 1, 2, 0], None).unwrap();
        let strata = vec![
            Stratum::new("a".into(), vec![0, 1, 2]).unwrap(),
            Stratum::new("b".into(), vec![3, 4, 5]).unwrap(),
            Stratum::new("c".into(), vec![6]).unwrap(),
        ];
        let (rep, idx) = stratified_resample(&d, &strata, 3).unwrap();
        assert_eq!(rep.len(), 7);
        assert!(idx[..3].iter().all(|i| *i < 3));
        assert!(idx[3..6].iter().all(|i| (3..6).contains(i)));
        assert_eq!(idx[6], 6);
        assert_eq!(stratified_resample(&d, &strata, 3).unwrap().1, idx);
        assert!(Stratum::new("e".into(), vec![]).is_err());
        let overlapping = vec![Stratum::new("x".into(), vec![0, 1]).unwrap(), Stratum::new("y".into(), vec![1]).unwrap()];
        assert!(stratified_resample(&d, &overlapping, 0).is_err());
    }

    #[test]
    fn replicate_seeds_are_distinct() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|r| replicate_seed(7, r)).collect();
        assert_eq!(s.len(), 1000);
    }

    #[test]
    fn zero_group_effect_leaves_covariates_only() {
        let mut design = DesignMatrix::from_values(array![[1.0, 1.0], [2.0, 0.0], [4.0, 0.0], [3.0, 1.0]]);
        design.columns[1].role = ColumnRole::Group;
        let cs = CoefficientSet::new(vec![-1.0, 1.0], Array1::from(vec![0.7, 0.0]), Array2::zeros((2, 2))).unwrap();
        let d = variance_decomposition(&cs, &design).unwrap();
        for m in &d.margins {
            assert_eq!(m.fixed_effects, Some(0.0));
            assert_eq!(m.covariance, Some(0.0));
            assert!((m.linear_predictor - m.covariates).abs() < 1e-15);
            assert!((m.latent_total - m.linear_predictor - LOGISTIC_VARIANCE).abs() < 1e-12);
        }
    }
}

//! Synthetic survey populations drawn from a known cumulative logit model.
//!
//! Units are spread evenly over the strata `LHU x sex x age class`, so every
//! stratum is populated once `n >= 6 L`. Extra binary covariates are
//! Bernoulli(0.5) and numeric covariates standard normal.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{OrdinalDataset, Record, Value};
use crate::design::{ColumnRole, DesignMatrix, DesignSpec, GroupBlock, Scaling, VariableSpec};
use crate::error::{Error, Result};
use crate::fit::{ModelFit, Restriction};
use crate::model::{cumulative_probabilities, linear_predictors, CoefficientSet};
use crate::penalty::HyperParams;

pub const SEX: &str = "sex";
pub const AGE_CLASS: &str = "age_class";
pub const SEX_LEVELS: [&str; 2] = ["male", "female"];
pub const AGE_LEVELS: [&str; 3] = ["18-34", "35-49", "50-69"];
/// Largest tolerated share of initial draws with crossing margins.
pub const MAX_INVALID_SHARE: f64 = 0.001;
const MAX_REDRAWS: usize = 1000;

/// Scales of randomly drawn true coefficients, one per column role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTruth {
    pub thresholds: Vec<f64>,
    /// Standard deviation of shared main-effect slopes.
    pub main: f64,
    /// Standard deviation of shared interaction slopes.
    pub interaction: f64,
    /// Standard deviation of shared group effects.
    pub group: f64,
    /// Standard deviation of margin-specific deviations on main-effect and
    /// group columns; interactions act in parallel.
    pub nonparallel: f64,
}

impl Default for RandomTruth {
    fn default() -> Self {
        Self {
            thresholds: vec![-1.2, 1.2],
            main: 0.5,
            interaction: 0.1,
            group: 0.5,
            nonparallel: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Coefficients given column by column; must match the design width.
    Explicit { coefficients: CoefficientSet },
    Random(RandomTruth),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n: usize,
    /// Number of territorial units; 0 drops the group block.
    pub n_lhu: usize,
    pub n_regions: usize,
    /// Include the sex and age-class stratification variables.
    pub strata: bool,
    pub binaries: Vec<String>,
    pub numerics: Vec<String>,
    pub interactions: bool,
    pub truth: TruthSpec,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            n_lhu: 10,
            n_regions: 3,
            strata: true,
            binaries: vec!["b1".into(), "b2".into()],
            numerics: vec!["z1".into()],
            interactions: true,
            truth: TruthSpec::Random(RandomTruth::default()),
            seed: 1,
        }
    }
}

fn check_thresholds(c: &[f64]) -> Result<()> {
    if c.len() < 2 {
        return Err(Error::Config("need at least two thresholds (three categories)".into()));
    }
    if c.iter().any(|v| !v.is_finite()) || c.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(format!("true thresholds must be strictly increasing, got {c:?}")));
    }
    Ok(())
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("population size must be positive".into()));
        }
        if self.n_lhu > 0 && self.n_regions == 0 {
            return Err(Error::Config("territorial units need at least one region".into()));
        }
        match &self.truth {
            TruthSpec::Explicit { coefficients } => check_thresholds(&coefficients.thresholds),
            TruthSpec::Random(r) => {
                check_thresholds(&r.thresholds)?;
                for (name, v) in [
                    ("main", r.main),
                    ("interaction", r.interaction),
                    ("group", r.group),
                    ("nonparallel", r.nonparallel),
                ] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::Config(format!("scale `{name}` must be finite and >= 0")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn variables(&self) -> Vec<VariableSpec> {
        let mut v = Vec::new();
        if self.strata {
            v.push(VariableSpec::binary(SEX, SEX_LEVELS[0], SEX_LEVELS[1]));
            v.push(VariableSpec::categorical(AGE_CLASS, &AGE_LEVELS));
        }
        v.extend(self.binaries.iter().map(|b| VariableSpec::binary(b, "no", "yes")));
        v.extend(self.numerics.iter().map(|z| VariableSpec::numeric(z).with_scaling(Scaling::None)));
        v
    }

    /// Design specification under which the true coefficients act.
    pub fn design_spec(&self) -> DesignSpec {
        DesignSpec {
            group: if self.n_lhu > 0 { GroupBlock::Lhu } else { GroupBlock::None },
            interactions: self.interactions,
            scaling: Some(Scaling::None),
        }
    }

    fn n_categories(&self) -> usize {
        match &self.truth {
            TruthSpec::Explicit { coefficients } => coefficients.n_margins() + 1,
            TruthSpec::Random(r) => r.thresholds.len() + 1,
        }
    }

    /// Stratification columns of the generated records.
    pub fn strata_columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        if self.n_lhu > 0 {
            cols.push(crate::data::LHU_KEY.to_string());
        }
        if self.strata {
            cols.push(SEX.to_string());
            cols.push(AGE_CLASS.to_string());
        }
        cols
    }
}

pub fn lhu_label(l: usize) -> String {
    format!("lhu{:03}", l + 1)
}

pub fn region_label(r: usize) -> String {
    format!("region{:02}", r + 1)
}

/// A generated dataset with the coefficients that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub dataset: OrdinalDataset,
    pub design: DesignMatrix,
    pub truth: CoefficientSet,
    pub spec: DesignSpec,
    /// Units whose first covariate draw had crossing margins and was redrawn.
    pub redrawn: usize,
}

impl SyntheticPopulation {
    /// Ground truth packaged like an estimate, for direct comparison.
    pub fn truth_fit(&self) -> ModelFit {
        ModelFit {
            coefs: self.truth.clone(),
            hyper: HyperParams {
                lambda: 0.0,
                alpha: 0.0,
                rho: 1.0,
            },
            restriction: Restriction::None,
            objective_trace: Vec::new(),
            converged: true,
            n_iterations: 0,
            separation: false,
            warm_started: false,
        }
    }
}

fn free_values(config: &PopulationConfig, rng: &mut ChaCha8Rng) -> Vec<Value> {
    let mut v: Vec<Value> = config
        .binaries
        .iter()
        .map(|_| Value::Level(if rng.random_bool(0.5) { "yes" } else { "no" }.into()))
        .collect();
    v.extend(config.numerics.iter().map(|_| Value::Number(rng.sample(StandardNormal))));
    v
}

fn record(config: &PopulationConfig, unit: usize, free: Vec<Value>) -> Record {
    let cells = if config.strata { 6 } else { 1 };
    let s = unit % (cells * config.n_lhu.max(1));
    let mut values = Vec::new();
    if config.strata {
        let within = s % 6;
        values.push(Value::Level(SEX_LEVELS[within / 3].into()));
        values.push(Value::Level(AGE_LEVELS[within % 3].into()));
    }
    values.extend(free);
    let mut r = Record::new(values);
    if config.n_lhu > 0 {
        let l = s / cells;
        r.lhu = Some(lhu_label(l));
        r.region = Some(region_label(l % config.n_regions));
    }
    r
}

fn random_truth(design: &DesignMatrix, r: &RandomTruth, rng: &mut ChaCha8Rng) -> Result<CoefficientSet> {
    let p = design.n_columns();
    let j = r.thresholds.len();
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let shared = Array1::from_iter(design.columns.iter().map(|c| {
        let scale = match c.role {
            ColumnRole::Main => r.main,
            ColumnRole::Interaction => r.interaction,
            ColumnRole::Group => r.group,
        };
        scale * normal()
    }));
    let mut specific = Array2::zeros((p, j));
    for (c, meta) in design.columns.iter().enumerate() {
        if meta.role != ColumnRole::Interaction {
            for m in 0..j {
                specific[[c, m]] = r.nonparallel * normal();
            }
        }
    }
    CoefficientSet::new(r.thresholds.clone(), shared, specific)
}

fn crossing(row: ndarray::ArrayView1<f64>, truth: &CoefficientSet) -> Result<bool> {
    let eta = linear_predictors(row, truth)?.eta;
    Ok(eta.windows(2).any(|w| w[1] < w[0]))
}

/// Draws a population from `config`. Units whose covariates put the true
/// margins out of order are redrawn; more than [`MAX_INVALID_SHARE`] of
/// such units is an error.
pub fn generate(config: &PopulationConfig) -> Result<SyntheticPopulation> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let variables = config.variables();
    let spec = config.design_spec();
    let mut records: Vec<Record> = (0..config.n).map(|i| record(config, i, free_values(config, &mut rng))).collect();
    let k = config.n_categories();
    let categories: Vec<String> = (0..k).map(|c| c.to_string()).collect();
    let placeholder = || OrdinalDataset::new(categories.clone(), variables.clone(), records.clone(), vec![0; config.n], None);
    let mut design = spec.fit(&placeholder()?)?;

    let truth = match &config.truth {
        TruthSpec::Explicit { coefficients } => {
            if coefficients.n_columns() != design.n_columns() {
                return Err(Error::Config(format!(
                    "true coefficients have {} columns, the design has {} ({})",
                    coefficients.n_columns(),
                    design.n_columns(),
                    design.column_names().join(", ")
                )));
            }
            coefficients.clone()
        }
        TruthSpec::Random(r) => random_truth(&design, r, &mut rng)?,
    };

    let mut invalid = Vec::new();
    for (i, row) in design.values.rows().into_iter().enumerate() {
        if crossing(row, &truth)? {
            invalid.push(i);
        }
    }
    if invalid.len() as f64 > MAX_INVALID_SHARE * config.n as f64 {
        let scale = match &config.truth {
            TruthSpec::Random(r) => format!("the margin-specific scale `nonparallel` = {}", r.nonparallel),
            TruthSpec::Explicit { .. } => "the margin-specific coefficients B".to_string(),
        };
        return Err(Error::Generation(format!(
            "{} of {} units have crossing margins; reduce {scale} or widen the threshold gaps",
            invalid.len(),
            config.n
        )));
    }
    let redrawn = invalid.len();
    if redrawn > 0 {
        for &i in &invalid {
            let mut ok = false;
            for _ in 0..MAX_REDRAWS {
                records[i] = record(config, i, free_values(config, &mut rng));
                let single = crate::design::transfer_scaling(&records[i..=i], &variables, &design.scaling)?.0;
                if !crossing(single.values.row(0), &truth)? {
                    design.values.row_mut(i).assign(&single.values.row(0));
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::Generation(format!("unit {i} has crossing margins under every covariate draw")));
            }
        }
    }

    let mut responses = Vec::with_capacity(config.n);
    for row in design.values.rows() {
        let pi = cumulative_probabilities(&linear_predictors(row, &truth)?.eta)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = k - 1;
        for (c, p) in pi.0.iter().enumerate() {
            acc += p;
            if u < acc {
                y = c;
                break;
            }
        }
        responses.push(y);
    }
    let dataset = OrdinalDataset::new(categories, variables, records, responses, None)?;
    Ok(SyntheticPopulation {
        dataset,
        design,
        truth,
        spec,
        redrawn,
    })
}

/// Observed class proportions among units matching every `(column, level)`
/// pair of `cell`; an empty `cell` selects everyone.
pub fn empirical_probabilities(data: &OrdinalDataset, cell: &[(String, String)]) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; data.n_categories()];
    let mut total = 0.0;
    'rows: for i in 0..data.len() {
        for (col, level) in cell {
            if data.label(i, col)? != *level {
                continue 'rows;
            }
        }
        counts[data.responses()[i]] += data.weights()[i];
        total += data.weights()[i];
    }
    if total <= 0.0 {
        return Err(Error::Empty(format!("no units in cell {cell:?}")));
    }
    Ok(counts.into_iter().map(|c| c / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare(thresholds: Vec<f64>, n: usize) -> PopulationConfig {
        PopulationConfig {
            n,
            n_lhu: 0,
            n_regions: 0,
            strata: false,
            binaries: Vec::new(),
            numerics: Vec::new(),
            interactions: false,
            truth: TruthSpec::Random(RandomTruth {
                thresholds,
                ..RandomTruth::default()
            }),
            seed: 5,
        }
    }

    #[test]
    fn every_stratum_is_populated() {
        let cfg = PopulationConfig {
            n: 60,
            ..PopulationConfig::default()
        };
        let pop = generate(&cfg).unwrap();
        let strata = pop.dataset.strata(&cfg.strata_columns()).unwrap();
        assert_eq!(strata.len(), 60);
    }

    #[test]
    fn equal_seeds_give_equal_populations() {
        let cfg = PopulationConfig::default();
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = PopulationConfig { seed: 2, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().dataset, generate(&other).unwrap().dataset);
    }

    #[test]
    fn tied_thresholds_are_rejected() {
        assert!(matches!(generate(&bare(vec![0.0, 0.0], 10)), Err(Error::Config(_))));
    }

    #[test]
    fn extreme_thresholds_give_degenerate_proportions() {
        let pop = generate(&bare(vec![60.0, 80.0], 200)).unwrap();
        assert_eq!(empirical_probabilities(&pop.dataset, &[]).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_unit_cell_is_one_hot() {
        let pop = generate(&bare(vec![-1.0, 1.0], 1)).unwrap();
        let p = empirical_probabilities(&pop.dataset, &[]).unwrap();
        assert_eq!(p.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn large_single_cell_matches_model() {
        let pop = generate(&bare(vec![-2.0, 2.0], 100_000)).unwrap();
        let p = empirical_probabilities(&pop.dataset, &[]).unwrap();
        for (got, want) in p.iter().zip([0.1192, 0.7616, 0.1192]) {
            assert!((got - want).abs() < 0.01, "{p:?}");
        }
    }

    #[test]
    fn wild_nonparallel_scale_is_reported() {
        let cfg = PopulationConfig {
            truth: TruthSpec::Random(RandomTruth {
                thresholds: vec![-0.1, 0.1],
                nonparallel: 3.0,
                ..RandomTruth::default()
            }),
            ..PopulationConfig::default()
        };
        match generate(&cfg) {
            Err(Error::Generation(msg)) => assert!(msg.contains("nonparallel")),
            other => panic!("expected a generation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cell_fails() {
        let pop = generate(&PopulationConfig::default()).unwrap();
        let cell = vec![("lhu".to_string(), "nowhere".to_string())];
        assert!(empirical_probabilities(&pop.dataset, &cell).is_err());
    }
}

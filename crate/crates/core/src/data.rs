//! Survey records with an ordinal response, survey weights and labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::{VariableKind, VariableSpec};
use crate::error::{Error, Result};

/// Name under which the territorial-unit label is addressed in stratum keys.
pub const LHU_KEY: &str = "lhu";
/// Name under which the region label is addressed in stratum keys.
pub const REGION_KEY: &str = "region";

/// Raw value of one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Level(String),
    Number(f64),
    Missing,
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Level(s) => s.clone(),
            Value::Number(x) => format!("{x:?}"),
            Value::Missing => String::new(),
        }
    }
}

/// One respondent's covariates, aligned with the dataset's variable list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub values: Vec<Value>,
    pub lhu: Option<String>,
    pub region: Option<String>,
}

impl Record {
    pub fn new(values: Vec<Value>) -> Self {
        Self {
            values,
            lhu: None,
            region: None,
        }
    }
}

/// Responses, covariate records and weights for `n` respondents.
///
/// Weights are normalized once at construction so that they sum to `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalDataset {
    categories: Vec<String>,
    variables: Vec<VariableSpec>,
    records: Vec<Record>,
    responses: Vec<usize>,
    weights: Vec<f64>,
}

fn normalize_weights(mut w: Vec<f64>) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Ok(w);
    }
    if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Schema(format!("weights must be finite and nonnegative, got {bad}")));
    }
    let n = w.len() as f64;
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Schema("weights sum to zero".into()));
    }
    // Already-normalized input is left untouched so reloading is exact.
    if (total - n).abs() > 1e-12 * n {
        let scale = n / total;
        w.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(w)
}

impl OrdinalDataset {
    pub fn new(
        categories: Vec<String>,
        variables: Vec<VariableSpec>,
        records: Vec<Record>,
        responses: Vec<usize>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if categories.len() < 3 {
            return Err(Error::Schema(format!(
                "an ordinal response needs at least 3 categories, got {}",
                categories.len()
            )));
        }
        if records.len() != responses.len() {
            return Err(Error::Dimension(format!(
                "{} records but {} responses",
                records.len(),
                responses.len()
            )));
        }
        if let Some(&k) = responses.iter().find(|&&k| k >= categories.len()) {
            return Err(Error::Schema(format!("response index {k} out of range")));
        }
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != variables.len() {
                return Err(Error::Schema(format!(
                    "record {i} has {} values, expected {}",
                    r.values.len(),
                    variables.len()
                )));
            }
        }
        let weights = match weights {
            Some(w) if w.len() != responses.len() => {
                return Err(Error::Dimension(format!(
                    "{} weights for {} responses",
                    w.len(),
                    responses.len()
                )))
            }
            Some(w) => normalize_weights(w)?,
            None => vec![1.0; responses.len()],
        };
        Ok(Self {
            categories,
            variables,
            records,
            responses,
            weights,
        })
    }

    /// Response-only dataset with `n_categories` anonymous categories and no
    /// covariates; pair it with a numeric [`crate::design::DesignMatrix`].
    pub fn from_responses(n_categories: usize, responses: Vec<usize>, weights: Option<Vec<f64>>) -> Result<Self> {
        let categories = (0..n_categories).map(|k| k.to_string()).collect();
        let records = vec![Record::new(Vec::new()); responses.len()];
        Self::new(categories, Vec::new(), records, responses, weights)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn responses(&self) -> &[usize] {
        &self.responses
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Rows `indices` (repeats allowed), weights renormalized to the new size.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        let responses = indices.iter().map(|&i| self.responses[i]).collect();
        let weights: Vec<f64> = indices.iter().map(|&i| self.weights[i]).collect();
        let weights = if weights.iter().sum::<f64>() > 0.0 {
            normalize_weights(weights).expect("weights validated at construction")
        } else {
            vec![1.0; indices.len()]
        };
        Self {
            categories: self.categories.clone(),
            variables: self.variables.clone(),
            records,
            responses,
            weights,
        }
    }

    fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Label of `row` under a categorical column: a binary or categorical
    /// variable, [`LHU_KEY`] or [`REGION_KEY`].
    pub fn label(&self, row: usize, column: &str) -> Result<String> {
        let record = &self.records[row];
        let missing = || Error::Schema(format!("row {row} has no value for `{column}`"));
        match column {
            LHU_KEY => record.lhu.clone().ok_or_else(missing),
            REGION_KEY => record.region.clone().ok_or_else(missing),
            _ => {
                let idx = self
                    .variable_index(column)
                    .ok_or_else(|| Error::Schema(format!("unknown column `{column}`")))?;
                if matches!(self.variables[idx].kind, VariableKind::Numeric) {
                    return Err(Error::Schema(format!("`{column}` is numeric and cannot label strata")));
                }
                match &record.values[idx] {
                    Value::Level(s) => Ok(s.clone()),
                    _ => Err(missing()),
                }
            }
        }
    }

    /// Composite label per row built from `columns`, joined with `:`.
    pub fn stratum_labels(&self, columns: &[String]) -> Result<Vec<String>> {
        (0..self.len())
            .map(|i| {
                let parts = columns
                    .iter()
                    .map(|c| self.label(i, c))
                    .collect::<Result<Vec<_>>>()?;
                Ok(parts.join(":"))
            })
            .collect()
    }

    /// Row indices grouped by composite label, in label order.
    pub fn strata(&self, columns: &[String]) -> Result<BTreeMap<String, Vec<usize>>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, label) in self.stratum_labels(columns)?.into_iter().enumerate() {
            out.entry(label).or_default().push(i);
        }
        Ok(out)
    }

    /// Weighted class proportions.
    pub fn class_proportions(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_categories()];
        for (&k, &w) in self.responses.iter().zip(&self.weights) {
            p[k] += w;
        }
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|v| *v /= total);
        }
        p
    }
}

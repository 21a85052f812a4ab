use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn proportions(outcomes: impl Iterator<Item = (usize, f64)>, n_categories: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_categories];
    for (k, w) in outcomes {
        p[k] += w;
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    p
}

fn check(outcomes: &[usize], weights: Option<&[f64]>, n_categories: usize) -> Result<()> {
    if outcomes.is_empty() {
        return Err(Error::Empty("training set has no units".into()));
    }
    if let Some(&k) = outcomes.iter().find(|&&k| k >= n_categories) {
        return Err(Error::Dimension(format!("outcome {k} out of range")));
    }
    match weights {
        Some(w) if w.len() != outcomes.len() => Err(Error::Dimension(format!(
            "{} weights for {} outcomes",
            w.len(),
            outcomes.len()
        ))),
        Some(w) if w.iter().sum::<f64>() <= 0.0 => Err(Error::Empty("training weights sum to zero".into())),
        _ => Ok(()),
    }
}

fn weighted<'a>(outcomes: &'a [usize], weights: Option<&'a [f64]>) -> impl Iterator<Item = (usize, f64)> + 'a {
    outcomes
        .iter()
        .enumerate()
        .map(move |(i, &k)| (k, weights.map_or(1.0, |w| w[i])))
}

/// Predicts the training class proportions for everyone.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalRule {
    pub probs: Vec<f64>,
}

pub fn baseline_marginal(outcomes: &[usize], weights: Option<&[f64]>, n_categories: usize) -> Result<MarginalRule> {
    check(outcomes, weights, n_categories)?;
    Ok(MarginalRule {
        probs: proportions(weighted(outcomes, weights), n_categories),
    })
}

/// Class proportions within each training stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedRule {
    pub strata: BTreeMap<String, Vec<f64>>,
    pub marginal: Vec<f64>,
}

impl StratifiedRule {
    /// Proportions for `label`; the flag is set when the stratum was absent
    /// from training and the marginal vector is returned instead.
    pub fn predict(&self, label: &str) -> (&[f64], bool) {
        match self.strata.get(label) {
            Some(p) => (p, false),
            None => (&self.marginal, true),
        }
    }
}

pub fn baseline_stratified(
    outcomes: &[usize],
    weights: Option<&[f64]>,
    labels: &[String],
    n_categories: usize,
) -> Result<StratifiedRule> {
    check(outcomes, weights, n_categories)?;
    if labels.len() != outcomes.len() {
        return Err(Error::Dimension(format!(
            "{} stratum labels for {} outcomes",
            labels.len(),
            outcomes.len()
        )));
    }
    let mut grouped: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, kw) in weighted(outcomes, weights).enumerate() {
        grouped.entry(labels[i].as_str()).or_default().push(kw);
    }
    let strata = grouped
        .into_iter()
        .map(|(label, members)| (label.to_string(), proportions(members.into_iter(), n_categories)))
        .collect();
    Ok(StratifiedRule {
        strata,
        marginal: proportions(weighted(outcomes, weights), n_categories),
    })
}

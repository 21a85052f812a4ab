use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Predicted category probabilities, one row per validation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticForecast {
    probs: Array2<f64>,
}

impl ProbabilisticForecast {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() < 2 {
            return Err(Error::Dimension("a forecast needs at least two categories".into()));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Dimension(format!("forecast row {i} has entries outside [0, 1]")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Dimension(format!("forecast row {i} sums to {s}")));
            }
        }
        Ok(Self { probs })
    }

    /// The same vector `p` for each of `n` units.
    pub fn constant(p: &[f64], n: usize) -> Result<Self> {
        let probs = Array2::from_shape_fn((n, p.len()), |(_, k)| p[k]);
        Self::new(probs)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }

    pub fn n_categories(&self) -> usize {
        self.probs.ncols()
    }
}

fn check(forecast: &ProbabilisticForecast, outcomes: &[usize], weights: Option<&[f64]>) -> Result<()> {
    if forecast.is_empty() {
        return Err(Error::Empty("validation set has no units".into()));
    }
    if forecast.len() != outcomes.len() {
        return Err(Error::Dimension(format!(
            "{} forecasts for {} outcomes",
            forecast.len(),
            outcomes.len()
        )));
    }
    if let Some(&k) = outcomes.iter().find(|&&k| k >= forecast.n_categories()) {
        return Err(Error::Dimension(format!("outcome {k} outside the forecast categories")));
    }
    if let Some(w) = weights {
        if w.len() != outcomes.len() {
            return Err(Error::Dimension(format!("{} weights for {} outcomes", w.len(), outcomes.len())));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Empty("validation weights sum to zero".into()));
        }
    }
    Ok(())
}

fn average(values: impl Iterator<Item = f64>, weights: Option<&[f64]>) -> f64 {
    match weights {
        None => {
            let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            sum / n as f64
        }
        Some(w) => {
            let total: f64 = w.iter().sum();
            values.zip(w).map(|(v, w)| v * w).sum::<f64>() / total
        }
    }
}

/// Squared distance between the predicted and the observed step CDF.
pub fn unit_rps(p: ArrayView1<f64>, outcome: usize) -> f64 {
    let mut cdf = 0.0;
    let mut score = 0.0;
    // The last cumulative value is 1 on both sides.
    for k in 0..p.len() - 1 {
        cdf += p[k];
        let observed = if outcome <= k { 1.0 } else { 0.0 };
        score += (observed - cdf).powi(2);
    }
    score
}

/// Category with the largest probability; ties go to the lowest category.
pub fn modal_category(p: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

/// Ranked probability score averaged over units (optionally weighted).
pub fn rps(forecast: &ProbabilisticForecast, outcomes: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    check(forecast, outcomes, weights)?;
    let per_unit = forecast
        .probs
        .rows()
        .into_iter()
        .zip(outcomes)
        .map(|(p, &y)| unit_rps(p, y));
    Ok(average(per_unit, weights))
}

/// Share of units whose modal predicted category differs from the outcome.
pub fn misclassification(forecast: &ProbabilisticForecast, outcomes: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    check(forecast, outcomes, weights)?;
    let per_unit = forecast
        .probs
        .rows()
        .into_iter()
        .zip(outcomes)
        .map(|(p, &y)| if modal_category(p) == y { 0.0 } else { 1.0 });
    Ok(average(per_unit, weights))
}

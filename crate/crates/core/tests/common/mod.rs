#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spordinal::model::{cumulative_probabilities, linear_predictors};
use spordinal::{CoefficientSet, DesignMatrix, OrdinalDataset};

/// Random valid instance: uniform covariates on `[-1, 1]`, evenly spaced
/// thresholds, moderate shared slopes and small margin deviations, with
/// responses drawn from the resulting model. Returns the true coefficients.
pub fn instance(seed: u64, n: usize, p: usize, k: usize) -> (OrdinalDataset, DesignMatrix, CoefficientSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = k - 1;
    let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
    let thresholds: Vec<f64> = (0..j).map(|m| -1.0 + 2.0 * m as f64 / (j - 1).max(1) as f64).collect();
    let shared = Array1::from_shape_fn(p, |_| rng.random_range(-0.8..0.8));
    let specific = Array2::from_shape_fn((p, j), |_| rng.random_range(-0.1..0.1) / p as f64);
    let truth = CoefficientSet::new(thresholds, shared, specific).unwrap();
    let y = x
        .rows()
        .into_iter()
        .map(|row| {
            let pi = cumulative_probabilities(&linear_predictors(row, &truth).unwrap().eta).unwrap();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            pi.0.iter().position(|&q| {
                acc += q;
                u < acc
            })
            .unwrap_or(k - 1)
        })
        .collect();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let data = OrdinalDataset::from_responses(k, y, Some(w)).unwrap();
    (data, DesignMatrix::from_values(x), truth)
}

/// Random coefficients of the given shape, valid on `design`'s rows.
pub fn coefficients_near(truth: &CoefficientSet, seed: u64, scale: f64) -> CoefficientSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = truth.clone();
    c.shared.iter_mut().for_each(|v| *v += rng.random_range(-scale..scale));
    c.specific.iter_mut().for_each(|v| *v += rng.random_range(-scale..scale) / 10.0);
    c
}

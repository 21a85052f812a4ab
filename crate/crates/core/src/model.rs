//! Cumulative logit model for an ordered response with `K >= 3` categories.
//!
//! Margin `j` (0-based, `j < J = K - 1`) carries the linear predictor
//!
//! ```text
//! eta_j = c_j + x . beta + x . B[:, j]
//! ```
//!
//! and `Pr(y <= j) = sigmoid(eta_j)`. Category probabilities are successive
//! differences of the cumulative values.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::OrdinalDataset;
use crate::design::DesignMatrix;
use crate::error::{Error, Result};

/// Floor applied to probabilities only when taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Ordered category code for one observation, stored as its 0-based rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OrdinalResponse(pub usize);

/// Thresholds `c`, shared coefficients `beta` and the `P x J` matrix `B` of
/// margin-specific deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub thresholds: Vec<f64>,
    pub shared: Array1<f64>,
    pub specific: Array2<f64>,
}

impl CoefficientSet {
    pub fn new(thresholds: Vec<f64>, shared: Array1<f64>, specific: Array2<f64>) -> Result<Self> {
        if thresholds.len() < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 thresholds (K >= 3), got {}",
                thresholds.len()
            )));
        }
        if specific.nrows() != shared.len() || specific.ncols() != thresholds.len() {
            return Err(Error::Dimension(format!(
                "specific is {}x{}, expected {}x{}",
                specific.nrows(),
                specific.ncols(),
                shared.len(),
                thresholds.len()
            )));
        }
        Ok(Self {
            thresholds,
            shared,
            specific,
        })
    }

    /// All slopes zero.
    pub fn intercept_only(thresholds: Vec<f64>, n_columns: usize) -> Self {
        let j = thresholds.len();
        Self {
            thresholds,
            shared: Array1::zeros(n_columns),
            specific: Array2::zeros((n_columns, j)),
        }
    }

    pub fn n_margins(&self) -> usize {
        self.thresholds.len()
    }

    pub fn n_columns(&self) -> usize {
        self.shared.len()
    }

    /// `gamma_j = beta + B[:, j]`, the coefficients that actually enter margin `j`.
    pub fn margin_coefficients(&self, margin: usize) -> Array1<f64> {
        &self.shared + &self.specific.column(margin)
    }

    /// `P x J` matrix of effective coefficients `gamma_j`.
    pub fn effective(&self) -> Array2<f64> {
        let mut out = self.specific.clone();
        for mut col in out.columns_mut() {
            col += &self.shared;
        }
        out
    }

    /// Flat parameter vector in the order `c, beta, vec(B)` (B column by column).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.thresholds.clone();
        v.extend(self.shared.iter());
        for j in 0..self.n_margins() {
            v.extend(self.specific.column(j).iter());
        }
        v
    }

    pub fn from_flat(flat: &[f64], n_columns: usize, n_margins: usize) -> Result<Self> {
        let expected = n_margins + n_columns + n_columns * n_margins;
        if flat.len() != expected {
            return Err(Error::Dimension(format!(
                "flat vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let thresholds = flat[..n_margins].to_vec();
        let shared = Array1::from(flat[n_margins..n_margins + n_columns].to_vec());
        let mut specific = Array2::zeros((n_columns, n_margins));
        let base = n_margins + n_columns;
        for j in 0..n_margins {
            for p in 0..n_columns {
                specific[[p, j]] = flat[base + j * n_columns + p];
            }
        }
        Self::new(thresholds, shared, specific)
    }
}

/// Linear predictor of one observation together with its additive parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub eta: Vec<f64>,
    pub threshold_part: Vec<f64>,
    pub shared_part: f64,
    pub specific_part: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryProbabilities(pub Vec<f64>);

impl CategoryProbabilities {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn linear_predictors(row: ArrayView1<f64>, coefs: &CoefficientSet) -> Result<LinearPredictor> {
    if row.len() != coefs.n_columns() {
        return Err(Error::Dimension(format!(
            "row has {} entries, coefficients have {}",
            row.len(),
            coefs.n_columns()
        )));
    }
    let shared_part = row.dot(&coefs.shared);
    let specific_part: Vec<f64> = coefs.specific.columns().into_iter().map(|b| row.dot(&b)).collect();
    let eta = coefs
        .thresholds
        .iter()
        .zip(&specific_part)
        .map(|(c, s)| c + shared_part + s)
        .collect();
    Ok(LinearPredictor {
        eta,
        threshold_part: coefs.thresholds.clone(),
        shared_part,
        specific_part,
    })
}

/// Checks that `eta` is nondecreasing, so every interior category has
/// nonnegative probability.
pub(crate) fn check_monotone(eta: &[f64]) -> Result<()> {
    for j in 1..eta.len() {
        if eta[j] < eta[j - 1] || eta[j].is_nan() {
            return Err(Error::invalid(
                Some(j),
                format!("eta[{}] = {} < eta[{}] = {}", j, eta[j], j - 1, eta[j - 1]),
            ));
        }
    }
    Ok(())
}

pub fn cumulative_probabilities(eta: &[f64]) -> Result<CategoryProbabilities> {
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("linear predictor must be finite".into()));
    }
    check_monotone(eta)?;
    let j = eta.len();
    let mut pi = Vec::with_capacity(j + 1);
    pi.push(sigmoid(eta[0]));
    for m in 1..j {
        pi.push(interior_probability(eta[m], eta[m - 1]));
    }
    pi.push(sigmoid(-eta[j - 1]));
    Ok(CategoryProbabilities(pi))
}

/// `sigmoid(a) - sigmoid(b)` for `a >= b`, evaluated as
/// `sigmoid(a) * sigmoid(-b) * (1 - exp(b - a))` to keep relative accuracy
/// when both values sit in the same tail.
#[inline]
fn interior_probability(a: f64, b: f64) -> f64 {
    sigmoid(a) * sigmoid(-b) * (-(b - a).exp_m1())
}

/// Loss `-log pi_k` of one observation in category `k` and its first and
/// second derivatives with respect to the two linear predictors it touches:
/// `upper = eta_k` (absent for the top category) and `lower = eta_{k-1}`
/// (absent for the bottom category).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RowLoss {
    pub loss: f64,
    pub d_upper: f64,
    pub d_lower: f64,
    pub h_upper: f64,
    pub h_lower: f64,
    pub h_cross: f64,
}

pub(crate) fn row_loss(eta: &[f64], k: usize) -> Result<RowLoss> {
    let j = eta.len();
    if k == 0 {
        let a = eta[0];
        let s = sigmoid(a);
        let sm = sigmoid(-a);
        Ok(RowLoss {
            loss: -log_sigmoid(a),
            d_upper: -sm,
            h_upper: s * sm,
            ..Default::default()
        })
    } else if k == j {
        let b = eta[j - 1];
        let s = sigmoid(b);
        let sm = sigmoid(-b);
        Ok(RowLoss {
            loss: -log_sigmoid(-b),
            d_lower: s,
            h_lower: s * sm,
            ..Default::default()
        })
    } else {
        let a = eta[k];
        let b = eta[k - 1];
        if !(a > b) {
            return Err(Error::invalid(
                Some(k),
                format!("observed interior category {k} has zero or negative probability"),
            ));
        }
        let log_pi = log_sigmoid(a) + log_sigmoid(-b) + (-(b - a).exp_m1()).max(LOG_FLOOR).ln();
        let ra = (log_sigmoid(a) + log_sigmoid(-a) - log_pi).exp();
        let rb = (log_sigmoid(b) + log_sigmoid(-b) - log_pi).exp();
        let (sa, sma) = (sigmoid(a), sigmoid(-a));
        let (sb, smb) = (sigmoid(b), sigmoid(-b));
        Ok(RowLoss {
            loss: -log_pi,
            d_upper: -ra,
            d_lower: rb,
            h_upper: -ra * (sma - sa) + ra * ra,
            h_lower: rb * (smb - sb) + rb * rb,
            h_cross: -ra * rb,
        })
    }
}

/// Loss term of [`row_loss`] alone; `None` outside the valid region.
#[inline]
pub(crate) fn row_loss_value(eta: &[f64], k: usize) -> Option<f64> {
    let j = eta.len();
    let v = if k == 0 {
        -log_sigmoid(eta[0])
    } else if k == j {
        -log_sigmoid(-eta[j - 1])
    } else {
        let (a, b) = (eta[k], eta[k - 1]);
        if !(a > b) {
            return None;
        }
        -(log_sigmoid(a) + log_sigmoid(-b) + (-(b - a).exp_m1()).max(LOG_FLOOR).ln())
    };
    v.is_finite().then_some(v)
}

fn check_shapes(data: &OrdinalDataset, design: &DesignMatrix, coefs: &CoefficientSet) -> Result<()> {
    if design.n_rows() != data.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows, dataset has {}",
            design.n_rows(),
            data.len()
        )));
    }
    if design.n_columns() != coefs.n_columns() {
        return Err(Error::Dimension(format!(
            "design has {} columns, coefficients have {}",
            design.n_columns(),
            coefs.n_columns()
        )));
    }
    if data.n_categories() != coefs.n_margins() + 1 {
        return Err(Error::Dimension(format!(
            "dataset has {} categories, coefficients have {} margins",
            data.n_categories(),
            coefs.n_margins()
        )));
    }
    Ok(())
}

/// Weighted, rescaled log-likelihood `(1/n) sum_i w_i log pi_{y_i}`.
pub fn log_likelihood(data: &OrdinalDataset, design: &DesignMatrix, coefs: &CoefficientSet) -> Result<f64> {
    check_shapes(data, design, coefs)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let mut total = 0.0;
    for (i, row) in design.values.rows().into_iter().enumerate() {
        let lp = linear_predictors(row, coefs)?;
        check_monotone(&lp.eta)?;
        let k = data.responses()[i];
        let term = row_loss(&lp.eta, k)?;
        total -= data.weights()[i] * term.loss;
    }
    Ok(total / n as f64)
}

/// Partial derivatives of [`log_likelihood`] with respect to `c`, `beta` and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub thresholds: Vec<f64>,
    pub shared: Array1<f64>,
    pub specific: Array2<f64>,
}

impl Gradient {
    pub fn to_flat(&self) -> Vec<f64> {
        CoefficientSet {
            thresholds: self.thresholds.clone(),
            shared: self.shared.clone(),
            specific: self.specific.clone(),
        }
        .to_flat()
    }
}

pub fn gradient(data: &OrdinalDataset, design: &DesignMatrix, coefs: &CoefficientSet) -> Result<Gradient> {
    check_shapes(data, design, coefs)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("dataset".into()));
    }
    let j_count = coefs.n_margins();
    let p_count = coefs.n_columns();
    let mut g_c = vec![0.0; j_count];
    let mut g_shared = Array1::<f64>::zeros(p_count);
    let mut g_specific = Array2::<f64>::zeros((p_count, j_count));
    let mut d_eta = vec![0.0; j_count];
    for (i, row) in design.values.rows().into_iter().enumerate() {
        let lp = linear_predictors(row, coefs)?;
        check_monotone(&lp.eta)?;
        let k = data.responses()[i];
        let term = row_loss(&lp.eta, k)?;
        let w = data.weights()[i];
        d_eta.iter_mut().for_each(|d| *d = 0.0);
        if k < j_count {
            d_eta[k] -= w * term.d_upper;
        }
        if k > 0 {
            d_eta[k - 1] -= w * term.d_lower;
        }
        let total: f64 = d_eta.iter().sum();
        for (m, &d) in d_eta.iter().enumerate() {
            if d != 0.0 {
                g_c[m] += d;
                g_specific.column_mut(m).scaled_add(d, &row);
            }
        }
        g_shared.scaled_add(total, &row);
    }
    let scale = 1.0 / n as f64;
    g_c.iter_mut().for_each(|v| *v *= scale);
    g_shared *= scale;
    g_specific *= scale;
    Ok(Gradient {
        thresholds: g_c,
        shared: g_shared,
        specific: g_specific,
    })
}

/// A pair of consecutive thresholds that is not strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdViolation {
    pub margin: usize,
    pub lower: f64,
    pub upper: f64,
}

/// Threshold ordering violations at the zero covariate vector.
pub fn validate_coefficients(coefs: &CoefficientSet) -> Vec<ThresholdViolation> {
    coefs
        .thresholds
        .windows(2)
        .enumerate()
        .filter(|(_, w)| !(w[0] < w[1]))
        .map(|(m, w)| ThresholdViolation {
            margin: m + 1,
            lower: w[0],
            upper: w[1],
        })
        .collect()
}

/// Category probabilities for every row of `design`, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Array2<f64>,
    /// Rows whose margins crossed and were repaired by taking the running
    /// maximum of the cumulative probabilities.
    pub repaired: usize,
}

/// Predicts category probabilities for new rows. Fitted coefficients are
/// only guaranteed valid on the training rows, so crossing margins elsewhere
/// are repaired rather than rejected.
pub fn predict(design: &DesignMatrix, coefs: &CoefficientSet) -> Result<Prediction> {
    let n = design.n_rows();
    let j = coefs.n_margins();
    let mut probs = Array2::zeros((n, j + 1));
    let mut repaired = 0;
    for (i, row) in design.values.rows().into_iter().enumerate() {
        let eta = linear_predictors(row, coefs)?.eta;
        let pi = match cumulative_probabilities(&eta) {
            Ok(p) => p.0,
            Err(e) if e.is_invalid_region() => {
                repaired += 1;
                let mut prev = 0.0;
                let mut pi = Vec::with_capacity(j + 1);
                for &e in &eta {
                    let f = sigmoid(e).max(prev);
                    pi.push(f - prev);
                    prev = f;
                }
                pi.push(1.0 - prev);
                pi
            }
            Err(e) => return Err(e),
        };
        for (k, v) in pi.into_iter().enumerate() {
            probs[[i, k]] = v;
        }
    }
    Ok(Prediction { probs, repaired })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    fn coefs(c: Vec<f64>, beta: Vec<f64>, b: Array2<f64>) -> CoefficientSet {
        CoefficientSet::new(c, Array1::from(beta), b).unwrap()
    }

    #[test]
    fn zero_row_leaves_thresholds() {
        let cs = coefs(vec![-1.0, 1.0], vec![3.0, -2.0], array![[1.0, 2.0], [0.5, -0.5]]);
        let lp = linear_predictors(array![0.0, 0.0].view(), &cs).unwrap();
        assert_eq!(lp.eta, vec![-1.0, 1.0]);
    }

    #[test]
    fn predictor_adds_shared_and_specific_parts() {
        let cs = coefs(vec![0.0, 0.5], vec![2.0], array![[-1.0, 1.0]]);
        let lp = linear_predictors(array![1.0].view(), &cs).unwrap();
        assert_eq!(lp.eta, vec![1.0, 3.5]);
        assert_eq!(lp.shared_part, 2.0);
        assert_eq!(lp.specific_part, vec![-1.0, 1.0]);

        let cs = coefs(vec![0.0, 1.0], vec![1.0, -1.0], Array2::zeros((2, 2)));
        let lp = linear_predictors(array![1.0, 1.0].view(), &cs).unwrap();
        assert_eq!(lp.eta, vec![0.0, 1.0]);
    }

    #[test]
    fn predictor_rejects_wrong_length() {
        let cs = CoefficientSet::intercept_only(vec![0.0, 1.0], 2);
        assert!(matches!(
            linear_predictors(array![1.0].view(), &cs),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn probabilities_at_zero_predictor() {
        let p = cumulative_probabilities(&[0.0, 0.0]).unwrap();
        assert_eq!(p.0, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn probabilities_symmetric_predictor() {
        let p = cumulative_probabilities(&[-2.0, 2.0]).unwrap();
        let s = 1.0 / (1.0 + 2f64.exp());
        assert_abs_diff_eq!(p.0[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(p.0[1], 1.0 - 2.0 * s, epsilon = 1e-15);
        assert_abs_diff_eq!(p.0[2], s, epsilon = 1e-15);
        assert_abs_diff_eq!(p.0[0], 0.1192, epsilon = 1e-4);
        assert_abs_diff_eq!(p.0[1], 0.7616, epsilon = 1e-4);
    }

    #[test]
    fn non_monotone_predictor_is_invalid() {
        match cumulative_probabilities(&[1.0, -1.0]) {
            Err(Error::InvalidRegion { margin, .. }) => assert_eq!(margin, Some(1)),
            other => panic!("expected InvalidRegion, got {other:?}"),
        }
    }

    #[test]
    fn extreme_predictors_do_not_overflow() {
        let p = cumulative_probabilities(&[-800.0, 800.0]).unwrap();
        assert!(p.0.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.0.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(log_sigmoid(-800.0).is_finite());
        assert_abs_diff_eq!(log_sigmoid(800.0), 0.0);
    }

    #[test]
    fn single_observation_likelihood() {
        let data = OrdinalDataset::from_responses(3, vec![0], None).unwrap();
        let design = DesignMatrix::from_values(Array2::zeros((1, 0)));
        let cs = CoefficientSet::intercept_only(vec![0.0, 0.0], 0);
        let ll = log_likelihood(&data, &design, &cs).unwrap();
        assert_abs_diff_eq!(ll, 0.5f64.ln(), epsilon = 1e-15);

        let mid = OrdinalDataset::from_responses(3, vec![1], None).unwrap();
        assert!(log_likelihood(&mid, &design, &cs).unwrap_err().is_invalid_region());
    }

    #[test]
    fn weight_semantics_match_rescaling() {
        let design2 = DesignMatrix::from_values(array![[0.3], [0.3]]);
        let design1 = DesignMatrix::from_values(array![[0.3]]);
        let cs = coefs(vec![-0.4, 0.7], vec![1.1], array![[0.2, -0.3]]);
        let two = OrdinalDataset::from_responses(3, vec![2, 2], Some(vec![2.0, 0.0])).unwrap();
        let one = OrdinalDataset::from_responses(3, vec![2], Some(vec![1.0])).unwrap();
        let l2 = log_likelihood(&two, &design2, &cs).unwrap();
        let l1 = log_likelihood(&one, &design1, &cs).unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-15);
    }

    #[test]
    fn threshold_validation() {
        let mk = |c: Vec<f64>| CoefficientSet::intercept_only(c, 0);
        assert!(validate_coefficients(&mk(vec![-1.0, 0.0])).is_empty());
        assert_eq!(validate_coefficients(&mk(vec![0.0, 0.0])).len(), 1);
        let v = validate_coefficients(&mk(vec![1.0, -1.0]));
        assert_eq!(v, vec![ThresholdViolation { margin: 1, lower: 1.0, upper: -1.0 }]);
    }

    #[test]
    fn flat_round_trip() {
        let cs = coefs(vec![-1.0, 0.5, 2.0], vec![1.0, 2.0], array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]);
        let back = CoefficientSet::from_flat(&cs.to_flat(), 2, 3).unwrap();
        assert_eq!(cs, back);
    }
}

//! Elastic-net penalty of the semi-parallel model.

use serde::{Deserialize, Serialize};

use crate::data::OrdinalDataset;
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::model::{log_likelihood, CoefficientSet};

/// Overall strength `lambda`, lasso/ridge mix `alpha` and the relative
/// weight `rho` of the shared coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub lambda: f64,
    pub alpha: f64,
    pub rho: f64,
}

impl HyperParams {
    pub fn new(lambda: f64, alpha: f64, rho: f64) -> Result<Self> {
        let h = Self { lambda, alpha, rho };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::Config(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        Ok(())
    }

    /// `(l1, l2)` multipliers for a coefficient whose block weight is `weight`
    /// (`rho` for shared, 1 for margin-specific).
    #[inline]
    pub(crate) fn coordinate_penalty(&self, weight: f64) -> (f64, f64) {
        let s = self.lambda * weight;
        (s * self.alpha, s * (1.0 - self.alpha))
    }
}

#[inline]
fn elastic(x: f64, alpha: f64) -> f64 {
    alpha * x.abs() + 0.5 * (1.0 - alpha) * x * x
}

/// `lambda * (rho * sum_p e(beta_p) + sum_{p,j} e(B_pj))` with
/// `e(x) = alpha |x| + (1 - alpha) x^2 / 2`. Thresholds are not penalized.
pub fn penalty_value(coefs: &CoefficientSet, hyper: &HyperParams) -> f64 {
    if hyper.lambda == 0.0 {
        return 0.0;
    }
    let shared: f64 = coefs.shared.iter().map(|&b| elastic(b, hyper.alpha)).sum();
    let specific: f64 = coefs.specific.iter().map(|&b| elastic(b, hyper.alpha)).sum();
    hyper.lambda * (hyper.rho * shared + specific)
}

/// Negative log-likelihood and penalty reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub neg_log_likelihood: f64,
    pub penalty: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.neg_log_likelihood + self.penalty
    }
}

pub fn objective_parts(
    data: &OrdinalDataset,
    design: &DesignMatrix,
    coefs: &CoefficientSet,
    hyper: &HyperParams,
) -> Result<ObjectiveParts> {
    Ok(ObjectiveParts {
        neg_log_likelihood: -log_likelihood(data, design, coefs)?,
        penalty: penalty_value(coefs, hyper),
    })
}

/// Penalized objective. Coefficients outside the valid-probability region
/// evaluate to `+inf`; other errors (shape mismatches) propagate.
pub fn objective(data: &OrdinalDataset, design: &DesignMatrix, coefs: &CoefficientSet, hyper: &HyperParams) -> Result<f64> {
    match objective_parts(data, design, coefs, hyper) {
        Ok(p) => Ok(p.total()),
        Err(e) if e.is_invalid_region() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn example() -> CoefficientSet {
        CoefficientSet::new(vec![-1.0, 1.0], array![2.0], array![[1.0, -1.0]]).unwrap()
    }

    #[test]
    fn zero_lambda_gives_zero_penalty() {
        let h = HyperParams::new(0.0, 0.3, 5.0).unwrap();
        assert_eq!(penalty_value(&example(), &h), 0.0);
    }

    #[test]
    fn lasso_and_ridge_examples() {
        let lasso = HyperParams::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(penalty_value(&example(), &lasso), 4.0);
        let ridge = HyperParams::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(penalty_value(&example(), &ridge), 3.0);
    }

    #[test]
    fn thresholds_are_never_penalized() {
        let h = HyperParams::new(10.0, 0.5, 1.0).unwrap();
        let cs = CoefficientSet::new(vec![-100.0, 100.0], array![0.0], Array2::zeros((1, 2))).unwrap();
        assert_eq!(penalty_value(&cs, &h), 0.0);
    }

    #[test]
    fn rho_scales_only_the_shared_block() {
        let h = HyperParams::new(1.0, 1.0, 3.0).unwrap();
        assert_eq!(penalty_value(&example(), &h), 3.0 * 2.0 + 2.0);
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-3.0, 0.5), -2.5);
    }

    #[test]
    fn hyperparameter_ranges() {
        assert!(HyperParams::new(-1.0, 0.5, 1.0).is_err());
        assert!(HyperParams::new(1.0, 1.5, 1.0).is_err());
        assert!(HyperParams::new(1.0, 0.5, -0.1).is_err());
    }
}

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{evaluate, make_folds, make_stratified_folds, plan_folds, CvOptions, ModelKind};
use crate::data::OrdinalDataset;
use crate::design::DesignSpec;
use crate::error::{Error, Result};
use crate::penalty::HyperParams;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Seven values with `log10(lambda)` evenly spaced on `[-6, -2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    linspace(-6.0, -2.0, 7).into_iter().map(|e| 10f64.powf(e)).collect()
}

/// Seven values evenly spaced on `[0.5, 1.5]`.
pub fn default_rho_grid() -> Vec<f64> {
    linspace(0.5, 1.5, 7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub rho: f64,
    pub fold_rps: Vec<f64>,
    pub fold_me: Vec<f64>,
    pub mean_rps: f64,
    pub mean_me: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub lambda: f64,
    pub rho: f64,
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub alpha: f64,
    pub n_folds: usize,
    pub seed: u64,
    /// Points whose every fold fit succeeded, in `(lambda, rho)` grid order.
    pub points: Vec<GridPoint>,
    /// Points excluded because a fold failed.
    pub failures: Vec<GridFailure>,
    pub best: Option<HyperParams>,
}

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,log10_lambda,rho,alpha,mean_rps,mean_me,mean_rps_x100,mean_me_x100,selected\n");
        for p in &self.points {
            let selected = self.best.is_some_and(|b| b.lambda == p.lambda && b.rho == p.rho);
            let _ = writeln!(
                out,
                "{:e},{:.4},{:.4},{},{:.10},{:.10},{:.3},{:.3},{}",
                p.lambda,
                p.lambda.log10(),
                p.rho,
                self.alpha,
                p.mean_rps,
                p.mean_me,
                100.0 * p.mean_rps,
                100.0 * p.mean_me,
                selected
            );
        }
        out
    }
}

/// Point with the smallest mean RPS; ties go to the larger `lambda`, then
/// the larger `rho`. The result does not depend on the order of `points`.
pub fn select_best(points: &[GridPoint]) -> Option<&GridPoint> {
    points.iter().min_by(|a, b| {
        a.mean_rps
            .total_cmp(&b.mean_rps)
            .then_with(|| b.lambda.total_cmp(&a.lambda))
            .then_with(|| b.rho.total_cmp(&a.rho))
    })
}

/// Cross-validates the semi-parallel model at every `(lambda, rho)` pair with
/// mixing `alpha`, using one fold assignment for all points.
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    data: &OrdinalDataset,
    spec: &DesignSpec,
    lambdas: &[f64],
    rhos: &[f64],
    alpha: f64,
    n_folds: usize,
    seed: u64,
    options: &CvOptions,
) -> Result<GridReport> {
    if lambdas.is_empty() || rhos.is_empty() {
        return Err(Error::Config("grid search needs nonempty lambda and rho grids".into()));
    }
    for &l in lambdas {
        for &r in rhos {
            HyperParams::new(l, alpha, r)?;
        }
    }
    options.fit.validate()?;
    let folds = match &options.stratify_folds {
        Some(cols) => make_stratified_folds(&data.stratum_labels(cols)?, n_folds, seed)?,
        None => make_folds(data.len(), n_folds, seed)?,
    };
    let plans = plan_folds(data, spec, &folds, &[spec.group]);
    let grid: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| rhos.iter().map(move |&r| (l, r))).collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..n_folds).map(move |f| (g, f)))
        .collect();
    let outcomes: Vec<Result<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (lambda, rho) = grid[g];
            let kind = ModelKind::SemiParallel {
                hyper: HyperParams { lambda, alpha, rho },
                group: spec.group,
            };
            evaluate(&kind, &plans[f], options).map(|s| (s.rps, s.me))
        })
        .collect();

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for (g, &(lambda, rho)) in grid.iter().enumerate() {
        let mut fold_rps = Vec::with_capacity(n_folds);
        let mut fold_me = Vec::with_capacity(n_folds);
        let mut failed = false;
        for f in 0..n_folds {
            match &outcomes[g * n_folds + f] {
                Ok((r, m)) => {
                    fold_rps.push(*r);
                    fold_me.push(*m);
                }
                Err(e) => {
                    failed = true;
                    failures.push(GridFailure {
                        lambda,
                        rho,
                        fold: f,
                        error: e.to_string(),
                    });
                }
            }
        }
        if !failed {
            let k = n_folds as f64;
            points.push(GridPoint {
                lambda,
                rho,
                mean_rps: fold_rps.iter().sum::<f64>() / k,
                mean_me: fold_me.iter().sum::<f64>() / k,
                fold_rps,
                fold_me,
            });
        }
    }
    let best = select_best(&points).map(|p| HyperParams {
        lambda: p.lambda,
        alpha,
        rho: p.rho,
    });
    Ok(GridReport {
        alpha,
        n_folds,
        seed,
        points,
        failures,
        best,
    })
}

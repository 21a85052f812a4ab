//! Forecast scoring, baseline predictors, cross-validation and the
//! hyperparameter grid search.

mod baseline;
mod cv;
mod grid;
mod metrics;

pub use baseline::{baseline_marginal, baseline_stratified, MarginalRule, StratifiedRule};
pub use cv::{
    cross_validate, cross_validate_with_folds, default_model_family, make_folds, make_stratified_folds, CvOptions,
    EvaluationReport, FoldAssignment, FoldResult, ModelDescriptor, ModelKind, ModelSummary,
};
pub use grid::{default_lambda_grid, default_rho_grid, grid_search, select_best, GridFailure, GridPoint, GridReport};
pub use metrics::{misclassification, modal_category, rps, unit_rps, ProbabilisticForecast};

//! Penalized semi-parallel cumulative logit regression for ordered survey
//! responses.
//!
//! The crate covers the model itself ([`model`]), design-matrix expansion
//! ([`design`]), the elastic-net coordinate-descent fitter ([`fit`],
//! [`penalty`]), cross-validated evaluation against baseline predictors
//! ([`evaluation`]), stratified bootstrap and variance decomposition
//! ([`inference`]), the positivity/neutrality rotation of two-margin
//! coefficients ([`rotation`]), a synthetic population generator ([`synth`])
//! and delimited-file I/O ([`io`]) with figure-data tables ([`report`]).

pub mod data;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod fit;
pub mod inference;
pub mod io;
pub mod model;
pub mod penalty;
pub mod report;
pub mod rotation;
pub mod synth;

pub use data::{OrdinalDataset, Record, Value};
pub use design::{DesignMatrix, DesignSpec, GroupBlock, Scaling, VariableKind, VariableSpec};
pub use error::{Error, Result};
pub use fit::{fit, fit_restricted, FitOptions, ModelFit, Restriction};
pub use model::{CoefficientSet, CategoryProbabilities, LinearPredictor};
pub use penalty::HyperParams;

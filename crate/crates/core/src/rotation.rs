//! Positivity/neutrality coordinates of three-category coefficient pairs.
//!
//! For `K = 3` each column has one coefficient per margin: `b_neg` on the
//! split "negative vs rest" and `b_zero` on "negative or neutral vs
//! positive". A column that lowers both cumulative logits pushes mass toward
//! the positive end; one that lowers the first and raises the second pushes
//! mass into the neutral category. The map below turns those two directions
//! into the coordinate axes:
//!
//! ```text
//! positivity = -(b_neg + b_zero) / sqrt(2)
//! neutrality =  (b_zero - b_neg) / sqrt(2)
//! ```
//!
//! It is a reflection of the second coordinate followed by a 135 degree
//! rotation, and therefore orthogonal.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::percentile_interval;
use crate::model::CoefficientSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPair {
    pub b_neg: f64,
    pub b_zero: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatedPair {
    pub positivity: f64,
    pub neutrality: f64,
    pub label: String,
}

pub fn to_positivity_neutrality(pair: &CoefficientPair) -> RotatedPair {
    RotatedPair {
        positivity: -(pair.b_neg + pair.b_zero) * FRAC_1_SQRT_2,
        neutrality: (pair.b_zero - pair.b_neg) * FRAC_1_SQRT_2,
        label: pair.label.clone(),
    }
}

pub fn from_positivity_neutrality(rot: &RotatedPair) -> CoefficientPair {
    CoefficientPair {
        b_neg: -(rot.positivity + rot.neutrality) * FRAC_1_SQRT_2,
        b_zero: (rot.neutrality - rot.positivity) * FRAC_1_SQRT_2,
        label: rot.label.clone(),
    }
}

/// Effective per-margin coefficient pairs `(beta_p + B_p0, beta_p + B_p1)`
/// of every column, labeled by `labels`.
pub fn pairs_from_coefficients(coefs: &CoefficientSet, labels: &[String]) -> Result<Vec<CoefficientPair>> {
    if coefs.n_margins() != 2 {
        return Err(Error::UnsupportedShape(format!(
            "the rotation needs exactly 2 margins (3 categories), got {}",
            coefs.n_margins()
        )));
    }
    if labels.len() != coefs.n_columns() {
        return Err(Error::Dimension(format!(
            "{} labels for {} columns",
            labels.len(),
            coefs.n_columns()
        )));
    }
    let g = coefs.effective();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(p, label)| CoefficientPair {
            b_neg: g[[p, 0]],
            b_zero: g[[p, 1]],
            label: label.clone(),
        })
        .collect())
}

/// Sign pattern of `(b_neg, b_zero)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrant {
    /// `(+, +)`: mass moves toward the negative category.
    HarmfulOrIrrelevant,
    /// `(-, +)`: mass moves into the neutral category.
    IncreasedNeutrality,
    /// `(-, -)`: mass moves toward the positive category.
    Beneficial,
    /// `(+, -)`: mass moves out of the neutral category to both ends.
    Polarization,
    /// At least one coefficient lies within tolerance of zero.
    AxisBorderline,
}

impl Quadrant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quadrant::HarmfulOrIrrelevant => "harmful_or_irrelevant",
            Quadrant::IncreasedNeutrality => "increased_neutrality",
            Quadrant::Beneficial => "beneficial",
            Quadrant::Polarization => "polarization",
            Quadrant::AxisBorderline => "axis_borderline",
        }
    }
}

pub fn classify_quadrant(pair: &CoefficientPair, tolerance: f64) -> Quadrant {
    if pair.b_neg.abs() <= tolerance || pair.b_zero.abs() <= tolerance {
        return Quadrant::AxisBorderline;
    }
    match (pair.b_neg > 0.0, pair.b_zero > 0.0) {
        (true, true) => Quadrant::HarmfulOrIrrelevant,
        (false, true) => Quadrant::IncreasedNeutrality,
        (false, false) => Quadrant::Beneficial,
        (true, false) => Quadrant::Polarization,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationAxis {
    Positivity,
    Neutrality,
}

impl RotationAxis {
    fn value(&self, r: &RotatedPair) -> f64 {
        match self {
            RotationAxis::Positivity => r.positivity,
            RotationAxis::Neutrality => r.neutrality,
        }
    }
}

impl std::str::FromStr for RotationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positivity" => Ok(RotationAxis::Positivity),
            "neutrality" => Ok(RotationAxis::Neutrality),
            other => Err(Error::Config(format!("unknown axis `{other}`"))),
        }
    }
}

/// Percentile bands of both rotated coordinates of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationBand {
    pub positivity: (f64, f64),
    pub neutrality: (f64, f64),
}

/// Percentile bands of the rotated coordinates of every column across
/// bootstrap replicates.
pub fn rotation_bands(replicates: &[CoefficientSet], level: f64) -> Result<Vec<RotationBand>> {
    let Some(first) = replicates.first() else {
        return Err(Error::TooFewReplicates {
            available: 0,
            required: crate::inference::MIN_REPLICATES,
        });
    };
    let labels: Vec<String> = (0..first.n_columns()).map(|p| p.to_string()).collect();
    let rotated: Vec<Vec<RotatedPair>> = replicates
        .iter()
        .map(|c| Ok(pairs_from_coefficients(c, &labels)?.iter().map(to_positivity_neutrality).collect()))
        .collect::<Result<_>>()?;
    (0..labels.len())
        .map(|p| {
            let pos: Vec<f64> = rotated.iter().map(|r| r[p].positivity).collect();
            let neu: Vec<f64> = rotated.iter().map(|r| r[p].neutrality).collect();
            Ok(RotationBand {
                positivity: percentile_interval(&pos, level)?,
                neutrality: percentile_interval(&neu, level)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEffect {
    pub rotated: RotatedPair,
    /// Band on the ranking axis.
    pub band: Option<(f64, f64)>,
}

/// Stable sort of `pairs` on `axis`. `bands`, when given, must align with
/// `pairs` and travel with their entries.
pub fn rank_effects(
    pairs: &[RotatedPair],
    axis: RotationAxis,
    descending: bool,
    bands: Option<&[RotationBand]>,
) -> Result<Vec<RankedEffect>> {
    if pairs.is_empty() {
        return Err(Error::Empty("no effects to rank".into()));
    }
    if let Some(b) = bands {
        if b.len() != pairs.len() {
            return Err(Error::Dimension(format!("{} bands for {} effects", b.len(), pairs.len())));
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (axis.value(&pairs[a]), axis.value(&pairs[b]));
        if descending {
            vb.total_cmp(&va)
        } else {
            va.total_cmp(&vb)
        }
    });
    Ok(order
        .into_iter()
        .map(|i| RankedEffect {
            rotated: pairs[i].clone(),
            band: bands.map(|b| match axis {
                RotationAxis::Positivity => b[i].positivity,
                RotationAxis::Neutrality => b[i].neutrality,
            }),
        })
        .collect())
}

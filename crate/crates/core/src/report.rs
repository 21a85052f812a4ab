//! Tidy tables behind the descriptive and coefficient figures: response
//! proportions by group, by quartile class of a numeric covariate, the
//! coefficient and rotated planes, and rankings on either rotated axis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{OrdinalDataset, Value};
use crate::design::{ColumnRole, VariableKind};
use crate::error::{Error, Result};
use crate::inference::quantile_type7;
use crate::io::FitDocument;
use crate::rotation::{
    classify_quadrant, pairs_from_coefficients, rank_effects, to_positivity_neutrality, RotatedPair,
    RotationAxis, RotationBand,
};

/// Coefficients within this distance of zero are labeled axis-borderline.
pub const QUADRANT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub group: String,
    pub category: String,
    pub n_units: usize,
    pub proportion: f64,
}

/// Weighted response proportions within each level of `by` (a categorical
/// column, `lhu` or `region`).
pub fn response_proportions(data: &OrdinalDataset, by: &str) -> Result<Vec<ProportionRow>> {
    let k = data.n_categories();
    let mut cells: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    for (i, label) in data.stratum_labels(&[by.to_string()])?.into_iter().enumerate() {
        let cell = cells.entry(label).or_insert_with(|| (0, vec![0.0; k]));
        cell.0 += 1;
        cell.1[data.responses()[i]] += data.weights()[i];
    }
    Ok(tidy(cells, data.categories()))
}

fn tidy(cells: BTreeMap<String, (usize, Vec<f64>)>, categories: &[String]) -> Vec<ProportionRow> {
    let mut rows = Vec::new();
    for (group, (n, w)) in cells {
        let total: f64 = w.iter().sum();
        for (c, wc) in categories.iter().zip(&w) {
            rows.push(ProportionRow {
                group: group.clone(),
                category: c.clone(),
                n_units: n,
                proportion: if total > 0.0 { wc / total } else { 0.0 },
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub variable: String,
    /// 1 to 4.
    pub class: usize,
    pub lower: f64,
    pub upper: f64,
    pub category: String,
    pub n_units: usize,
    pub proportion: f64,
}

/// Weighted response proportions within the quartile classes of a numeric
/// covariate. Class `q` holds values in `(Q_{q-1}, Q_q]`, the first class
/// including the minimum; cut points are unweighted type-7 quartiles.
pub fn quartile_proportions(data: &OrdinalDataset, variable: &str) -> Result<Vec<QuartileRow>> {
    let idx = data
        .variables()
        .iter()
        .position(|v| v.name == variable)
        .ok_or_else(|| Error::Schema(format!("unknown column `{variable}`")))?;
    if !matches!(data.variables()[idx].kind, VariableKind::Numeric) {
        return Err(Error::Schema(format!("`{variable}` is not numeric")));
    }
    let values: Vec<f64> = data
        .records()
        .iter()
        .map(|r| match r.values[idx] {
            Value::Number(x) => Ok(x),
            _ => Err(Error::Schema(format!("`{variable}` has a non-numeric value"))),
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&q| quantile_type7(&sorted, q)).collect();
    let k = data.n_categories();
    let mut cells = vec![(0usize, vec![0.0; k]); 4];
    for (i, &x) in values.iter().enumerate() {
        let class = (1..4).find(|&q| x <= cuts[q]).unwrap_or(4) - 1;
        cells[class].0 += 1;
        cells[class].1[data.responses()[i]] += data.weights()[i];
    }
    let mut rows = Vec::new();
    for (q, (n, w)) in cells.into_iter().enumerate() {
        let total: f64 = w.iter().sum();
        for (c, wc) in data.categories().iter().zip(&w) {
            rows.push(QuartileRow {
                variable: variable.to_string(),
                class: q + 1,
                lower: cuts[q],
                upper: cuts[q + 1],
                category: c.clone(),
                n_units: n,
                proportion: if total > 0.0 { wc / total } else { 0.0 },
            });
        }
    }
    Ok(rows)
}

/// One design column in the coefficient plane and the rotated plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRow {
    /// LHU/region level for group columns, the column name otherwise.
    pub label: String,
    pub role: ColumnRole,
    pub region: Option<String>,
    pub b_neg: f64,
    pub b_zero: f64,
    pub positivity: f64,
    pub neutrality: f64,
    pub quadrant: String,
    pub positivity_lo: Option<f64>,
    pub positivity_hi: Option<f64>,
    pub neutrality_lo: Option<f64>,
    pub neutrality_hi: Option<f64>,
}

/// Coefficient pairs of every column of a three-category fit with their
/// rotated coordinates, quadrant and optional bootstrap bands.
pub fn plane_table(fit: &FitDocument, bands: Option<&[RotationBand]>) -> Result<Vec<PlaneRow>> {
    let labels: Vec<String> = fit
        .columns
        .iter()
        .map(|c| match (&c.role, &c.level) {
            (ColumnRole::Group, Some(level)) => level.clone(),
            _ => c.name.clone(),
        })
        .collect();
    if let Some(b) = bands {
        if b.len() != labels.len() {
            return Err(Error::Dimension(format!("{} bands for {} columns", b.len(), labels.len())));
        }
    }
    let pairs = pairs_from_coefficients(&fit.coefficient_set()?, &labels)?;
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(p, pair)| {
            let rot = to_positivity_neutrality(pair);
            let band = bands.map(|b| b[p]);
            let role = fit.columns[p].role;
            PlaneRow {
                label: pair.label.clone(),
                role,
                region: (role == ColumnRole::Group)
                    .then(|| fit.group_regions.get(&pair.label).cloned())
                    .flatten(),
                b_neg: pair.b_neg,
                b_zero: pair.b_zero,
                positivity: rot.positivity,
                neutrality: rot.neutrality,
                quadrant: classify_quadrant(pair, QUADRANT_TOLERANCE).as_str().to_string(),
                positivity_lo: band.map(|b| b.positivity.0),
                positivity_hi: band.map(|b| b.positivity.1),
                neutrality_lo: band.map(|b| b.neutrality.0),
                neutrality_hi: band.map(|b| b.neutrality.1),
            }
        })
        .collect())
}

/// Which rows of a plane table a ranking covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingScope {
    /// Group indicators (LHUs).
    Groups,
    /// Main and interaction columns.
    Covariates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub axis: RotationAxis,
    /// 1 for the largest value.
    pub rank: usize,
    pub label: String,
    pub region: Option<String>,
    pub value: f64,
    pub band: Option<(f64, f64)>,
}

/// Rows in `scope` ranked in decreasing order on each rotated axis.
pub fn ranking_table(rows: &[PlaneRow], scope: RankingScope) -> Result<Vec<RankingRow>> {
    let chosen: Vec<&PlaneRow> = rows
        .iter()
        .filter(|r| (r.role == ColumnRole::Group) == (scope == RankingScope::Groups))
        .collect();
    let rotated: Vec<RotatedPair> = chosen
        .iter()
        .map(|r| RotatedPair {
            positivity: r.positivity,
            neutrality: r.neutrality,
            label: r.label.clone(),
        })
        .collect();
    let bands: Option<Vec<RotationBand>> = chosen
        .iter()
        .map(|r| {
            Some(RotationBand {
                positivity: (r.positivity_lo?, r.positivity_hi?),
                neutrality: (r.neutrality_lo?, r.neutrality_hi?),
            })
        })
        .collect();
    let region: BTreeMap<&str, Option<String>> = chosen.iter().map(|r| (r.label.as_str(), r.region.clone())).collect();
    let mut out = Vec::new();
    for axis in [RotationAxis::Positivity, RotationAxis::Neutrality] {
        for (i, e) in rank_effects(&rotated, axis, true, bands.as_deref())?.into_iter().enumerate() {
            out.push(RankingRow {
                axis,
                rank: i + 1,
                region: region[e.rotated.label.as_str()].clone(),
                value: match axis {
                    RotationAxis::Positivity => e.rotated.positivity,
                    RotationAxis::Neutrality => e.rotated.neutrality,
                },
                label: e.rotated.label,
                band: e.band,
            });
        }
    }
    Ok(out)
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new())
}

fn finish(comments: &[String], w: csv::Writer<Vec<u8>>) -> Result<String> {
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut out: String = comments.iter().map(|c| format!("# {c}\n")).collect();
    out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
    Ok(out)
}

/// Serializes `rows` as CSV preceded by `# ` comment lines.
pub fn rows_to_csv<T: Serialize>(rows: &[T], comments: &[String]) -> Result<String> {
    let mut w = writer();
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    finish(comments, w)
}

/// Ranking CSV; the band columns appear only when every row has a band.
pub fn ranking_csv(rows: &[RankingRow], comments: &[String]) -> Result<String> {
    let banded = !rows.is_empty() && rows.iter().all(|r| r.band.is_some());
    let mut w = writer();
    let mut header = vec!["axis", "rank", "label", "region", "value"];
    if banded {
        header.extend(["lower", "upper"]);
    }
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        let axis = match r.axis {
            RotationAxis::Positivity => "positivity",
            RotationAxis::Neutrality => "neutrality",
        };
        let mut rec = vec![
            axis.to_string(),
            r.rank.to_string(),
            r.label.clone(),
            r.region.clone().unwrap_or_default(),
            r.value.to_string(),
        ];
        if let (true, Some((lo, hi))) = (banded, r.band) {
            rec.extend([lo.to_string(), hi.to_string()]);
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    let mut comments = comments.to_vec();
    if !banded {
        comments.push("bands: none (no bootstrap ensemble supplied)".into());
    }
    finish(&comments, w)
}

/// Parses a plane table written by [`rows_to_csv`].
pub fn read_plane_table(text: &str) -> Result<Vec<PlaneRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match line {
        Some(line) => Error::Parse { line, detail: e.to_string() },
        None => Error::Schema(e.to_string()),
    }
}

//! Expansion of survey records into a numeric design matrix.
//!
//! Column layout is fixed: main-effect columns in variable order, then the
//! products of every pair of main columns that come from distinct variables
//! (lexicographic in main-column index), then one indicator per group label
//! in sorted label order.
//!
//! Multi-level categoricals use reference coding (first declared level is the
//! reference). Binary variables give a single 0/1 column. The group block is
//! a full one-hot coding and never enters interactions.

use std::collections::BTreeSet;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{OrdinalDataset, Record, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    None,
    Standardize,
    MinMax,
}

impl std::str::FromStr for Scaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Scaling::None),
            "standardize" => Ok(Scaling::Standardize),
            "min-max" | "minmax" => Ok(Scaling::MinMax),
            other => Err(Error::Config(format!("unknown scaling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VariableKind {
    /// Two levels; the second is coded 1.
    Binary { levels: [String; 2] },
    Categorical { levels: Vec<String> },
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
    /// Only numeric variables are scaled.
    #[serde(default = "default_scaling")]
    pub scaling: Scaling,
}

fn default_scaling() -> Scaling {
    Scaling::Standardize
}

impl VariableSpec {
    pub fn binary(name: &str, off: &str, on: &str) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Binary {
                levels: [off.into(), on.into()],
            },
            scaling: Scaling::None,
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
            },
            scaling: Scaling::None,
        }
    }

    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Numeric,
            scaling: Scaling::Standardize,
        }
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let VariableKind::Categorical { levels } = &self.kind {
            if levels.len() < 2 {
                return Err(Error::Schema(format!("`{}` declares fewer than 2 levels", self.name)));
            }
            let distinct: BTreeSet<_> = levels.iter().collect();
            if distinct.len() != levels.len() {
                return Err(Error::Schema(format!("`{}` declares duplicate levels", self.name)));
            }
        }
        if let VariableKind::Binary { levels } = &self.kind {
            if levels[0] == levels[1] {
                return Err(Error::Schema(format!("`{}` declares identical binary levels", self.name)));
            }
        }
        Ok(())
    }

    /// Number of main-effect columns this variable contributes.
    pub fn n_columns(&self) -> usize {
        match &self.kind {
            VariableKind::Binary { .. } | VariableKind::Numeric => 1,
            VariableKind::Categorical { levels } => levels.len() - 1,
        }
    }
}

/// Which label, if any, supplies the indicator block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBlock {
    None,
    Lhu,
    Region,
}

impl GroupBlock {
    fn label<'a>(&self, record: &'a Record) -> Option<&'a String> {
        match self {
            GroupBlock::None => None,
            GroupBlock::Lhu => record.lhu.as_ref(),
            GroupBlock::Region => record.region.as_ref(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            GroupBlock::None => "none",
            GroupBlock::Lhu => crate::data::LHU_KEY,
            GroupBlock::Region => crate::data::REGION_KEY,
        }
    }
}

impl std::str::FromStr for GroupBlock {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(GroupBlock::None),
            "lhu" => Ok(GroupBlock::Lhu),
            "region" => Ok(GroupBlock::Region),
            other => Err(Error::Config(format!("unknown group block `{other}`"))),
        }
    }
}

impl std::fmt::Display for GroupBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Main,
    Interaction,
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub role: ColumnRole,
    /// Source variables: one for main columns, two distinct ones for
    /// interactions, the group key for indicators.
    pub sources: Vec<String>,
    pub level: Option<String>,
    /// Main-column indices multiplied to form an interaction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<usize>,
    #[serde(default)]
    pub numeric: bool,
}

/// Affine map `x -> (x - location) / scale` applied to a main column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnTransform {
    pub location: f64,
    pub scale: f64,
    pub mode: Scaling,
}

impl ColumnTransform {
    pub const IDENTITY: Self = Self {
        location: 0.0,
        scale: 1.0,
        mode: Scaling::None,
    };

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }
}

/// Everything needed to rebuild the same columns for new records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMetadata {
    pub variables: Vec<VariableSpec>,
    pub group: GroupBlock,
    pub group_levels: Vec<String>,
    pub interactions: bool,
    /// One entry per main column.
    pub transforms: Vec<ColumnTransform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub values: Array2<f64>,
    pub columns: Vec<ColumnMeta>,
    pub scaling: ScalingMetadata,
}

impl DesignMatrix {
    /// Wraps a raw numeric matrix; columns are named `x1..xP` and treated as
    /// unscaled main effects.
    pub fn from_values(values: Array2<f64>) -> Self {
        let p = values.ncols();
        let columns = (0..p)
            .map(|j| ColumnMeta {
                name: format!("x{}", j + 1),
                role: ColumnRole::Main,
                sources: vec![format!("x{}", j + 1)],
                level: None,
                parents: Vec::new(),
                numeric: true,
            })
            .collect();
        Self {
            values,
            columns,
            scaling: ScalingMetadata {
                variables: Vec::new(),
                group: GroupBlock::None,
                group_levels: Vec::new(),
                interactions: false,
                transforms: vec![ColumnTransform::IDENTITY; p],
            },
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_main(&self) -> usize {
        self.columns.iter().filter(|c| c.role == ColumnRole::Main).count()
    }

    pub fn group_columns(&self) -> Vec<usize> {
        self.indices_with(ColumnRole::Group)
    }

    pub fn indices_with(&self, role: ColumnRole) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Rows `indices` of this matrix with the same metadata.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
            columns: self.columns.clone(),
            scaling: self.scaling.clone(),
        }
    }
}

/// How to turn a dataset into a design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub group: GroupBlock,
    pub interactions: bool,
    /// Overrides every numeric variable's declared scaling when set.
    pub scaling: Option<Scaling>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            group: GroupBlock::Lhu,
            interactions: true,
            scaling: None,
        }
    }
}

impl DesignSpec {
    /// Builds and scales the design from `data`, estimating scaling
    /// statistics on these rows.
    pub fn fit(&self, data: &OrdinalDataset) -> Result<DesignMatrix> {
        let raw = build_design_with(data.records(), data.variables(), self.group, self.interactions)?;
        apply_scaling(&raw, self.scaling)
    }

    /// Rebuilds the design for `data` with statistics from `metadata`.
    pub fn transfer(&self, data: &OrdinalDataset, metadata: &ScalingMetadata) -> Result<(DesignMatrix, TransferReport)> {
        transfer_scaling(data.records(), data.variables(), metadata)
    }
}

/// Diagnostics from [`transfer_scaling`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// `(column, count)` of min-max scaled values falling outside `[0, 1]`.
    pub out_of_range: Vec<(String, usize)>,
    /// Rows whose group label was not seen when the metadata was built; their
    /// indicator block is all zeros.
    pub unseen_groups: usize,
}

fn main_block(records: &[Record], specs: &[VariableSpec]) -> Result<(Array2<f64>, Vec<ColumnMeta>)> {
    for s in specs {
        s.validate()?;
    }
    let mut meta = Vec::new();
    for s in specs {
        match &s.kind {
            VariableKind::Binary { levels } => meta.push(ColumnMeta {
                name: s.name.clone(),
                role: ColumnRole::Main,
                sources: vec![s.name.clone()],
                level: Some(levels[1].clone()),
                parents: Vec::new(),
                numeric: false,
            }),
            VariableKind::Categorical { levels } => {
                for l in &levels[1..] {
                    meta.push(ColumnMeta {
                        name: format!("{}={}", s.name, l),
                        role: ColumnRole::Main,
                        sources: vec![s.name.clone()],
                        level: Some(l.clone()),
                        parents: Vec::new(),
                        numeric: false,
                    });
                }
            }
            VariableKind::Numeric => meta.push(ColumnMeta {
                name: s.name.clone(),
                role: ColumnRole::Main,
                sources: vec![s.name.clone()],
                level: None,
                parents: Vec::new(),
                numeric: true,
            }),
        }
    }
    let mut values = Array2::<f64>::zeros((records.len(), meta.len()));
    for (i, rec) in records.iter().enumerate() {
        if rec.values.len() != specs.len() {
            return Err(Error::Schema(format!(
                "record {i} has {} values, expected {}",
                rec.values.len(),
                specs.len()
            )));
        }
        let mut col = 0;
        for (s, v) in specs.iter().zip(&rec.values) {
            match (&s.kind, v) {
                (_, Value::Missing) => {
                    return Err(Error::Schema(format!("record {i}: missing value for `{}`", s.name)))
                }
                (VariableKind::Binary { levels }, Value::Level(l)) => {
                    values[[i, col]] = if *l == levels[1] {
                        1.0
                    } else if *l == levels[0] {
                        0.0
                    } else {
                        return Err(Error::Schema(format!("record {i}: unknown level `{l}` for `{}`", s.name)));
                    };
                    col += 1;
                }
                (VariableKind::Categorical { levels }, Value::Level(l)) => {
                    let pos = levels
                        .iter()
                        .position(|x| x == l)
                        .ok_or_else(|| Error::Schema(format!("record {i}: unknown level `{l}` for `{}`", s.name)))?;
                    if pos > 0 {
                        values[[i, col + pos - 1]] = 1.0;
                    }
                    col += levels.len() - 1;
                }
                (VariableKind::Numeric, Value::Number(x)) => {
                    if !x.is_finite() {
                        return Err(Error::Schema(format!("record {i}: non-finite value for `{}`", s.name)));
                    }
                    values[[i, col]] = *x;
                    col += 1;
                }
                (_, other) => {
                    return Err(Error::Schema(format!(
                        "record {i}: value {other:?} does not match the kind of `{}`",
                        s.name
                    )))
                }
            }
        }
    }
    Ok((values, meta))
}

fn interaction_meta(main: &[ColumnMeta]) -> Vec<ColumnMeta> {
    let mut out = Vec::new();
    for a in 0..main.len() {
        for b in a + 1..main.len() {
            if main[a].sources[0] == main[b].sources[0] {
                continue;
            }
            out.push(ColumnMeta {
                name: format!("{}:{}", main[a].name, main[b].name),
                role: ColumnRole::Interaction,
                sources: vec![main[a].sources[0].clone(), main[b].sources[0].clone()],
                level: None,
                parents: vec![a, b],
                numeric: false,
            });
        }
    }
    out
}

fn group_meta(group: GroupBlock, levels: &[String]) -> Vec<ColumnMeta> {
    levels
        .iter()
        .map(|l| ColumnMeta {
            name: format!("{}={}", group.name(), l),
            role: ColumnRole::Group,
            sources: vec![group.name().to_string()],
            level: Some(l.clone()),
            parents: Vec::new(),
            numeric: false,
        })
        .collect()
}

/// Writes main, interaction and group blocks into one matrix. `main` must
/// already be scaled.
fn assemble(
    records: &[Record],
    main: Array2<f64>,
    main_meta: Vec<ColumnMeta>,
    metadata: ScalingMetadata,
) -> Result<(DesignMatrix, usize)> {
    let n = records.len();
    let inter = if metadata.interactions {
        interaction_meta(&main_meta)
    } else {
        Vec::new()
    };
    let groups = group_meta(metadata.group, &metadata.group_levels);
    let m = main_meta.len();
    let p = m + inter.len() + groups.len();
    let mut values = Array2::<f64>::zeros((n, p));
    values.slice_mut(s![.., ..m]).assign(&main);
    for (k, meta) in inter.iter().enumerate() {
        let (a, b) = (meta.parents[0], meta.parents[1]);
        let col = &main.column(a) * &main.column(b);
        values.column_mut(m + k).assign(&col);
    }
    let mut unseen = 0;
    if metadata.group != GroupBlock::None {
        let offset = m + inter.len();
        for (i, rec) in records.iter().enumerate() {
            let label = metadata.group.label(rec).ok_or_else(|| {
                Error::Schema(format!("record {i} has no `{}` label", metadata.group.name()))
            })?;
            match metadata.group_levels.binary_search(label) {
                Ok(pos) => values[[i, offset + pos]] = 1.0,
                Err(_) => unseen += 1,
            }
        }
    }
    let mut columns = main_meta;
    columns.extend(inter);
    columns.extend(groups);
    Ok((
        DesignMatrix {
            values,
            columns,
            scaling: metadata,
        },
        unseen,
    ))
}

/// Unscaled design: main effects, all two-way interactions between distinct
/// variables and, when `include_lhu`, the LHU indicator block.
pub fn build_design(records: &[Record], specs: &[VariableSpec], include_lhu: bool) -> Result<DesignMatrix> {
    let group = if include_lhu { GroupBlock::Lhu } else { GroupBlock::None };
    build_design_with(records, specs, group, true)
}

pub fn build_design_with(
    records: &[Record],
    specs: &[VariableSpec],
    group: GroupBlock,
    interactions: bool,
) -> Result<DesignMatrix> {
    let (main, main_meta) = main_block(records, specs)?;
    let mut levels = BTreeSet::new();
    if group != GroupBlock::None {
        for (i, rec) in records.iter().enumerate() {
            let label = group
                .label(rec)
                .ok_or_else(|| Error::Schema(format!("record {i} has no `{}` label", group.name())))?;
            levels.insert(label.clone());
        }
    }
    let metadata = ScalingMetadata {
        variables: specs.to_vec(),
        group,
        group_levels: levels.into_iter().collect(),
        interactions,
        transforms: vec![ColumnTransform::IDENTITY; main_meta.len()],
    };
    Ok(assemble(records, main, main_meta, metadata)?.0)
}

fn column_transform(values: ndarray::ArrayView1<f64>, mode: Scaling, name: &str) -> Result<ColumnTransform> {
    let n = values.len();
    match mode {
        Scaling::None => Ok(ColumnTransform::IDENTITY),
        Scaling::Standardize => {
            if n < 2 {
                return Err(Error::DegenerateColumn(name.into()));
            }
            let mean = values.sum() / n as f64;
            let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
            let sd = (ss / (n as f64 - 1.0)).sqrt();
            if !(sd > 0.0) {
                return Err(Error::DegenerateColumn(name.into()));
            }
            Ok(ColumnTransform {
                location: mean,
                scale: sd,
                mode,
            })
        }
        Scaling::MinMax => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Err(Error::DegenerateColumn(name.into()));
            }
            Ok(ColumnTransform {
                location: lo,
                scale: hi - lo,
                mode,
            })
        }
    }
}

fn rebuild_interactions(values: &mut Array2<f64>, columns: &[ColumnMeta]) {
    for (k, meta) in columns.iter().enumerate() {
        if meta.role == ColumnRole::Interaction {
            let col = &values.column(meta.parents[0]) * &values.column(meta.parents[1]);
            values.column_mut(k).assign(&col);
        }
    }
}

/// Scales numeric main-effect columns and recomputes the interactions from
/// the scaled parents. `mode` overrides each variable's declared scaling.
pub fn apply_scaling(matrix: &DesignMatrix, mode: Option<Scaling>) -> Result<DesignMatrix> {
    let mut out = matrix.clone();
    for (k, meta) in matrix.columns.iter().enumerate() {
        if meta.role != ColumnRole::Main || !meta.numeric {
            continue;
        }
        let declared = matrix
            .scaling
            .variables
            .iter()
            .find(|v| v.name == meta.sources[0])
            .map(|v| v.scaling)
            .unwrap_or(Scaling::None);
        let mode = mode.unwrap_or(declared);
        let t = column_transform(matrix.values.column(k), mode, &meta.name)?;
        if t == ColumnTransform::IDENTITY {
            continue;
        }
        out.values.column_mut(k).mapv_inplace(|x| t.apply(x));
        let prev = matrix.scaling.transforms[k];
        out.scaling.transforms[k] = ColumnTransform {
            location: prev.location + prev.scale * t.location,
            scale: prev.scale * t.scale,
            mode: t.mode,
        };
    }
    rebuild_interactions(&mut out.values, &out.columns);
    Ok(out)
}

/// Builds the design for `new_records` using stored statistics only.
pub fn transfer_scaling(
    new_records: &[Record],
    specs: &[VariableSpec],
    metadata: &ScalingMetadata,
) -> Result<(DesignMatrix, TransferReport)> {
    if specs != metadata.variables.as_slice() {
        return Err(Error::Schema("variable specs differ from the scaling metadata".into()));
    }
    let (mut main, main_meta) = main_block(new_records, specs)?;
    if metadata.transforms.len() != main_meta.len() {
        return Err(Error::Schema(format!(
            "metadata has {} column transforms, design has {} main columns",
            metadata.transforms.len(),
            main_meta.len()
        )));
    }
    let mut report = TransferReport::default();
    for (k, t) in metadata.transforms.iter().enumerate() {
        if *t == ColumnTransform::IDENTITY {
            continue;
        }
        main.column_mut(k).mapv_inplace(|x| t.apply(x));
        if t.mode == Scaling::MinMax {
            let count = main.column(k).iter().filter(|&&v| !(0.0..=1.0).contains(&v)).count();
            if count > 0 {
                report.out_of_range.push((main_meta[k].name.clone(), count));
            }
        }
    }
    let (design, unseen) = assemble(new_records, main, main_meta, metadata.clone())?;
    report.unseen_groups = unseen;
    Ok((design, report))
}

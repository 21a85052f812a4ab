//! Delimited survey files, record schemas and JSON documents for fits and
//! bootstrap ensembles.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::{OrdinalDataset, Record, Value};
use crate::design::{ColumnMeta, DesignMatrix, GroupBlock, ScalingMetadata, VariableKind, VariableSpec};
use crate::error::{Error, Result};
use crate::fit::{ModelFit, Restriction};
use crate::inference::BootstrapEnsemble;
use crate::model::CoefficientSet;
use crate::penalty::HyperParams;

/// Column layout of a survey extract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSchema {
    /// Column holding the ordinal response.
    pub response: String,
    /// Response codes in increasing order; rows with any other code are
    /// dropped and counted.
    pub codes: Vec<String>,
    pub lhu: Option<String>,
    pub region: Option<String>,
    pub weight: Option<String>,
    #[serde(default)]
    pub variables: Vec<VariableSpec>,
}

impl RecordSchema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: Self = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.codes.len() < 3 {
            return Err(Error::Schema(format!(
                "the response needs at least 3 ordered codes, got {}",
                self.codes.len()
            )));
        }
        let mut names: Vec<&str> = vec![&self.response];
        names.extend(self.lhu.as_deref());
        names.extend(self.region.as_deref());
        names.extend(self.weight.as_deref());
        names.extend(self.variables.iter().map(|v| v.name.as_str()));
        let mut sorted = names.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Schema(format!("column `{}` is declared twice", w[0])));
        }
        self.variables.iter().try_for_each(VariableSpec::validate)
    }

    /// Synthetic-population layout: response `y`, columns `lhu`, `region`,
    /// then the variables.
    pub fn for_variables(codes: Vec<String>, variables: Vec<VariableSpec>) -> Self {
        Self {
            response: "y".into(),
            codes,
            lhu: Some(crate::data::LHU_KEY.into()),
            region: Some(crate::data::REGION_KEY.into()),
            weight: None,
            variables,
        }
    }
}

/// Row accounting of [`load_dataset`]; `rows_in = rows_used + rows_dropped`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_in: usize,
    pub rows_used: usize,
    pub rows_dropped: usize,
    /// Dropped rows by response code.
    pub dropped_codes: BTreeMap<String, usize>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("declared column `{name}` is missing from the header")))
}

fn parse_value(spec: &VariableSpec, raw: &str, line: usize) -> Result<Value> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(Error::Parse {
            line,
            detail: format!("missing value for `{}`", spec.name),
        });
    }
    match &spec.kind {
        VariableKind::Numeric => raw.parse::<f64>().map(Value::Number).map_err(|e| Error::Parse {
            line,
            detail: format!("`{}`: {e}", spec.name),
        }),
        VariableKind::Binary { levels } if !levels.iter().any(|l| l == raw) => Err(Error::Schema(format!(
            "line {line}: unknown level `{raw}` for `{}`",
            spec.name
        ))),
        VariableKind::Categorical { levels } if !levels.iter().any(|l| l == raw) => Err(Error::Schema(format!(
            "line {line}: unknown level `{raw}` for `{}`",
            spec.name
        ))),
        _ => Ok(Value::Level(raw.to_string())),
    }
}

/// Reads a comma-separated file with a header row into a dataset.
pub fn read_dataset<R: std::io::Read>(reader: R, schema: &RecordSchema) -> Result<(OrdinalDataset, LoadReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let response_col = column_index(&headers, &schema.response)?;
    let lhu_col = schema.lhu.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let region_col = schema.region.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let weight_col = schema.weight.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let var_cols = schema
        .variables
        .iter()
        .map(|v| column_index(&headers, &v.name))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    let mut responses = Vec::new();
    let mut weights = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        report.rows_in += 1;
        let code = row[response_col].trim();
        let Some(k) = schema.codes.iter().position(|c| c == code) else {
            report.rows_dropped += 1;
            *report.dropped_codes.entry(code.to_string()).or_default() += 1;
            continue;
        };
        let values = schema
            .variables
            .iter()
            .zip(&var_cols)
            .map(|(spec, &c)| parse_value(spec, &row[c], line))
            .collect::<Result<Vec<_>>>()?;
        let label = |col: Option<usize>| -> Result<Option<String>> {
            match col {
                None => Ok(None),
                Some(c) if row[c].trim().is_empty() => Err(Error::Parse {
                    line,
                    detail: format!("missing label in column `{}`", &headers[c]),
                }),
                Some(c) => Ok(Some(row[c].trim().to_string())),
            }
        };
        let mut record = Record::new(values);
        record.lhu = label(lhu_col)?;
        record.region = label(region_col)?;
        if let Some(c) = weight_col {
            let w: f64 = row[c].trim().parse().map_err(|e| Error::Parse {
                line,
                detail: format!("weight: {e}"),
            })?;
            weights.push(w);
        }
        records.push(record);
        responses.push(k);
    }
    report.rows_used = responses.len();
    let weights = weight_col.map(|_| weights);
    let data = OrdinalDataset::new(schema.codes.clone(), schema.variables.clone(), records, responses, weights)?;
    Ok((data, report))
}

pub fn load_dataset(path: &Path, schema: &RecordSchema) -> Result<(OrdinalDataset, LoadReport)> {
    read_dataset(std::fs::File::open(path)?, schema)
}

/// Writes `data` in the layout of `schema`; reading the output back with the
/// same schema reproduces `data`.
pub fn write_dataset<W: Write>(writer: W, data: &OrdinalDataset, schema: &RecordSchema) -> Result<()> {
    if schema.variables != data.variables() {
        return Err(Error::Schema("dataset variables differ from the schema".into()));
    }
    if schema.codes != data.categories() {
        return Err(Error::Schema("dataset categories differ from the schema codes".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec![&schema.response];
    header.extend(schema.lhu.as_deref());
    header.extend(schema.region.as_deref());
    header.extend(schema.weight.as_deref());
    header.extend(schema.variables.iter().map(|v| v.name.as_str()));
    w.write_record(&header)?;
    for (i, rec) in data.records().iter().enumerate() {
        let mut row = vec![data.categories()[data.responses()[i]].clone()];
        if schema.lhu.is_some() {
            row.push(rec.lhu.clone().unwrap_or_default());
        }
        if schema.region.is_some() {
            row.push(rec.region.clone().unwrap_or_default());
        }
        if schema.weight.is_some() {
            row.push(format!("{:?}", data.weights()[i]));
        }
        row.extend(rec.values.iter().map(Value::render));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub const FIT_FORMAT: &str = "spordinal-fit";
pub const ENSEMBLE_FORMAT: &str = "spordinal-ensemble";
pub const FORMAT_VERSION: u32 = 1;

/// Coefficients of one design column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub column: String,
    pub shared: f64,
    pub specific: Vec<f64>,
    /// `shared + specific[j]` per margin.
    pub effective: Vec<f64>,
}

/// A fitted model with the column metadata needed to apply it to new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    pub format: String,
    pub version: u32,
    pub categories: Vec<String>,
    pub hyper: HyperParams,
    pub restriction: Restriction,
    pub thresholds: Vec<f64>,
    pub coefficients: Vec<CoefficientRow>,
    pub columns: Vec<ColumnMeta>,
    pub design: ScalingMetadata,
    pub converged: bool,
    pub n_iterations: usize,
    pub separation: bool,
    pub warm_started: bool,
    pub objective_trace: Vec<f64>,
    /// Region of every LHU level, when the group block is LHU.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub group_regions: BTreeMap<String, String>,
    #[serde(default)]
    pub manifest: Option<serde_json::Value>,
}

impl FitDocument {
    pub fn new(fit: &ModelFit, design: &DesignMatrix, categories: &[String]) -> Result<Self> {
        if design.n_columns() != fit.coefs.n_columns() {
            return Err(Error::Dimension(format!(
                "design has {} columns, fit {}",
                design.n_columns(),
                fit.coefs.n_columns()
            )));
        }
        let g = fit.coefs.effective();
        let coefficients = design
            .columns
            .iter()
            .enumerate()
            .map(|(p, c)| CoefficientRow {
                column: c.name.clone(),
                shared: fit.coefs.shared[p],
                specific: fit.coefs.specific.row(p).to_vec(),
                effective: g.row(p).to_vec(),
            })
            .collect();
        Ok(Self {
            format: FIT_FORMAT.into(),
            version: FORMAT_VERSION,
            categories: categories.to_vec(),
            hyper: fit.hyper,
            restriction: fit.restriction,
            thresholds: fit.coefs.thresholds.clone(),
            coefficients,
            columns: design.columns.clone(),
            design: design.scaling.clone(),
            converged: fit.converged,
            n_iterations: fit.n_iterations,
            separation: fit.separation,
            warm_started: fit.warm_started,
            objective_trace: fit.objective_trace.clone(),
            group_regions: BTreeMap::new(),
            manifest: None,
        })
    }

    /// Records the region of every LHU in `data` when the group block is LHU.
    pub fn attach_group_regions(&mut self, data: &OrdinalDataset) {
        if self.design.group != GroupBlock::Lhu {
            return;
        }
        for r in data.records() {
            if let (Some(l), Some(g)) = (&r.lhu, &r.region) {
                self.group_regions.entry(l.clone()).or_insert_with(|| g.clone());
            }
        }
    }

    pub fn coefficient_set(&self) -> Result<CoefficientSet> {
        let j = self.thresholds.len();
        let p = self.coefficients.len();
        let shared = Array1::from_iter(self.coefficients.iter().map(|r| r.shared));
        let mut specific = Array2::zeros((p, j));
        for (i, r) in self.coefficients.iter().enumerate() {
            if r.specific.len() != j {
                return Err(Error::Dimension(format!("column `{}` has {} margins", r.column, r.specific.len())));
            }
            for (m, v) in r.specific.iter().enumerate() {
                specific[[i, m]] = *v;
            }
        }
        CoefficientSet::new(self.thresholds.clone(), shared, specific)
    }

    pub fn model_fit(&self) -> Result<ModelFit> {
        Ok(ModelFit {
            coefs: self.coefficient_set()?,
            hyper: self.hyper,
            restriction: self.restriction,
            objective_trace: self.objective_trace.clone(),
            converged: self.converged,
            n_iterations: self.n_iterations,
            separation: self.separation,
            warm_started: self.warm_started,
        })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != FIT_FORMAT {
            return Err(Error::Schema(format!("expected a `{FIT_FORMAT}` document, got `{}`", doc.format)));
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub format: String,
    pub version: u32,
    pub columns: Vec<ColumnMeta>,
    pub ensemble: BootstrapEnsemble,
    #[serde(default)]
    pub manifest: Option<serde_json::Value>,
}

impl EnsembleDocument {
    pub fn new(ensemble: BootstrapEnsemble, columns: Vec<ColumnMeta>) -> Self {
        Self {
            format: ENSEMBLE_FORMAT.into(),
            version: FORMAT_VERSION,
            columns,
            ensemble,
            manifest: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != ENSEMBLE_FORMAT {
            return Err(Error::Schema(format!(
                "expected a `{ENSEMBLE_FORMAT}` document, got `{}`",
                doc.format
            )));
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Scaling;

    const SCHEMA: &str = r#"
response = "q1"
codes = ["negative", "neutral", "positive"]
lhu = "lhu"
weight = "w"

[[variables]]
name = "sex"
type = "binary"
levels = ["male", "female"]

[[variables]]
name = "age"
type = "categorical"
levels = ["18-34", "35-49", "50-69"]

[[variables]]
name = "pm25"
type = "numeric"
scaling = "min-max"
"#;

    #[test]
    fn schema_parses() {
        let s = RecordSchema::from_toml(SCHEMA).unwrap();
        assert_eq!(s.variables.len(), 3);
        assert_eq!(s.variables[2].scaling, Scaling::MinMax);
        assert_eq!(RecordSchema::from_toml(&s.to_toml().unwrap()).unwrap(), s);
    }

    #[test]
    fn loads_and_drops_out_of_scope_codes() {
        let schema = RecordSchema::from_toml(SCHEMA).unwrap();
        let text = "q1,lhu,w,sex,age,pm25\n\
                    negative,a,1.0,male,18-34,12.5\n\
                    dont_know,a,1.0,female,35-49,3\n\
                    positive,b,3.0,female,50-69,7\n\
                    neutral,b,2.0,male,35-49,9\n";
        let (d, r) = read_dataset(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!((r.rows_in, r.rows_used, r.rows_dropped), (4, 3, 1));
        assert_eq!(r.dropped_codes["dont_know"], 1);
        assert_eq!(d.responses(), &[0, 2, 1]);
        assert!((d.weights().iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_column_is_named() {
        let schema = RecordSchema::from_toml(SCHEMA).unwrap();
        let text = "q1,lhu,w,sex,age\nnegative,a,1,male,18-34\n";
        match read_dataset(text.as_bytes(), &schema) {
            Err(Error::Schema(msg)) => assert!(msg.contains("pm25")),
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let schema = RecordSchema::from_toml(SCHEMA).unwrap();
        let text = "q1,lhu,w,sex,age,pm25\nnegative,a,1,male,18-34,1\nneutral,a,1,male,18-34,oops\n";
        assert!(matches!(read_dataset(text.as_bytes(), &schema), Err(Error::Parse { line: 3, .. })));
        let text = "q1,lhu,w,sex,age,pm25\nnegative,a,1,male,18-34\n";
        assert!(matches!(read_dataset(text.as_bytes(), &schema), Err(Error::Parse { .. })));
        let text = "q1,lhu,w,sex,age,pm25\nnegative,a,1,other,18-34,1\n";
        assert!(matches!(read_dataset(text.as_bytes(), &schema), Err(Error::Schema(_))));
    }

    #[test]
    fn write_then_read_round_trips() {
        let schema = RecordSchema::from_toml(SCHEMA).unwrap();
        let text = "q1,lhu,w,sex,age,pm25\n\
                    negative,a,1.7,male,18-34,0.1\n\
                    positive,\"b, c\",3.0,female,50-69,0.30000000000000004\n\
                    neutral,b,2.0,male,35-49,9\n";
        let (d, _) = read_dataset(text.as_bytes(), &schema).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d, &schema).unwrap();
        let (back, _) = read_dataset(buf.as_slice(), &schema).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
    }

    #[test]
    fn shipped_schema_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/passi_reconstructed.toml");
        let s = RecordSchema::read(&path).unwrap();
        s.validate().unwrap();
        assert_eq!(s.codes.len(), 3);
        assert_eq!(s.variables.len(), 13);
    }
}

mod manifest;
mod settings;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spordinal::evaluation::{
    cross_validate, default_lambda_grid, default_model_family, default_rho_grid, grid_search, CvOptions,
};
use spordinal::inference::{bootstrap, decomposition_table, BootstrapOptions};
use spordinal::io::{load_dataset, write_atomic, write_dataset, EnsembleDocument, FitDocument, LoadReport, RecordSchema};
use spordinal::report::{
    plane_table, quartile_proportions, ranking_csv, ranking_table, read_plane_table, response_proportions,
    rows_to_csv, RankingScope,
};
use spordinal::rotation::rotation_bands;
use spordinal::synth::{generate, PopulationConfig, RandomTruth, TruthSpec};
use spordinal::{fit, DesignSpec, FitOptions, HyperParams, OrdinalDataset, Restriction, VariableKind};

use manifest::{digest_file, Manifest};
use settings::{split_list, Settings, UsageError};

#[derive(Parser, Debug)]
#[command(name = "spordinal", version)]
#[command(about = "Penalized semi-parallel ordinal regression for survey data")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic survey population with known coefficients.
    Synth(SynthArgs),
    /// Fit one model.
    Fit(FitArgs),
    /// Cross-validate the model family against the baselines.
    Cv(CvArgs),
    /// Cross-validate the semi-parallel model over a (lambda, rho) grid.
    Grid(GridArgs),
    /// Stratified bootstrap of a fit.
    Bootstrap(BootstrapArgs),
    /// Positivity/neutrality table of a three-category fit.
    Rotate(RotateArgs),
    /// Tidy data files behind the descriptive and coefficient figures.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Plain-text `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<String>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: Option<String>,
    /// TOML record schema.
    #[arg(long)]
    schema: Option<String>,
    /// Group indicator block: lhu, region or none.
    #[arg(long)]
    group: Option<String>,
    /// Pairwise interactions between covariates.
    #[arg(long)]
    interactions: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    lhu: Option<String>,
    #[arg(long)]
    regions: Option<String>,
    #[arg(long)]
    strata: Option<String>,
    #[arg(long)]
    binaries: Option<String>,
    #[arg(long)]
    numerics: Option<String>,
    #[arg(long)]
    interactions: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    thresholds: Option<String>,
    #[arg(long = "main-sd")]
    main_sd: Option<String>,
    #[arg(long = "interaction-sd")]
    interaction_sd: Option<String>,
    #[arg(long = "group-sd")]
    group_sd: Option<String>,
    #[arg(long = "nonparallel-sd")]
    nonparallel_sd: Option<String>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// none, parallel or nonparallel.
    #[arg(long)]
    restriction: Option<String>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// `default` or a comma list of: marginal, region-strata, lhu-strata,
    /// parallel, nonparallel, ridge, lasso, elastic-net.
    #[arg(long)]
    models: Option<String>,
    /// Penalty of the semi-parallel models.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long = "sex-column")]
    sex_column: Option<String>,
    #[arg(long = "age-column")]
    age_column: Option<String>,
    /// Weight validation averages by the survey weights.
    #[arg(long = "weighted-metrics")]
    weighted_metrics: Option<String>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    alpha: Option<String>,
    /// `default` or comma-separated values.
    #[arg(long = "lambda-grid")]
    lambda_grid: Option<String>,
    #[arg(long = "rho-grid")]
    rho_grid: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma list of stratum columns; defaults to lhu plus the sex and
    /// age-class columns when the schema has them.
    #[arg(long)]
    strata: Option<String>,
    #[arg(long)]
    level: Option<String>,
}

#[derive(Args, Debug)]
struct RotateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    fit: Option<String>,
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    level: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset (proportions, quartiles) or rotation table (plane, rankings).
    #[arg(long = "in")]
    input: Option<String>,
    /// proportions, quartiles, plane, lhu-ranking or covariate-ranking.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    schema: Option<String>,
    /// Grouping column for `proportions`.
    #[arg(long)]
    by: Option<String>,
    /// Numeric variable for `quartiles`; every numeric one when unset.
    #[arg(long)]
    variable: Option<String>,
}

const DEFAULT_FOLDS: &str = "5";
const DEFAULT_REPLICATES: &str = "1000";
const DEFAULT_ALPHA: &str = "0.5";
const DEFAULT_LAMBDA: &str = "1e-4";
const DEFAULT_RHO: &str = "1";
const DEFAULT_SEED: &str = "1";
const DEFAULT_LEVEL: &str = "0.95";

/// Shared state of one command run.
struct Run {
    command: &'static str,
    settings: Settings,
    out: PathBuf,
    inputs: BTreeMap<String, String>,
    notes: BTreeMap<String, serde_json::Value>,
    started: Instant,
}

impl Run {
    fn start(command: &'static str, common: &Common) -> Result<Self> {
        let mut settings = Settings::load(common.config.as_deref())?;
        if let Some(c) = &common.config {
            settings.optional::<String>("config", Some(&c.display().to_string()))?;
        }
        let out: PathBuf = settings.require("out", common.out.as_deref())?;
        let threads: usize = settings.get("threads", common.threads.as_deref(), "0")?;
        if threads > 0 {
            // Only the first configuration of the global pool takes effect.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            settings,
            out,
            inputs: BTreeMap::new(),
            notes: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    /// Resolves a required input path and records its digest.
    fn input(&mut self, key: &str, cli: Option<&str>) -> Result<PathBuf> {
        let path: PathBuf = self.settings.require(key, cli)?;
        let digest = digest_file(&path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(path)
    }

    fn optional_input(&mut self, key: &str, cli: Option<&str>) -> Result<Option<PathBuf>> {
        match self.settings.optional::<PathBuf>(key, cli)? {
            Some(path) => {
                let digest = digest_file(&path)?;
                self.inputs.insert(path.display().to_string(), digest);
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    fn load(&mut self, args: &DataArgs) -> Result<(OrdinalDataset, RecordSchema)> {
        let schema_path = self.input("schema", args.schema.as_deref())?;
        let schema = RecordSchema::read(&schema_path).with_context(|| format!("schema {}", schema_path.display()))?;
        let data_path = self.input("data", args.data.as_deref())?;
        let (data, report) = load_dataset(&data_path, &schema).with_context(|| format!("loading {}", data_path.display()))?;
        self.note_load(&report);
        Ok((data, schema))
    }

    fn note_load(&mut self, report: &LoadReport) {
        if report.rows_dropped > 0 {
            eprintln!(
                "dropped {} of {} rows with out-of-scope response codes",
                report.rows_dropped, report.rows_in
            );
        }
        self.notes.insert("load".into(), serde_json::to_value(report).expect("report serializes"));
    }

    fn design_spec(&mut self, args: &DataArgs) -> Result<DesignSpec> {
        Ok(DesignSpec {
            group: self.settings.get("group", args.group.as_deref(), "lhu")?,
            interactions: self.settings.get("interactions", args.interactions.as_deref(), "true")?,
            scaling: None,
        })
    }

    fn manifest(&self) -> Manifest {
        let (hashed, _) = self.settings.effective();
        Manifest::new(self.command, hashed, self.inputs.clone())
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        let path = self.out.join(name);
        write_atomic(&path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    /// Delimited or TOML output with the manifest as leading comments.
    fn write_commented(&self, name: &str, body: &str) -> Result<()> {
        self.write(name, &self.manifest().prefix(body))
    }

    /// Writes `<command>.manifest.json`, the only output that carries wall time.
    fn finish(self) -> Result<()> {
        for key in self.settings.unused_file_keys() {
            eprintln!("warning: config key `{key}` is not used by `{}`", self.command);
        }
        let (_, unhashed) = self.settings.effective();
        let mut doc = self.manifest().to_value();
        doc["run"] = json!({
            "settings": unhashed,
            "wall_time_ms": self.started.elapsed().as_millis() as u64,
            "notes": self.notes,
        });
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        self.write(&format!("{}.manifest.json", self.command), &text)
    }
}

fn hyper(run: &mut Run, alpha: Option<&str>, lambda: Option<&str>, rho: Option<&str>) -> Result<HyperParams> {
    let alpha = run.settings.get("alpha", alpha, DEFAULT_ALPHA)?;
    let lambda = run.settings.get("lambda", lambda, DEFAULT_LAMBDA)?;
    let rho = run.settings.get("rho", rho, DEFAULT_RHO)?;
    HyperParams::new(lambda, alpha, rho).map_err(|e| UsageError(e.to_string()).into())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut run = Run::start("synth", &a.common)?;
    let s = &mut run.settings;
    let base = PopulationConfig::default();
    let truth = RandomTruth::default();
    let config = PopulationConfig {
        n: s.get("n", a.n.as_deref(), &base.n.to_string())?,
        n_lhu: s.get("lhu", a.lhu.as_deref(), &base.n_lhu.to_string())?,
        n_regions: s.get("regions", a.regions.as_deref(), &base.n_regions.to_string())?,
        strata: s.get("strata", a.strata.as_deref(), "true")?,
        binaries: s.list("binaries", a.binaries.as_deref(), &base.binaries.join(","))?,
        numerics: s.list("numerics", a.numerics.as_deref(), &base.numerics.join(","))?,
        interactions: s.get("interactions", a.interactions.as_deref(), "true")?,
        truth: TruthSpec::Random(RandomTruth {
            thresholds: s.list("thresholds", a.thresholds.as_deref(), &join(&truth.thresholds))?,
            main: s.get("main-sd", a.main_sd.as_deref(), &truth.main.to_string())?,
            interaction: s.get("interaction-sd", a.interaction_sd.as_deref(), &truth.interaction.to_string())?,
            group: s.get("group-sd", a.group_sd.as_deref(), &truth.group.to_string())?,
            nonparallel: s.get("nonparallel-sd", a.nonparallel_sd.as_deref(), &truth.nonparallel.to_string())?,
        }),
        seed: s.get("seed", a.seed.as_deref(), DEFAULT_SEED)?,
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    let pop = generate(&config)?;
    let schema = RecordSchema::for_variables(pop.dataset.categories().to_vec(), pop.dataset.variables().to_vec());
    let mut data = Vec::new();
    write_dataset(&mut data, &pop.dataset, &schema)?;
    run.write_commented("data.csv", std::str::from_utf8(&data)?)?;
    run.write_commented("schema.toml", &schema.to_toml()?)?;
    let mut truth = FitDocument::new(&pop.truth_fit(), &pop.design, pop.dataset.categories())?;
    truth.attach_group_regions(&pop.dataset);
    truth.manifest = Some(run.manifest().to_value());
    run.write("truth.json", &(truth.to_json()? + "\n"))?;
    run.notes.insert("redrawn_units".into(), json!(pop.redrawn));
    run.finish()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mut run = Run::start("fit", &a.common)?;
    let (data, _) = run.load(&a.data)?;
    let spec = run.design_spec(&a.data)?;
    let hyper = hyper(&mut run, a.alpha.as_deref(), a.lambda.as_deref(), a.rho.as_deref())?;
    let restriction: Restriction = run.settings.get("restriction", a.restriction.as_deref(), "none")?;
    let design = spec.fit(&data)?;
    let options = FitOptions::default().with_restriction(restriction);
    let model = fit(&data, &design, &hyper, &options)?;
    if !model.converged {
        eprintln!("warning: fit stopped after {} iterations without converging", model.n_iterations);
    }
    let mut doc = FitDocument::new(&model, &design, data.categories())?;
    doc.attach_group_regions(&data);
    doc.manifest = Some(run.manifest().to_value());
    run.write("fit.json", &(doc.to_json()? + "\n"))?;
    run.write_commented("coefficients.csv", &coefficients_csv(&doc))?;
    run.notes.insert("converged".into(), json!(model.converged));
    run.finish()
}

fn coefficients_csv(doc: &FitDocument) -> String {
    let j = doc.thresholds.len();
    let mut out = String::from("column,role,shared");
    (0..j).for_each(|m| write!(out, ",specific_{m}").unwrap());
    (0..j).for_each(|m| write!(out, ",effective_{m}").unwrap());
    out.push('\n');
    for (m, c) in doc.thresholds.iter().enumerate() {
        writeln!(out, "threshold_{m},threshold,{c}{}", ",".repeat(2 * j)).unwrap();
    }
    for (row, meta) in doc.coefficients.iter().zip(&doc.columns) {
        let role = serde_json::to_value(meta.role).expect("role serializes");
        write!(out, "\"{}\",{},{}", row.column, role.as_str().unwrap_or(""), row.shared).unwrap();
        row.specific.iter().chain(&row.effective).for_each(|v| write!(out, ",{v}").unwrap());
        out.push('\n');
    }
    out
}

/// Keys accepted by `--models`, in the order of the default family.
const MODEL_KEYS: [&str; 8] = [
    "marginal",
    "region-strata",
    "lhu-strata",
    "parallel",
    "nonparallel",
    "ridge",
    "lasso",
    "elastic-net",
];

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let mut run = Run::start("cv", &a.common)?;
    let (data, _) = run.load(&a.data)?;
    let spec = run.design_spec(&a.data)?;
    let s = &mut run.settings;
    let folds: usize = s.get("folds", a.folds.as_deref(), DEFAULT_FOLDS)?;
    let seed: u64 = s.get("seed", a.seed.as_deref(), DEFAULT_SEED)?;
    let lambda: f64 = s.get("lambda", a.lambda.as_deref(), DEFAULT_LAMBDA)?;
    let rho: f64 = s.get("rho", a.rho.as_deref(), DEFAULT_RHO)?;
    let sex: String = s.get("sex-column", a.sex_column.as_deref(), "sex")?;
    let age: String = s.get("age-column", a.age_column.as_deref(), "age_class")?;
    let weighted: bool = s.get("weighted-metrics", a.weighted_metrics.as_deref(), "false")?;
    let selection: String = s.get("models", a.models.as_deref(), "default")?;
    let family = default_model_family(lambda, rho, &sex, &age);
    let models = if selection == "default" {
        family
    } else {
        split_list(&selection)
            .map(|key| {
                MODEL_KEYS
                    .iter()
                    .position(|k| *k == key)
                    .map(|i| family[i].clone())
                    .ok_or_else(|| anyhow!(UsageError(format!("unknown model `{key}`; known: {}", MODEL_KEYS.join(", ")))))
            })
            .collect::<Result<Vec<_>>>()?
    };
    if models.is_empty() {
        bail!(UsageError("--models selects no model".into()));
    }
    let options = CvOptions {
        weighted_metrics: weighted,
        ..CvOptions::default()
    };
    let report = cross_validate(&data, &spec, &models, folds, seed, &options)?;
    run.write_commented("cv_folds.csv", &report.to_csv())?;
    run.write_commented("cv_summary.csv", &rows_to_csv(&report.summary(), &[])?)?;
    run.write_commented("cv_summary.txt", &report.summary_text())?;
    print!("{}", report.summary_text());
    run.finish()
}

fn grid_values(s: &mut Settings, key: &str, cli: Option<&str>, default: Vec<f64>) -> Result<Vec<f64>> {
    let raw: String = s.get(key, cli, "default")?;
    if raw == "default" {
        return Ok(default);
    }
    s.list(key, Some(&raw), "")
}

fn cmd_grid(a: &GridArgs) -> Result<()> {
    let mut run = Run::start("grid", &a.common)?;
    let (data, _) = run.load(&a.data)?;
    let spec = run.design_spec(&a.data)?;
    let s = &mut run.settings;
    let alpha: f64 = s.get("alpha", a.alpha.as_deref(), DEFAULT_ALPHA)?;
    let lambdas = grid_values(s, "lambda-grid", a.lambda_grid.as_deref(), default_lambda_grid())?;
    let rhos = grid_values(s, "rho-grid", a.rho_grid.as_deref(), default_rho_grid())?;
    let folds: usize = s.get("folds", a.folds.as_deref(), DEFAULT_FOLDS)?;
    let seed: u64 = s.get("seed", a.seed.as_deref(), DEFAULT_SEED)?;
    let report = grid_search(&data, &spec, &lambdas, &rhos, alpha, folds, seed, &CvOptions::default())?;
    run.write_commented("grid.csv", &report.to_csv())?;
    for f in &report.failures {
        eprintln!("excluded lambda={} rho={} (fold {}): {}", f.lambda, f.rho, f.fold, f.error);
    }
    match report.best {
        Some(b) => println!("selected lambda={:e} rho={} alpha={}", b.lambda, b.rho, b.alpha),
        None => eprintln!("warning: every grid point failed"),
    }
    run.notes.insert("evaluated_points".into(), json!(report.points.len()));
    run.notes.insert("best".into(), json!(report.best));
    run.finish()
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Result<()> {
    let mut run = Run::start("bootstrap", &a.common)?;
    let (data, schema) = run.load(&a.data)?;
    let spec = run.design_spec(&a.data)?;
    let hyper = hyper(&mut run, a.alpha.as_deref(), a.lambda.as_deref(), a.rho.as_deref())?;
    let s = &mut run.settings;
    let replicates: usize = s.get("replicates", a.replicates.as_deref(), DEFAULT_REPLICATES)?;
    let seed: u64 = s.get("seed", a.seed.as_deref(), DEFAULT_SEED)?;
    let level: f64 = s.get("level", a.level.as_deref(), DEFAULT_LEVEL)?;
    let mut default_strata: Vec<&str> = Vec::new();
    if schema.lhu.is_some() {
        default_strata.push(spordinal::data::LHU_KEY);
    }
    default_strata.extend(
        ["sex", "age_class"]
            .into_iter()
            .filter(|c| schema.variables.iter().any(|v| v.name == *c)),
    );
    let strata: Vec<String> = s.list("strata", a.strata.as_deref(), &default_strata.join(","))?;
    let ensemble = bootstrap(&data, &spec, &hyper, replicates, seed, &BootstrapOptions::new(strata))?;
    if ensemble.unreliable {
        eprintln!(
            "warning: {} of {} replicates failed; intervals are unreliable",
            ensemble.failures.len(),
            ensemble.requested
        );
    }
    let design = spec.fit(&data)?;
    let decomposition = decomposition_table(&ensemble.full_fit.coefs, &ensemble.replicate_coefficients(), &design)?;
    run.write_commented("intervals.csv", &ensemble.summary_csv(level)?)?;
    run.write_commented("decomposition.csv", &rows_to_csv(&decomposition, &[])?)?;
    let mut doc = EnsembleDocument::new(ensemble, design.columns.clone());
    doc.manifest = Some(run.manifest().to_value());
    run.write("ensemble.json", &(doc.to_json()? + "\n"))?;
    run.finish()
}

fn cmd_rotate(a: &RotateArgs) -> Result<()> {
    let mut run = Run::start("rotate", &a.common)?;
    let fit_path = run.input("fit", a.fit.as_deref())?;
    let ensemble_path = run.optional_input("ensemble", a.ensemble.as_deref())?;
    let level: f64 = run.settings.get("level", a.level.as_deref(), DEFAULT_LEVEL)?;
    let doc = FitDocument::from_json(&read(&fit_path)?)?;
    let bands = match ensemble_path {
        Some(p) => {
            let ens = EnsembleDocument::from_json(&read(&p)?)?;
            let names: Vec<&str> = ens.columns.iter().map(|c| c.name.as_str()).collect();
            if names != doc.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>() {
                bail!("ensemble {} was built on different columns than the fit", p.display());
            }
            if ens.ensemble.replicates.is_empty() {
                eprintln!("warning: the ensemble has no replicates; writing the table without bands");
                run.notes.insert("bands".into(), json!("none: empty ensemble"));
                None
            } else {
                Some(rotation_bands(&ens.ensemble.replicate_coefficients(), level)?)
            }
        }
        None => None,
    };
    let rows = plane_table(&doc, bands.as_deref())?;
    run.write("rotation.csv", &rows_to_csv(&rows, &run.manifest().comments())?)?;
    run.finish()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("missing upstream artifact {}", path.display()))
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut run = Run::start("report", &a.common)?;
    let kind: String = run.settings.require("kind", a.kind.as_deref())?;
    let input = run.input("in", a.input.as_deref())?;
    let comments = run.manifest().comments();
    match kind.as_str() {
        "proportions" | "quartiles" => {
            let schema_path = run.input("schema", a.schema.as_deref())?;
            let schema = RecordSchema::read(&schema_path)?;
            let (data, load) = load_dataset(&input, &schema)?;
            run.note_load(&load);
            let comments = run.manifest().comments();
            let body = if kind == "proportions" {
                let by: String = run.settings.get("by", a.by.as_deref(), spordinal::data::REGION_KEY)?;
                rows_to_csv(&response_proportions(&data, &by)?, &comments)?
            } else {
                let numerics: Vec<String> = data
                    .variables()
                    .iter()
                    .filter(|v| matches!(v.kind, VariableKind::Numeric))
                    .map(|v| v.name.clone())
                    .collect();
                let chosen: Vec<String> = match run.settings.optional::<String>("variable", a.variable.as_deref())? {
                    Some(v) => vec![v],
                    None => numerics,
                };
                let mut rows = Vec::new();
                for v in &chosen {
                    rows.extend(quartile_proportions(&data, v)?);
                }
                rows_to_csv(&rows, &run.manifest().comments())?
            };
            run.write(&format!("{kind}.csv"), &body)?;
        }
        "plane" | "lhu-ranking" | "covariate-ranking" => {
            let rows = read_plane_table(&read(&input)?)?;
            let body = match kind.as_str() {
                "plane" => rows_to_csv(&rows, &comments)?,
                "lhu-ranking" => ranking_csv(&ranking_table(&rows, RankingScope::Groups)?, &comments)?,
                _ => ranking_csv(&ranking_table(&rows, RankingScope::Covariates)?, &comments)?,
            };
            run.write(&format!("{kind}.csv"), &body)?;
        }
        other => bail!(UsageError(format!(
            "unknown report kind `{other}`; known: proportions, quartiles, plane, lhu-ranking, covariate-ranking"
        ))),
    }
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Rotate(a) => cmd_rotate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_keys_match_the_default_family() {
        let family = default_model_family(1e-4, 1.0, "sex", "age_class");
        assert_eq!(family.len(), MODEL_KEYS.len());
    }

    #[test]
    fn group_block_parses() {
        assert_eq!("region".parse::<spordinal::GroupBlock>().unwrap(), spordinal::GroupBlock::Region);
        assert!("county".parse::<spordinal::GroupBlock>().is_err());
    }
}

//! Command-line interface.
//!
//! Every subcommand resolves its settings from flags, then an optional JSON
//! config file, then built-in defaults, and writes the resolved settings as a
//! `# config:` comment at the top of each output table. Passing such a file
//! back through `--config` reruns the command with the same settings.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataio::{self, ColumnRef, CsvSchema, OperationalizeOptions};
use crate::error::{Error, Result};
use crate::format;
use crate::simulation::{
    self, CorrStructure, GridSpec, MeanProfile, ReferenceCurve, ReferenceOptions, ReplicateRow, Scenario,
    SimulationOptions,
};
use crate::skewnormal::{self, FitOptions};
use crate::survival::{self, Estimator, EstimatorOptions, IntervalModel, SeMode};

pub const DEFAULT_SEED: u64 = 1;
pub const THREADS_ENV: &str = "DISTKM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "distkm", version, about = "Distributional Kaplan-Meier estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Distributional and Kaplan-Meier estimates side by side, one table per cut-point.
    Dkm(EstimateArgs),
    /// Classical Kaplan-Meier estimates, one table per cut-point.
    Km(EstimateArgs),
    /// Fit a skew-normal law to one column of values.
    Fit(FitArgs),
    /// Run a simulation grid.
    Simulate(SimulateArgs),
    /// Large-sample reference curves for the laws of a grid.
    Reference(ReferenceArgs),
    /// Recompute metrics from saved replicate and reference tables.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config file, or an earlier output file with a `# config:` header.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (or directory for `simulate` and `metrics`); stdout if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    /// Significant digits in CSV output.
    #[arg(long)]
    pub digits: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = THREADS_ENV)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ColumnArgs {
    /// Subject column, by name or zero-based position.
    #[arg(long)]
    pub subject_col: Option<String>,
    #[arg(long)]
    pub time_col: Option<String>,
    #[arg(long)]
    pub value_col: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long = "cutpoint", allow_negative_numbers = true)]
    pub cutpoints: Vec<f64>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long)]
    pub min_n: Option<usize>,
    #[arg(long, value_enum)]
    pub se_mode: Option<SeModeArg>,
    /// Drop subjects with an event at time 1 and start estimation at time 2.
    #[arg(long)]
    pub baseline_exclusion: bool,
    /// Keep subjects whose first observation is after time 1.
    #[arg(long)]
    pub allow_late_entry: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SeModeArg {
    PaperDelta,
    FullDelta,
    Bootstrap,
    All,
}

impl From<SeModeArg> for SeMode {
    fn from(m: SeModeArg) -> Self {
        match m {
            SeModeArg::PaperDelta => SeMode::PaperDelta,
            SeModeArg::FullDelta => SeMode::FullDelta,
            SeModeArg::Bootstrap => SeMode::Bootstrap,
            SeModeArg::All => SeMode::All,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Fit the values at this time index of a long-format file; all values otherwise.
    #[arg(long)]
    pub time: Option<u32>,
    /// Report exceedance probabilities at these cut-points.
    #[arg(long = "cutpoint", allow_negative_numbers = true)]
    pub cutpoints: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// `no_change`, `constant_increase`, or a comma-separated list of means.
    #[arg(long = "means")]
    pub means: Vec<String>,
    #[arg(long = "correlation", allow_negative_numbers = true)]
    pub correlations: Vec<f64>,
    #[arg(long = "cutpoint", allow_negative_numbers = true)]
    pub cutpoints: Vec<f64>,
    #[arg(long, value_enum)]
    pub corr_structure: Option<CorrStructureArg>,
    #[arg(long, value_enum)]
    pub fidelity: Option<Fidelity>,
    /// Sample size of each reference dataset.
    #[arg(long)]
    pub reference_n: Option<usize>,
    #[arg(long)]
    pub reference_reps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorrStructureArg {
    Exchangeable,
    Ar1,
}

impl From<CorrStructureArg> for CorrStructure {
    fn from(c: CorrStructureArg) -> Self {
        match c {
            CorrStructureArg::Exchangeable => CorrStructure::Exchangeable,
            CorrStructureArg::Ar1 => CorrStructure::Ar1,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long = "sample-size")]
    pub sample_sizes: Vec<usize>,
    #[arg(long)]
    pub n_datasets: Option<usize>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long)]
    pub min_n: Option<usize>,
    #[arg(long, value_enum)]
    pub se_mode: Option<SeModeArg>,
    /// Also write per-replicate estimates.
    #[arg(long)]
    pub replicates: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReferenceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Replicate table written by `simulate --replicates`.
    #[arg(long)]
    pub input: PathBuf,
    /// Reference table written by `simulate` or `reference`.
    #[arg(long)]
    pub reference: PathBuf,
}

/// Settings accepted in a config file; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject_col: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_col: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value_col: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutpoints: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_mode: Option<SeMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_model: Option<IntervalModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_exclusion: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allow_late_entry: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<Fidelity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<bool>,
}

/// Parse a JSON config, or the `# config:` line of an earlier output file.
pub fn load_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    let json = match text.lines().find_map(|l| l.strip_prefix("# config: ")) {
        Some(line) if text.trim_start().starts_with('#') => line.to_string(),
        _ => text,
    };
    serde_json::from_str(&json).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
}

fn config_of(common: &CommonArgs) -> Result<ConfigFile> {
    match &common.config {
        Some(p) => load_config(p),
        None => Ok(ConfigFile::default()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Num(Option<f64>),
    Int(Option<u64>),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Cell(Cell),
    Text(String),
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Cell(Cell::Num(Some(x)))
    }
}

impl From<Option<f64>> for Value {
    fn from(x: Option<f64>) -> Self {
        Value::Cell(Cell::Num(x))
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Cell(Cell::Int(Some(x as u64)))
    }
}

impl From<u32> for Value {
    fn from(x: u32) -> Self {
        Value::Cell(Cell::Int(Some(x.into())))
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Cell(Cell::Int(Some(x)))
    }
}

impl From<Option<usize>> for Value {
    fn from(x: Option<usize>) -> Self {
        Value::Cell(Cell::Int(x.map(|v| v as u64)))
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Cell(Cell::Bool(x))
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

/// A named table with typed cells, rendered as CSV or JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write_csv<W: Write>(&self, out: W, digits: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| render(v, digits)))?;
        }
        w.flush()?;
        Ok(())
    }

    fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(c, v)| (c.to_string(), json_value(v)))
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "name": self.name, "rows": serde_json::Value::Array(rows) })
    }
}

fn render(v: &Value, digits: usize) -> String {
    match v {
        Value::Text(s) => s.clone(),
        Value::Cell(Cell::Num(x)) => format::opt(*x, digits),
        Value::Cell(Cell::Int(x)) => x.map_or_else(|| format::MISSING.to_string(), |v| v.to_string()),
        Value::Cell(Cell::Bool(b)) => b.to_string(),
    }
}

fn json_value(v: &Value) -> serde_json::Value {
    match v {
        Value::Text(s) => s.clone().into(),
        Value::Cell(Cell::Num(Some(x))) if x.is_finite() => (*x).into(),
        Value::Cell(Cell::Num(_)) | Value::Cell(Cell::Int(None)) => serde_json::Value::Null,
        Value::Cell(Cell::Int(Some(x))) => (*x).into(),
        Value::Cell(Cell::Bool(b)) => (*b).into(),
    }
}

/// Output settings shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Output {
    pub command: &'static str,
    pub config_json: String,
    pub seed: Option<u64>,
    pub notes: Vec<String>,
    pub format: OutputFormat,
    pub digits: usize,
}

impl Output {
    fn header(&self) -> Vec<String> {
        let mut lines = vec![
            format!("distkm {} {}", env!("CARGO_PKG_VERSION"), self.command),
            format!("config: {}", self.config_json),
        ];
        if let Some(seed) = self.seed {
            lines.push(format!("seed: {seed}"));
        }
        lines.extend(self.notes.iter().cloned());
        lines
    }

    pub fn write<W: Write>(&self, table: &Table, mut out: W) -> Result<()> {
        match self.format {
            OutputFormat::Csv => {
                for line in self.header() {
                    writeln!(out, "# {line}")?;
                }
                writeln!(out, "# table: {}", table.name)?;
                table.write_csv(&mut out, self.digits)
            }
            OutputFormat::Json => {
                let config: serde_json::Value = serde_json::from_str(&self.config_json)?;
                let doc = serde_json::json!({
                    "command": self.command,
                    "version": env!("CARGO_PKG_VERSION"),
                    "config": config,
                    "seed": self.seed,
                    "notes": self.notes,
                    "table": table.to_json(),
                });
                serde_json::to_writer_pretty(&mut out, &doc)?;
                writeln!(out)?;
                Ok(())
            }
        }
    }

    fn extension(&self) -> &'static str {
        match self.format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }

    /// Write several tables: to stdout in sequence, to `out` if there is one
    /// table, or to `out` with a per-table suffix (or into `out` as a directory).
    pub fn emit(&self, tables: &[Table], out: Option<&Path>, as_directory: bool) -> Result<Vec<PathBuf>> {
        let Some(out) = out else {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            for (i, t) in tables.iter().enumerate() {
                if i > 0 {
                    writeln!(lock)?;
                }
                self.write(t, &mut lock)?;
            }
            return Ok(Vec::new());
        };
        let mut paths = Vec::new();
        for t in tables {
            let path = if as_directory {
                fs::create_dir_all(out)?;
                out.join(format!("{}.{}", t.name, self.extension()))
            } else if tables.len() == 1 {
                out.to_path_buf()
            } else {
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
                let ext = out
                    .extension()
                    .and_then(|s| s.to_str())
                    .unwrap_or(self.extension());
                out.with_file_name(format!("{stem}-{}.{ext}", t.name))
            };
            let file = fs::File::create(&path)?;
            let mut w = io::BufWriter::new(file);
            self.write(t, &mut w)?;
            w.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }
}

fn column_ref(s: &str) -> ColumnRef {
    match s.parse::<usize>() {
        Ok(i) => ColumnRef::Index(i),
        Err(_) => ColumnRef::Name(s.to_string()),
    }
}

struct Resolved<T> {
    value: T,
    output: Output,
    parallel: Option<usize>,
    out: Option<PathBuf>,
}

fn output_for(command: &'static str, common: &CommonArgs, file: &ConfigFile, seed: Option<u64>) -> Output {
    Output {
        command,
        config_json: String::new(),
        seed,
        notes: Vec::new(),
        format: common.format.or(file.format).unwrap_or_default(),
        digits: common.digits.or(file.digits).unwrap_or(6).max(1),
    }
}

fn finish<T>(value: T, mut config: ConfigFile, mut output: Output, common: &CommonArgs) -> Result<Resolved<T>> {
    config.format = Some(output.format);
    config.digits = Some(output.digits);
    output.config_json = serde_json::to_string(&config)?;
    Ok(Resolved {
        value,
        output,
        parallel: common.parallel,
        out: common.out.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct EstimateSettings {
    pub input: PathBuf,
    pub schema: CsvSchema,
    pub cutpoints: Vec<f64>,
    pub estimator: EstimatorOptions,
    pub operationalize: OperationalizeOptions,
}

fn resolve_estimate(command: &'static str, a: &EstimateArgs) -> Result<Resolved<EstimateSettings>> {
    let file = config_of(&a.common)?;
    let input = a
        .input
        .clone()
        .or(file.input.clone())
        .ok_or_else(|| Error::config("input", "an input file is required"))?;
    let cutpoints = if a.cutpoints.is_empty() {
        file.cutpoints.clone().unwrap_or_default()
    } else {
        a.cutpoints.clone()
    };
    if cutpoints.is_empty() {
        return Err(Error::config("cutpoint", "at least one cut-point is required"));
    }
    if let Some(c) = cutpoints.iter().find(|c| !c.is_finite()) {
        return Err(Error::config("cutpoint", format!("{c} is not finite")));
    }
    let subject_col = a.columns.subject_col.clone().or(file.subject_col.clone()).unwrap_or("subject".into());
    let time_col = a.columns.time_col.clone().or(file.time_col.clone()).unwrap_or("time".into());
    let value_col = a.columns.value_col.clone().or(file.value_col.clone()).unwrap_or("value".into());
    let seed = a.common.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    let baseline_exclusion = a.baseline_exclusion || file.baseline_exclusion.unwrap_or(false);
    let allow_late_entry = a.allow_late_entry || file.allow_late_entry.unwrap_or(false);
    let is_km = command == "km";
    let estimator = EstimatorOptions {
        cutpoint: cutpoints[0],
        min_n_fit: a.min_n.or(file.min_n).unwrap_or(20),
        bootstrap_reps: a.bootstrap_reps.or(file.bootstrap_reps).unwrap_or(500),
        se_mode: a.se_mode.map(SeMode::from).or(file.se_mode).unwrap_or(SeMode::All),
        seed,
        interval_model: file.interval_model.unwrap_or_default(),
        skip_baseline: baseline_exclusion,
        fit: FitOptions::default(),
    };
    if !is_km {
        estimator.validate()?;
    }
    let config = ConfigFile {
        input: Some(input.clone()),
        subject_col: Some(subject_col.clone()),
        time_col: Some(time_col.clone()),
        value_col: Some(value_col.clone()),
        cutpoints: Some(cutpoints.clone()),
        seed: (!is_km).then_some(seed),
        bootstrap_reps: (!is_km).then_some(estimator.bootstrap_reps),
        min_n: (!is_km).then_some(estimator.min_n_fit),
        se_mode: (!is_km).then_some(estimator.se_mode),
        interval_model: (!is_km).then_some(estimator.interval_model),
        baseline_exclusion: Some(baseline_exclusion),
        allow_late_entry: Some(allow_late_entry),
        ..Default::default()
    };
    let output = output_for(command, &a.common, &file, (!is_km).then_some(seed));
    let settings = EstimateSettings {
        input,
        schema: CsvSchema {
            subject: column_ref(&subject_col),
            time: column_ref(&time_col),
            value: column_ref(&value_col),
        },
        cutpoints,
        estimator,
        operationalize: OperationalizeOptions {
            baseline_exclusion,
            allow_late_entry,
        },
    };
    finish(settings, config, output, &a.common)
}

fn cut_name(prefix: &str, c: f64) -> String {
    format!("{prefix}-cut{}", format::sig(c, 6))
}

/// Table 4-style comparison of the two estimators for one cut-point.
pub fn dkm_tables(settings: &EstimateSettings, output: &mut Output) -> Result<Vec<Table>> {
    let data = dataio::load_long_csv(&settings.input, &settings.schema)?;
    let mut tables = Vec::new();
    for &cutpoint in &settings.cutpoints {
        let (d, report) = dataio::operationalize(&data, cutpoint, settings.operationalize);
        output.notes.push(operationalize_note(cutpoint, &report, data.n_missing));
        let opts = EstimatorOptions {
            cutpoint,
            ..settings.estimator
        };
        let dkm = survival::dkm_curve(&d, &opts)?;
        let sets = survival::build_risk_sets(&d, cutpoint)?;
        let km = survival::km_from_risk_sets(&sets, cutpoint, if opts.skip_baseline { 2 } else { 1 });
        let mut t = Table::new(
            cut_name("dkm", cutpoint),
            &[
                "time", "n_risk", "n_event", "km_s", "km_se", "n_est", "dkm_s", "se_boot", "se_dist",
                "p_hat", "se_dist_paper", "n_boot", "location", "scale", "shape",
            ],
        );
        for p in &dkm.points {
            let k = km.point(p.time);
            let km_defined = k.is_some_and(|k| k.estimable);
            let (km_s, km_se) = match k {
                Some(k) if km_defined => (k.s_hat, k.se_dist),
                _ => (None, None),
            };
            let fit = p.fit;
            t.push(vec![
                p.time.into(),
                p.n_risk.into(),
                p.n_event.into(),
                km_s.into(),
                km_se.into(),
                p.n_est.into(),
                p.s_hat.into(),
                p.se_boot.into(),
                p.se_dist.into(),
                p.p_hat.into(),
                p.se_dist_paper.into(),
                if opts.se_mode.wants_bootstrap() && p.estimable {
                    Some(p.n_boot).into()
                } else {
                    Option::<usize>::None.into()
                },
                fit.map(|f| f.location).into(),
                fit.map(|f| f.scale).into(),
                fit.map(|f| f.shape).into(),
            ]);
        }
        tables.push(t);
    }
    Ok(tables)
}

fn operationalize_note(cutpoint: f64, r: &dataio::OperationalizeReport, n_missing: usize) -> String {
    let mut s = format!(
        "cutpoint {}: subjects {} retained {} dropped_baseline {} dropped_late_entry {} censored_records {} missing_values {}",
        format::sig(cutpoint, 6),
        r.n_input,
        r.n_retained,
        r.n_dropped_baseline,
        r.n_dropped_late_entry,
        r.n_records_censored,
        n_missing,
    );
    if !r.late_entrants.is_empty() {
        s.push_str(&format!(" late_entrants {}", r.late_entrants.join(" ")));
    }
    s
}

pub fn km_tables(settings: &EstimateSettings, output: &mut Output) -> Result<Vec<Table>> {
    let data = dataio::load_long_csv(&settings.input, &settings.schema)?;
    let mut tables = Vec::new();
    for &cutpoint in &settings.cutpoints {
        let (d, report) = dataio::operationalize(&data, cutpoint, settings.operationalize);
        output.notes.push(operationalize_note(cutpoint, &report, data.n_missing));
        let sets = survival::build_risk_sets(&d, cutpoint)?;
        let first = if settings.estimator.skip_baseline { 2 } else { 1 };
        let km = survival::km_from_risk_sets(&sets, cutpoint, first);
        let mut t = Table::new(
            cut_name("km", cutpoint),
            &["time", "n_risk", "n_event", "s_hat", "se", "event_time"],
        );
        for p in &km.points {
            t.push(vec![
                p.time.into(),
                p.n_risk.into(),
                p.n_event.into(),
                p.s_hat.into(),
                p.se_dist.into(),
                p.estimable.into(),
            ]);
        }
        tables.push(t);
    }
    Ok(tables)
}

fn resolve_fit(a: &FitArgs) -> Result<Resolved<(PathBuf, CsvSchema, Option<u32>, Vec<f64>)>> {
    let file = config_of(&a.common)?;
    let input = a
        .input
        .clone()
        .or(file.input.clone())
        .ok_or_else(|| Error::config("input", "an input file is required"))?;
    let cutpoints = if a.cutpoints.is_empty() {
        file.cutpoints.clone().unwrap_or_default()
    } else {
        a.cutpoints.clone()
    };
    let time = a.time.or(file.time);
    let subject_col = a.columns.subject_col.clone().or(file.subject_col.clone()).unwrap_or("subject".into());
    let time_col = a.columns.time_col.clone().or(file.time_col.clone()).unwrap_or("time".into());
    let value_col = a.columns.value_col.clone().or(file.value_col.clone()).unwrap_or("value".into());
    let config = ConfigFile {
        input: Some(input.clone()),
        subject_col: time.map(|_| subject_col.clone()),
        time_col: time.map(|_| time_col.clone()),
        value_col: Some(value_col.clone()),
        cutpoints: Some(cutpoints.clone()),
        time,
        ..Default::default()
    };
    let schema = CsvSchema {
        subject: column_ref(&subject_col),
        time: column_ref(&time_col),
        value: column_ref(&value_col),
    };
    let output = output_for("fit", &a.common, &file, None);
    finish((input, schema, time, cutpoints), config, output, &a.common)
}

/// Values of one column, skipping comments and missing markers.
fn read_value_column(path: &Path, column: &ColumnRef) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(fs::File::open(path).map_err(|e| Error::file(path, e))?);
    let headers = rdr.headers()?.clone();
    let idx = match column {
        ColumnRef::Name(n) => headers.iter().position(|h| h == n),
        ColumnRef::Index(i) => (*i < headers.len()).then_some(*i),
    }
    .ok_or_else(|| Error::UnknownColumn {
        path: path.to_path_buf(),
        column: match column {
            ColumnRef::Name(n) => n.clone(),
            ColumnRef::Index(i) => format!("#{i}"),
        },
    })?;
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = record.get(idx).unwrap_or("");
        if dataio::is_missing_marker(field) {
            continue;
        }
        let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: format!("value {field:?} is not a finite number"),
        })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(values)
}

pub fn fit_table(input: &Path, schema: &CsvSchema, time: Option<u32>, cutpoints: &[f64]) -> Result<Table> {
    let values = match time {
        Some(t) => {
            let data = dataio::load_long_csv(input, schema)?;
            data.subjects.iter().filter_map(|s| s.value_at(t)).collect()
        }
        None => read_value_column(input, &schema.value)?,
    };
    let fit = skewnormal::fit_sn(&values, &FitOptions::default())?;
    let p = fit.params;
    let mut t = Table::new(
        "fit",
        &[
            "n_fit", "location", "scale", "shape", "mean", "sd", "skewness", "loglik", "converged", "fallback",
            "cutpoint", "prob", "se_paper", "se_delta",
        ],
    );
    let cuts: Vec<Option<f64>> = if cutpoints.is_empty() {
        vec![None]
    } else {
        cutpoints.iter().map(|&c| Some(c)).collect()
    };
    for c in cuts {
        let e = c.map(|c| skewnormal::exceedance(&fit, c));
        t.push(vec![
            p.n_fit.into(),
            p.location.into(),
            p.scale.into(),
            p.shape.into(),
            p.mean().into(),
            p.sd().into(),
            p.skewness().into(),
            p.loglik.into(),
            p.converged.into(),
            p.fallback.into(),
            c.into(),
            e.map(|e| e.prob).into(),
            e.and_then(|e| e.se_paper).into(),
            e.and_then(|e| e.se_delta).into(),
        ]);
    }
    Ok(t)
}

fn parse_means(s: &str) -> Result<MeanProfile> {
    match s {
        "no_change" => Ok(MeanProfile::NoChange),
        "constant_increase" => Ok(MeanProfile::ConstantIncrease),
        _ => s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(MeanProfile::Custom)
            .map_err(|_| {
                Error::config(
                    "means",
                    format!("{s:?} is neither a named profile nor a list of numbers"),
                )
            }),
    }
}

fn resolve_grid(g: &GridArgs, file: &ConfigFile, seed: u64) -> Result<(GridSpec, ReferenceOptions, Fidelity)> {
    let mut spec = file.grid.clone().unwrap_or_default();
    if !g.means.is_empty() {
        spec.means = g.means.iter().map(|m| parse_means(m)).collect::<Result<_>>()?;
    }
    if !g.correlations.is_empty() {
        spec.correlations = g.correlations.clone();
    }
    if !g.cutpoints.is_empty() {
        spec.cutpoints = g.cutpoints.clone();
    }
    if let Some(c) = g.corr_structure {
        spec.corr_structure = c.into();
    }
    spec.seed = seed;
    let fidelity = g.fidelity.or(file.fidelity).unwrap_or(Fidelity::Desk);
    let base = match fidelity {
        Fidelity::Desk => ReferenceOptions::DESK,
        Fidelity::Paper => ReferenceOptions::PAPER,
    };
    let reference = ReferenceOptions {
        big_n: g.reference_n.or(file.reference_n).unwrap_or(base.big_n),
        reps: g.reference_reps.or(file.reference_reps).unwrap_or(base.reps),
    };
    reference.validate()?;
    Ok((spec, reference, fidelity))
}

pub struct SimulateSettings {
    pub grid: Vec<Scenario>,
    pub options: SimulationOptions,
}

fn resolve_simulate(a: &SimulateArgs) -> Result<Resolved<SimulateSettings>> {
    let file = config_of(&a.common)?;
    let seed = a.common.seed.or(file.seed).or(file.grid.as_ref().map(|g| g.seed)).unwrap_or(DEFAULT_SEED);
    let (mut spec, reference, fidelity) = resolve_grid(&a.grid, &file, seed)?;
    if !a.sample_sizes.is_empty() {
        spec.sample_sizes = a.sample_sizes.clone();
    }
    if let Some(n) = a.n_datasets {
        spec.n_datasets = n;
    }
    let grid = spec.expand()?;
    let estimator = EstimatorOptions {
        min_n_fit: a.min_n.or(file.min_n).unwrap_or(20),
        bootstrap_reps: a.bootstrap_reps.or(file.bootstrap_reps).unwrap_or(500),
        se_mode: a.se_mode.map(SeMode::from).or(file.se_mode).unwrap_or(SeMode::All),
        seed,
        interval_model: file.interval_model.unwrap_or_default(),
        ..Default::default()
    };
    estimator.validate()?;
    let keep_replicates = a.replicates || file.replicates.unwrap_or(false);
    let config = ConfigFile {
        seed: Some(seed),
        bootstrap_reps: Some(estimator.bootstrap_reps),
        min_n: Some(estimator.min_n_fit),
        se_mode: Some(estimator.se_mode),
        interval_model: Some(estimator.interval_model),
        grid: Some(spec),
        fidelity: Some(fidelity),
        reference_n: Some(reference.big_n),
        reference_reps: Some(reference.reps),
        replicates: Some(keep_replicates),
        ..Default::default()
    };
    let output = output_for("simulate", &a.common, &file, Some(seed));
    let settings = SimulateSettings {
        grid,
        options: SimulationOptions {
            estimator,
            reference,
            keep_replicates,
        },
    };
    finish(settings, config, output, &a.common)
}

fn hex(id: u64) -> Value {
    Value::Text(format!("{id:016x}"))
}

fn structure_name(c: CorrStructure) -> &'static str {
    match c {
        CorrStructure::Exchangeable => "exchangeable",
        CorrStructure::Ar1 => "ar1",
    }
}

pub fn reference_table(grid: &[Scenario], references: &[ReferenceCurve]) -> Table {
    let mut t = Table::new(
        "reference",
        &[
            "means", "correlation", "corr_structure", "cutpoint", "time", "s_ref", "n_used", "mean_n_risk", "big_n",
            "reps",
        ],
    );
    let mut seen = Vec::new();
    for (s, r) in grid.iter().zip(references) {
        let key = (s.means.clone(), s.correlation.to_bits(), s.corr_structure, s.cutpoint.to_bits());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        for p in &r.points {
            t.push(vec![
                means_text(&s.means).into(),
                s.correlation.into(),
                structure_name(s.corr_structure).into(),
                s.cutpoint.into(),
                p.time.into(),
                p.s_ref.into(),
                p.n_used.into(),
                p.mean_n_risk.into(),
                r.big_n.into(),
                r.reps.into(),
            ]);
        }
    }
    t
}

fn means_text(m: &MeanProfile) -> String {
    match m {
        MeanProfile::Custom(v) => v.iter().map(|x| format::sig(*x, 17)).collect::<Vec<_>>().join(";"),
        other => other.label().to_string(),
    }
}

pub fn metrics_table(rows: &[&simulation::MetricsRow], scenarios: &[(u64, &Scenario)]) -> Table {
    let mut t = Table::new(
        "metrics",
        &[
            "scenario_id", "means", "correlation", "corr_structure", "n", "cutpoint", "time", "s_ref", "n_datasets",
            "bias", "mse", "sd_est", "mean_se_dist", "mean_se_boot", "ratio_se_dist", "ratio_se_boot",
            "coverage_dist", "coverage_boot", "n_missing_dist", "n_missing_km", "sd_km", "ratio_sd_dist_km",
            "mean_n_est", "min_n_est",
        ],
    );
    for r in rows {
        let structure = scenarios
            .iter()
            .find(|(id, _)| *id == r.scenario_id)
            .map_or("", |(_, s)| structure_name(s.corr_structure));
        let means = scenarios
            .iter()
            .find(|(id, _)| *id == r.scenario_id)
            .map_or_else(|| r.means.clone(), |(_, s)| means_text(&s.means));
        t.push(vec![
            hex(r.scenario_id),
            means.into(),
            r.correlation.into(),
            structure.into(),
            r.n.into(),
            r.cutpoint.into(),
            r.time.into(),
            r.s_ref.into(),
            r.n_datasets.into(),
            r.bias.into(),
            r.mse.into(),
            r.sd_est.into(),
            r.mean_se_dist.into(),
            r.mean_se_boot.into(),
            r.ratio_se_dist.into(),
            r.ratio_se_boot.into(),
            r.coverage_dist.into(),
            r.coverage_boot.into(),
            r.n_missing_dist.into(),
            r.n_missing_km.into(),
            r.sd_km.into(),
            r.ratio_sd_dist_km.into(),
            r.mean_n_est.into(),
            r.min_n_est.into(),
        ]);
    }
    t
}

pub fn marginal_table(rows: &[simulation::MarginalRow]) -> Table {
    let mut t = Table::new(
        "marginals",
        &[
            "margin", "level", "n_rows", "mse", "coverage_dist", "coverage_boot", "ratio_se_dist", "ratio_se_boot",
            "median_ratio_sd_dist_km",
        ],
    );
    for r in rows {
        t.push(vec![
            match r.margin {
                simulation::Margin::Cutpoint => "cutpoint",
                simulation::Margin::Correlation => "correlation",
            }
            .into(),
            r.level.into(),
            r.n_rows.into(),
            r.mse.into(),
            r.coverage_dist.into(),
            r.coverage_boot.into(),
            r.ratio_se_dist.into(),
            r.ratio_se_boot.into(),
            r.median_ratio_sd_dist_km.into(),
        ]);
    }
    t
}

const REPLICATE_COLUMNS: [&str; 16] = [
    "scenario_id", "means", "correlation", "corr_structure", "n", "cutpoint", "dataset", "time", "estimator",
    "n_risk", "n_event", "n_est", "estimable", "s_hat", "se", "se_boot",
];

pub fn replicate_table(results: &[simulation::ScenarioResult]) -> Table {
    let mut t = Table::new("replicates", &REPLICATE_COLUMNS);
    for res in results {
        let s = &res.scenario;
        for r in &res.replicates {
            t.push(vec![
                hex(r.scenario_id),
                means_text(&s.means).into(),
                s.correlation.into(),
                structure_name(s.corr_structure).into(),
                s.n.into(),
                s.cutpoint.into(),
                r.dataset.into(),
                r.time.into(),
                match r.estimator {
                    Estimator::Distributional => "dkm",
                    Estimator::KaplanMeier => "km",
                }
                .into(),
                r.n_risk.into(),
                r.n_event.into(),
                r.n_est.into(),
                r.estimable.into(),
                r.s_hat.into(),
                r.se.into(),
                r.se_boot.into(),
            ]);
        }
    }
    t
}

pub fn simulate_tables(settings: &SimulateSettings) -> Result<Vec<Table>> {
    let result = simulation::run_grid(&settings.grid, &settings.options)?;
    let references: Vec<ReferenceCurve> = result.scenarios.iter().map(|s| s.reference.clone()).collect();
    let scenarios: Vec<(u64, &Scenario)> = result.scenarios.iter().map(|s| (s.scenario.id(), &s.scenario)).collect();
    let rows: Vec<&simulation::MetricsRow> = result.metrics().collect();
    let mut tables = vec![
        metrics_table(&rows, &scenarios),
        marginal_table(&result.marginals),
        reference_table(&settings.grid, &references),
    ];
    if settings.options.keep_replicates {
        tables.push(replicate_table(&result.scenarios));
    }
    Ok(tables)
}

fn resolve_reference(a: &ReferenceArgs) -> Result<Resolved<(Vec<Scenario>, ReferenceOptions)>> {
    let file = config_of(&a.common)?;
    let seed = a.common.seed.or(file.seed).or(file.grid.as_ref().map(|g| g.seed)).unwrap_or(DEFAULT_SEED);
    let (mut spec, reference, fidelity) = resolve_grid(&a.grid, &file, seed)?;
    // References do not depend on the sample size.
    spec.sample_sizes = vec![2];
    spec.n_datasets = 1;
    let grid = spec.expand()?;
    let config = ConfigFile {
        seed: Some(seed),
        grid: Some(GridSpec {
            sample_sizes: Vec::new(),
            ..spec
        }),
        fidelity: Some(fidelity),
        reference_n: Some(reference.big_n),
        reference_reps: Some(reference.reps),
        ..Default::default()
    };
    let output = output_for("reference", &a.common, &file, Some(seed));
    finish((grid, reference), config, output, &a.common)
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>> {
    if dataio::is_missing_marker(s) {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::config("input", format!("{s:?} is not a number")))
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let headers = rdr.headers()?.iter().map(str::to_string).collect();
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((headers, records))
}

fn col(headers: &[String], path: &Path, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::UnknownColumn {
        path: path.to_path_buf(),
        column: name.to_string(),
    })
}

fn parse_profile(text: &str) -> Result<MeanProfile> {
    parse_means(&text.replace(';', ","))
}

fn parse_structure(text: &str) -> Result<CorrStructure> {
    match text {
        "exchangeable" => Ok(CorrStructure::Exchangeable),
        "ar1" => Ok(CorrStructure::Ar1),
        other => Err(Error::config("corr_structure", format!("unknown structure {other:?}"))),
    }
}

/// Rebuild metrics from a saved replicate table and reference table.
pub fn metrics_tables(replicates: &Path, reference: &Path) -> Result<Vec<Table>> {
    let (rh, rrows) = read_table(reference)?;
    let rc = |n| col(&rh, reference, n);
    let (r_means, r_cor, r_struct, r_cut, r_time, r_sref, r_used, r_risk, r_bign, r_reps) = (
        rc("means")?,
        rc("correlation")?,
        rc("corr_structure")?,
        rc("cutpoint")?,
        rc("time")?,
        rc("s_ref")?,
        rc("n_used")?,
        rc("mean_n_risk")?,
        rc("big_n")?,
        rc("reps")?,
    );
    let mut refs: BTreeMap<(String, String, String, String), ReferenceCurve> = BTreeMap::new();
    for r in &rrows {
        let key = (r[r_means].to_string(), r[r_cor].to_string(), r[r_struct].to_string(), r[r_cut].to_string());
        let int = |i: usize| -> Result<usize> {
            r[i].parse().map_err(|_| Error::config("reference", format!("{:?} is not an integer", &r[i])))
        };
        let entry = refs.entry(key).or_insert(ReferenceCurve {
            big_n: int(r_bign)?,
            reps: int(r_reps)?,
            points: Vec::new(),
        });
        entry.points.push(simulation::ReferencePoint {
            time: int(r_time)? as u32,
            s_ref: parse_opt_f64(&r[r_sref])?,
            n_used: int(r_used)?,
            mean_n_risk: parse_opt_f64(&r[r_risk])?.unwrap_or(0.0),
        });
    }
    for curve in refs.values_mut() {
        curve.points.sort_by_key(|p| p.time);
    }

    let (h, rows) = read_table(replicates)?;
    let idx: Vec<usize> = REPLICATE_COLUMNS
        .iter()
        .map(|c| col(&h, replicates, c))
        .collect::<Result<_>>()?;
    let mut cells: BTreeMap<String, (Scenario, (String, String, String, String), Vec<ReplicateRow>)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in &rows {
        let f = |k: usize| &r[idx[k]];
        let int = |k: usize| -> Result<u64> {
            f(k).parse().map_err(|_| Error::config("input", format!("{:?} is not an integer", f(k))))
        };
        let id_text = f(0).to_string();
        let scenario_id = u64::from_str_radix(&id_text, 16)
            .map_err(|_| Error::config("input", format!("bad scenario id {id_text:?}")))?;
        if !cells.contains_key(&id_text) {
            let scenario = Scenario {
                means: parse_profile(f(1))?,
                correlation: parse_opt_f64(f(2))?.unwrap_or(f64::NAN),
                corr_structure: parse_structure(f(3))?,
                n: int(4)? as usize,
                cutpoint: parse_opt_f64(f(5))?.unwrap_or(f64::NAN),
                n_datasets: 0,
                seed: 0,
            };
            let key = (f(1).to_string(), f(2).to_string(), f(3).to_string(), f(5).to_string());
            order.push(id_text.clone());
            cells.insert(id_text.clone(), (scenario, key, Vec::new()));
        }
        let estimator = match f(8) {
            "dkm" => Estimator::Distributional,
            "km" => Estimator::KaplanMeier,
            other => return Err(Error::config("input", format!("unknown estimator {other:?}"))),
        };
        let row = ReplicateRow {
            scenario_id,
            dataset: int(6)?,
            time: int(7)? as u32,
            estimator,
            n_risk: int(9)? as usize,
            n_event: int(10)? as usize,
            n_est: int(11)? as usize,
            estimable: f(12) == "true",
            s_hat: parse_opt_f64(f(13))?,
            se: parse_opt_f64(f(14))?,
            se_boot: parse_opt_f64(f(15))?,
        };
        cells.get_mut(&id_text).expect("inserted above").2.push(row);
    }

    let mut results = Vec::new();
    for id in &order {
        let (scenario, key, rows) = &cells[id];
        let reference = refs.get(key).ok_or_else(|| {
            Error::config(
                "reference",
                format!("no reference for means {} correlation {} cutpoint {}", key.0, key.1, key.3),
            )
        })?;
        let metrics = simulation::metrics_from_replicates(scenario, reference, rows);
        results.push((scenario.clone(), metrics));
    }
    let scenarios: Vec<(u64, &Scenario)> = results
        .iter()
        .zip(&order)
        .map(|((s, _), id)| (u64::from_str_radix(id, 16).unwrap_or(0), s))
        .collect();
    let rows: Vec<&simulation::MetricsRow> = results.iter().flat_map(|(_, m)| m.iter()).collect();
    let marginals = simulation::marginals(&rows);
    Ok(vec![metrics_table(&rows, &scenarios), marginal_table(&marginals)])
}

fn with_pool<T: Send>(parallel: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = parallel.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config("parallel", e.to_string()))?;
    Ok(pool.install(f))
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dkm(a) => {
            let mut r = resolve_estimate("dkm", &a)?;
            let tables = with_pool(r.parallel, || dkm_tables(&r.value, &mut r.output))??;
            r.output.emit(&tables, r.out.as_deref(), false)?;
        }
        Command::Km(a) => {
            let mut r = resolve_estimate("km", &a)?;
            let tables = km_tables(&r.value, &mut r.output)?;
            r.output.emit(&tables, r.out.as_deref(), false)?;
        }
        Command::Fit(a) => {
            let r = resolve_fit(&a)?;
            let (input, schema, time, cuts) = &r.value;
            let table = fit_table(input, schema, *time, cuts)?;
            r.output.emit(&[table], r.out.as_deref(), false)?;
        }
        Command::Simulate(a) => {
            let r = resolve_simulate(&a)?;
            let tables = with_pool(r.parallel, || simulate_tables(&r.value))??;
            let tables: Vec<Table> = if r.out.is_some() {
                tables
            } else {
                tables.into_iter().filter(|t| t.name != "replicates").collect()
            };
            r.output.emit(&tables, r.out.as_deref(), true)?;
        }
        Command::Reference(a) => {
            let r = resolve_reference(&a)?;
            let (grid, options) = &r.value;
            let curves = with_pool(r.parallel, || simulation::reference_curves(grid, *options))??;
            r.output.emit(&[reference_table(grid, &curves)], r.out.as_deref(), false)?;
        }
        Command::Metrics(a) => {
            let file = config_of(&a.common)?;
            let config = ConfigFile {
                input: Some(a.input.clone()),
                ..Default::default()
            };
            let output = output_for("metrics", &a.common, &file, None);
            let r = finish((), config, output, &a.common)?;
            let tables = metrics_tables(&a.input, &a.reference)?;
            r.output.emit(&tables, r.out.as_deref(), true)?;
        }
    }
    Ok(())
}

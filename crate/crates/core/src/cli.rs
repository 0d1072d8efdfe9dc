//! Command-line driver: configuration, the estimation pipeline, outputs and
//! error codes.
//!
//! Every failure maps to a stable code printed as `CODE: message` on one
//! line. User and data errors exit with 1, internal errors with 2.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baseline::{fit_baseline, BaselineError, BaselineMode};
use crate::data::{assemble_panel, load_csv, read_csv, CsvSchema, DataError, MacroTable, Panel, PanelConfig, Series};
use crate::effects::{estimate, render_table, EffectsError, EstimationResult, Parameterization, TableFormat, Variant};
use crate::mc::{self, DgpSpec, Experiment, McError};
use crate::propensity::{check_no_empty_cell, fit_gps, PropensityError, DEFAULT_E_MIN};
use crate::regress::RegressError;
use crate::treatment::{classify, TreatmentError, POLICY_CLASSES};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "FISCAL_IPW_CONFIG";

/// The bundled synthetic table, used when no data path is configured.
pub const BUNDLED_DATA: &str = include_str!("../data/us_macro_1992_2019_synthetic.csv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.code == "E_INTERNAL" {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // keep the report on a single line
        write!(f, "{}: {}", self.code, self.message.replace('\n', " "))
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::NotFound(_) => "E_DATA_NOT_FOUND",
            DataError::InsufficientRows { .. } => "E_INSUFFICIENT_DATA",
            _ => "E_DATA_INVALID",
        };
        CliError::new(code, e.to_string())
    }
}

fn regress_code(e: &RegressError) -> &'static str {
    match e {
        RegressError::Separation { .. } => "E_NONCONVERGENCE",
        RegressError::EmptyClass(_) => "E_EMPTY_CELL",
        _ => "E_DEGENERATE",
    }
}

impl From<TreatmentError> for CliError {
    fn from(e: TreatmentError) -> Self {
        let code = match e {
            TreatmentError::ZeroVariance | TreatmentError::TooFew(_) => "E_DEGENERATE",
            _ => "E_DATA_INVALID",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        let code = match &e {
            BaselineError::Regress(r) => regress_code(r),
            BaselineError::TooFewRows { .. } | BaselineError::Empty => "E_INSUFFICIENT_DATA",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<PropensityError> for CliError {
    fn from(e: PropensityError) -> Self {
        let code = match &e {
            PropensityError::EmptyClass(_) => "E_EMPTY_CELL",
            PropensityError::NotConverged { .. } => "E_NONCONVERGENCE",
            PropensityError::InvalidFloor { .. } => "E_BAD_CONFIG",
            PropensityError::Model(r) => regress_code(r),
            PropensityError::DimensionMismatch(_) => "E_INTERNAL",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<EffectsError> for CliError {
    fn from(e: EffectsError) -> Self {
        let code = match &e {
            EffectsError::EmptyCell(_) => "E_EMPTY_CELL",
            EffectsError::Regress(r) => regress_code(r),
            EffectsError::Unknown { .. } => "E_BAD_CONFIG",
            _ => "E_INTERNAL",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        let code = match e {
            McError::InvalidSpec(_) | McError::TooFewReplications(_) => "E_BAD_SPEC",
            McError::AllFailed(_) => "E_SIMULATION_FAILED",
        };
        CliError::new(code, e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV file; the bundled synthetic table when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub date_col: String,
    pub output_col: String,
    pub policy_col: String,
    pub covariates: Vec<Series>,
    pub forecaster_inputs: Vec<Series>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let panel = PanelConfig::default();
        DataConfig {
            path: None,
            date_col: CsvSchema::default().date_col,
            output_col: panel.output_col,
            policy_col: panel.policy_col,
            covariates: panel.covariates,
            forecaster_inputs: panel.forecaster_inputs,
        }
    }
}

impl DataConfig {
    pub fn panel_config(&self) -> PanelConfig {
        PanelConfig {
            output_col: self.output_col.clone(),
            policy_col: self.policy_col.clone(),
            covariates: self.covariates.clone(),
            forecaster_inputs: self.forecaster_inputs.clone(),
            classes: POLICY_CLASSES,
        }
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            date_col: self.date_col.clone(),
            required: self.panel_config().required_columns(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub baseline: BaselineMode,
    pub e_min: f64,
    pub parameterization: Parameterization,
    pub covariance: crate::regress::CovarianceKind,
    pub variants: Vec<Variant>,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            baseline: BaselineMode::FullSample,
            e_min: DEFAULT_E_MIN,
            parameterization: Parameterization::ReferenceCoded,
            covariance: crate::regress::CovarianceKind::Classical,
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub format: TableFormat,
    /// Output file; standard output when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// The simulate subcommand's default: the assumption-violation scenario.
pub fn default_experiment() -> Experiment {
    Experiment::new(
        DgpSpec {
            theta: 0.5,
            ..DgpSpec::default()
        },
        200,
    )
}

fn default_experiment_spec() -> DgpSpec {
    default_experiment().spec
}

/// `[simulate]` section; mirrors [`Experiment`] with every field optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub replications: usize,
    pub e_min: f64,
    pub covariance: crate::regress::CovarianceKind,
    pub propensity: mc::PropensitySource,
    pub baseline: BaselineMode,
    #[serde(default = "default_experiment_spec")]
    pub spec: DgpSpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig::from(default_experiment())
    }
}

impl From<Experiment> for SimulateConfig {
    fn from(e: Experiment) -> Self {
        SimulateConfig {
            replications: e.replications,
            e_min: e.e_min,
            covariance: e.covariance,
            propensity: e.propensity,
            baseline: e.baseline,
            spec: e.spec,
        }
    }
}

impl SimulateConfig {
    pub fn experiment(&self) -> Experiment {
        Experiment {
            spec: self.spec.clone(),
            replications: self.replications,
            e_min: self.e_min,
            covariance: self.covariance,
            propensity: self.propensity,
            baseline: self.baseline,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub estimate: EstimateConfig,
    pub output: OutputConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::new("E_BAD_CONFIG", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::new("E_BAD_CONFIG", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::new("E_CONFIG_NOT_FOUND", format!("config file not found: {}", path.display()))
            } else {
                CliError::new("E_BAD_CONFIG", format!("{}: {e}", path.display()))
            }
        })?;
        Self::from_toml(&text)
    }
}

#[derive(Parser, Debug)]
#[command(name = "fiscal-ipw", version, about = "Fiscal policy class effects by inverse probability weighting")]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH", env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_name = "FORMAT")]
    pub format: Option<FormatArg>,
    /// Output file (written atomically); standard output if omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the class effects and print a regression table.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment.
    Simulate(SimulateArgs),
    /// Validate a data file and summarize it.
    InspectData(DataArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Quarterly CSV file.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Variants to estimate, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "VARIANT")]
    pub variant: Vec<VariantArg>,
    /// Dummy coding.
    #[arg(long, value_name = "PARAM")]
    pub param: Option<ParamArg>,
    /// Floor for class probabilities.
    #[arg(long = "e-min", value_name = "FLOAT")]
    pub e_min: Option<f64>,
    /// Forecast baseline.
    #[arg(long, value_name = "MODE")]
    pub baseline: Option<BaselineArg>,
    /// Standard errors.
    #[arg(long, value_name = "KIND")]
    pub covariance: Option<CovarianceArg>,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// Base seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Weight of spending growth in the base level.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Rows per replication.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Text,
    Csv,
    Json,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => TableFormat::Text,
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Json => TableFormat::Json,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    WlsA2,
    OlsA2,
    WlsA1,
    All,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    Ref,
    Cell,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum CovarianceArg {
    Classical,
    Robust,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Full,
    Expanding,
}

/// Applies command-line overrides to a config. The command line wins.
pub fn apply_overrides(mut config: RunConfig, cli: &Cli) -> RunConfig {
    if let Some(f) = cli.format {
        config.output.format = f.into();
    }
    if let Some(out) = &cli.out {
        config.output.path = Some(out.clone());
    }
    match &cli.command {
        Command::Estimate(args) => {
            if let Some(d) = &args.data.data {
                config.data.path = Some(d.clone());
            }
            if !args.variant.is_empty() {
                let mut variants = Vec::new();
                for v in &args.variant {
                    let add: &[Variant] = match v {
                        VariantArg::WlsA2 => &[Variant::WlsA2],
                        VariantArg::OlsA2 => &[Variant::OlsA2],
                        VariantArg::WlsA1 => &[Variant::WlsA1],
                        VariantArg::All => &Variant::ALL,
                    };
                    for a in add {
                        if !variants.contains(a) {
                            variants.push(*a);
                        }
                    }
                }
                config.estimate.variants = variants;
            }
            if let Some(p) = args.param {
                config.estimate.parameterization = match p {
                    ParamArg::Ref => Parameterization::ReferenceCoded,
                    ParamArg::Cell => Parameterization::CellMeans,
                };
            }
            if let Some(e) = args.e_min {
                config.estimate.e_min = e;
            }
            if let Some(b) = args.baseline {
                config.estimate.baseline = match b {
                    BaselineArg::Full => BaselineMode::FullSample,
                    BaselineArg::Expanding => BaselineMode::Expanding,
                };
            }
            if let Some(c) = args.covariance {
                config.estimate.covariance = match c {
                    CovarianceArg::Classical => crate::regress::CovarianceKind::Classical,
                    CovarianceArg::Robust => crate::regress::CovarianceKind::Robust,
                };
            }
        }
        Command::Simulate(args) => {
            if let Some(s) = args.seed {
                config.simulate.spec.seed = s;
            }
            if let Some(r) = args.replications {
                config.simulate.replications = r;
            }
            if let Some(t) = args.theta {
                config.simulate.spec.theta = t;
            }
            if let Some(n) = args.n {
                config.simulate.spec.n = n;
            }
        }
        Command::InspectData(args) => {
            if let Some(d) = &args.data {
                config.data.path = Some(d.clone());
            }
        }
        Command::ShowConfig => {}
    }
    config
}

/// Reads the configured table, or the bundled one.
pub fn load_table(config: &DataConfig) -> Result<MacroTable, CliError> {
    let schema = config.schema();
    Ok(match &config.path {
        Some(path) => load_csv(path, &schema)?,
        None => read_csv(BUNDLED_DATA.as_bytes(), &schema)?,
    })
}

/// Every intermediate of one estimation run.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub panel: Panel,
    pub results: Vec<EstimationResult>,
    pub diagnostics: String,
}

pub fn run_pipeline(config: &RunConfig) -> Result<Pipeline, CliError> {
    let est = &config.estimate;
    if est.variants.is_empty() {
        return Err(CliError::new("E_BAD_CONFIG", "no variants requested"));
    }
    let table = load_table(&config.data)?;
    let panel = assemble_panel(&table, &config.data.panel_config())?;
    let assignment = classify(&panel.g)?;
    let baseline = fit_baseline(&panel, est.baseline)?;
    let prop = fit_gps(&panel.x, &assignment, est.e_min)?;
    let diagnostics = check_no_empty_cell(&prop, est.e_min).to_text();
    let results = est
        .variants
        .iter()
        .map(|&v| estimate(&panel, &baseline, &assignment, &prop, v, est.parameterization, est.covariance))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Pipeline {
        panel,
        results,
        diagnostics,
    })
}

/// Rendered table plus the propensity diagnostics.
pub fn cmd_estimate(config: &RunConfig) -> Result<(String, String), CliError> {
    let run = run_pipeline(config)?;
    let table = render_table(&run.results, config.output.format)?;
    Ok((table, run.diagnostics))
}

pub fn cmd_simulate(config: &RunConfig) -> Result<String, CliError> {
    let report = mc::run(&config.simulate.experiment())?;
    Ok(match config.output.format {
        TableFormat::Text => report.to_text(),
        TableFormat::Csv => report.to_csv(),
        TableFormat::Json => report.to_json(),
    })
}

#[derive(Serialize)]
struct ColumnSummary {
    name: String,
    min: f64,
    mean: f64,
    max: f64,
}

#[derive(Serialize)]
struct DataSummary {
    rows: usize,
    first: String,
    last: String,
    columns: Vec<ColumnSummary>,
    panel_rows: usize,
    panel_first: String,
    panel_last: String,
    spending_growth_sd: f64,
    class_counts: Vec<usize>,
}

pub fn cmd_inspect_data(config: &RunConfig) -> Result<String, CliError> {
    let table = load_table(&config.data)?;
    let panel = assemble_panel(&table, &config.data.panel_config())?;
    let assignment = classify(&panel.g)?;
    let summary = DataSummary {
        rows: table.len(),
        first: table.dates()[0].to_string(),
        last: table.dates()[table.len() - 1].to_string(),
        columns: table
            .columns()
            .map(|(name, v)| ColumnSummary {
                name: name.to_string(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
            .collect(),
        panel_rows: panel.len(),
        panel_first: panel.dates[0].to_string(),
        panel_last: panel.dates[panel.len() - 1].to_string(),
        spending_growth_sd: assignment.sigma.unwrap_or(f64::NAN),
        class_counts: assignment.counts(),
    };
    Ok(match config.output.format {
        TableFormat::Json => {
            let mut s = serde_json::to_string_pretty(&summary).expect("plain data serializes");
            s.push('\n');
            s
        }
        TableFormat::Csv => {
            let mut s = String::from("column,min,mean,max\n");
            for c in &summary.columns {
                let _ = writeln!(s, "{},{},{},{}", c.name, c.min, c.mean, c.max);
            }
            s
        }
        TableFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "rows            {} ({} to {})", summary.rows, summary.first, summary.last);
            let _ = writeln!(s, "{:<12} {:>12} {:>12} {:>12}", "column", "min", "mean", "max");
            for c in &summary.columns {
                let _ = writeln!(s, "{:<12} {:>12.4} {:>12.4} {:>12.4}", c.name, c.min, c.mean, c.max);
            }
            let _ = writeln!(
                s,
                "panel rows      {} ({} to {})",
                summary.panel_rows, summary.panel_first, summary.panel_last
            );
            let _ = writeln!(s, "growth sd       {:.6}", summary.spending_growth_sd);
            let counts: Vec<String> = summary.class_counts.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "class counts    {}", counts.join(" "));
            s
        }
    })
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::new("E_OUTPUT", format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

fn emit(config: &RunConfig, document: &str) -> Result<(), CliError> {
    match &config.output.path {
        Some(path) => write_atomic(path, document),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(document.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::new("E_OUTPUT", e.to_string()))
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config = apply_overrides(base, cli);
    match &cli.command {
        Command::Estimate(_) => {
            let (table, diagnostics) = cmd_estimate(&config)?;
            eprint!("{diagnostics}");
            emit(&config, &table)
        }
        Command::Simulate(_) => emit(&config, &cmd_simulate(&config)?),
        Command::InspectData(_) => emit(&config, &cmd_inspect_data(&config)?),
        Command::ShowConfig => emit(&config, &config.to_toml()?),
    }
}

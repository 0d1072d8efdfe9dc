//! Class effects from a dummy regression of the response on the policy
//! classes, with optional inverse-propensity weights, and table rendering.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baseline::{response_a1, response_a2, BaselineFit};
use crate::data::Panel;
use crate::propensity::PropensityFit;
use crate::regress::{least_squares, CovarianceKind, RegressError};
use crate::treatment::{TreatmentAssignment, CLASS_NAMES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EffectsError {
    #[error("class {0} has no observations in sample")]
    EmptyCell(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("effect regression failed: {0}")]
    Regress(#[from] RegressError),
    #[error("results mix parameterizations")]
    MixedParameterization,
    #[error("results have different sample sizes")]
    MixedSampleSize,
    #[error("no results to render")]
    NoResults,
    #[error("unknown {kind} '{value}'")]
    Unknown { kind: &'static str, value: String },
}

/// Which response and which weights enter the regression.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Forecast-baseline response, inverse-propensity weights.
    WlsA2,
    /// Forecast-baseline response, unit weights.
    OlsA2,
    /// Realized growth response, inverse-propensity weights.
    WlsA1,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::WlsA2, Variant::OlsA2, Variant::WlsA1];

    pub fn weighted(self) -> bool {
        self != Variant::OlsA2
    }

    pub fn forecast_response(self) -> bool {
        self != Variant::WlsA1
    }

    /// Column heading used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::WlsA2 => "WLS (A2)",
            Variant::OlsA2 => "OLS (A2)",
            Variant::WlsA1 => "WLS (A1)",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::WlsA2 => "wls-a2",
            Variant::OlsA2 => "ols-a2",
            Variant::WlsA1 => "wls-a1",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variant {
    type Err = EffectsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "wls-a2" => Ok(Variant::WlsA2),
            "ols-a2" => Ok(Variant::OlsA2),
            "wls-a1" => Ok(Variant::WlsA1),
            _ => Err(EffectsError::Unknown {
                kind: "variant",
                value: s.to_string(),
            }),
        }
    }
}

/// How the four class dummies enter the design.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Intercept for class 1 plus offsets for classes 2..J.
    #[default]
    ReferenceCoded,
    /// One dummy per class, no intercept; coefficients are class means.
    CellMeans,
}

impl Parameterization {
    pub fn key(self) -> &'static str {
        match self {
            Parameterization::ReferenceCoded => "ref",
            Parameterization::CellMeans => "cell",
        }
    }
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Parameterization {
    type Err = EffectsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ref" | "reference" | "reference_coded" => Ok(Parameterization::ReferenceCoded),
            "cell" | "cell_means" => Ok(Parameterization::CellMeans),
            _ => Err(EffectsError::Unknown {
                kind: "parameterization",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub variant: Variant,
    pub parameterization: Parameterization,
    pub betas: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub stars: Vec<String>,
    pub r_squared: f64,
    pub n: usize,
}

/// Significance marker: `***` below 0.001, `**` below 0.01, `*` below 0.05.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Dummy design for the given labels.
pub fn design(assignment: &TreatmentAssignment, param: Parameterization) -> DMatrix<f64> {
    let mut d = assignment.dummies();
    if param == Parameterization::ReferenceCoded {
        d.column_mut(0).fill(1.0);
    }
    d
}

/// Regresses a response on the class dummies. `weights` of `None` means OLS.
pub fn estimate_response(
    response: &[f64],
    assignment: &TreatmentAssignment,
    weights: Option<&[f64]>,
    variant: Variant,
    param: Parameterization,
    covariance: CovarianceKind,
) -> Result<EstimationResult, EffectsError> {
    let n = assignment.len();
    if response.len() != n {
        return Err(EffectsError::DimensionMismatch(format!(
            "{} responses for {n} labels",
            response.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(EffectsError::DimensionMismatch(format!("{} weights for {n} labels", w.len())));
        }
    }
    if let Some(j) = assignment.counts().iter().position(|&c| c == 0) {
        return Err(EffectsError::EmptyCell(j + 1));
    }
    let x = design(assignment, param);
    let y = DVector::from_column_slice(response);
    let w = weights.map(DVector::from_column_slice);
    let fit = least_squares(&x, &y, w.as_ref(), covariance)?;
    let p_values: Vec<f64> = fit.p_values().iter().copied().collect();
    Ok(EstimationResult {
        variant,
        parameterization: param,
        betas: fit.coefficients.iter().copied().collect(),
        std_errors: fit.std_errors().iter().copied().collect(),
        stars: p_values.iter().map(|&p| stars(p).to_string()).collect(),
        p_values,
        r_squared: fit.r_squared,
        n,
    })
}

/// Runs one variant on a panel with its baseline and propensity fits.
pub fn estimate(
    panel: &Panel,
    baseline: &BaselineFit,
    assignment: &TreatmentAssignment,
    prop: &PropensityFit,
    variant: Variant,
    param: Parameterization,
    covariance: CovarianceKind,
) -> Result<EstimationResult, EffectsError> {
    let n = panel.len();
    if baseline.fitted.len() != n || assignment.len() != n || prop.weights.len() != n {
        return Err(EffectsError::DimensionMismatch(format!(
            "panel {n}, baseline {}, labels {}, weights {}",
            baseline.fitted.len(),
            assignment.len(),
            prop.weights.len()
        )));
    }
    if prop.labels != assignment.labels {
        return Err(EffectsError::DimensionMismatch(
            "propensity fit was built for different labels".into(),
        ));
    }
    let response = if variant.forecast_response() {
        response_a2(panel, baseline)
    } else {
        response_a1(panel)
    };
    let weights = variant.weighted().then_some(prop.weights.as_slice());
    estimate_response(&response, assignment, weights, variant, param, covariance)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl FromStr for TableFormat {
    type Err = EffectsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(TableFormat::Text),
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            _ => Err(EffectsError::Unknown {
                kind: "format",
                value: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableFormat::Text => "text",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        })
    }
}

/// Row labels for the coefficient rows.
pub fn term_names(param: Parameterization) -> Vec<String> {
    CLASS_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| {
            if j == 0 && param == Parameterization::ReferenceCoded {
                format!("{name} (Intercept)")
            } else {
                name.to_string()
            }
        })
        .collect()
}

/// Four-decimal fixed format. Ties are broken to even on the exact binary
/// value, so `-0.00284999` prints as `-0.0028`.
pub fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

#[derive(Serialize)]
struct JsonResult<'a> {
    variant: Variant,
    parameterization: Parameterization,
    terms: &'a [String],
    betas: &'a [f64],
    std_errors: &'a [f64],
    p_values: &'a [f64],
    stars: &'a [String],
    r_squared: f64,
    n: usize,
}

#[derive(Serialize)]
struct JsonTable<'a> {
    results: Vec<JsonResult<'a>>,
}

pub fn render_table(results: &[EstimationResult], format: TableFormat) -> Result<String, EffectsError> {
    let first = results.first().ok_or(EffectsError::NoResults)?;
    if results.iter().any(|r| r.parameterization != first.parameterization) {
        return Err(EffectsError::MixedParameterization);
    }
    if results.iter().any(|r| r.n != first.n) {
        return Err(EffectsError::MixedSampleSize);
    }
    let terms = term_names(first.parameterization);
    Ok(match format {
        TableFormat::Text => render_text(results, &terms),
        TableFormat::Csv => render_csv(results, &terms),
        TableFormat::Json => {
            let table = JsonTable {
                results: results
                    .iter()
                    .map(|r| JsonResult {
                        variant: r.variant,
                        parameterization: r.parameterization,
                        terms: &terms,
                        betas: &r.betas,
                        std_errors: &r.std_errors,
                        p_values: &r.p_values,
                        stars: &r.stars,
                        r_squared: r.r_squared,
                        n: r.n,
                    })
                    .collect(),
            };
            let mut s = serde_json::to_string_pretty(&table).expect("plain data serializes");
            s.push('\n');
            s
        }
    })
}

fn render_text(results: &[EstimationResult], terms: &[String]) -> String {
    const COL: usize = 12;
    let label_width = terms
        .iter()
        .map(String::len)
        .chain(["Number of observations".len()])
        .max()
        .unwrap_or(0);
    let mut s = String::new();
    let _ = write!(s, "{:label_width$}", "");
    for r in results {
        let _ = write!(s, "  {:>COL$}", r.variant.label());
    }
    s.push('\n');
    let rule = "-".repeat(label_width + results.len() * (COL + 2));
    let _ = writeln!(s, "{rule}");
    for (j, term) in terms.iter().enumerate() {
        let _ = write!(s, "{term:label_width$}");
        for r in results {
            // stars hang to the right of the aligned number
            let cell = format!("{}{:<3}", fixed4(r.betas[j]), r.stars[j]);
            let _ = write!(s, "  {cell:>COL$}");
        }
        s.push('\n');
        let _ = write!(s, "{:label_width$}", "");
        for r in results {
            let cell = format!("({})   ", fixed4(r.std_errors[j]));
            let _ = write!(s, "  {cell:>COL$}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "{rule}");
    let _ = write!(s, "{:label_width$}", "Number of observations");
    for r in results {
        let _ = write!(s, "  {:>COL$}", format!("{}   ", r.n));
    }
    s.push('\n');
    let _ = write!(s, "{:label_width$}", "R-squared");
    for r in results {
        let _ = write!(s, "  {:>COL$}", format!("{}   ", fixed4(r.r_squared)));
    }
    s.push('\n');
    s.push_str("Standard errors in parentheses. *** p<0.001, ** p<0.01, * p<0.05\n");
    s
}

fn render_csv(results: &[EstimationResult], terms: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["term".to_string()];
    for r in results {
        for field in ["beta", "se", "p", "stars"] {
            header.push(format!("{}_{field}", r.variant.key().replace('-', "_")));
        }
    }
    w.write_record(&header).expect("in-memory write");
    for (j, term) in terms.iter().enumerate() {
        let mut row = vec![term.clone()];
        for r in results {
            row.push(r.betas[j].to_string());
            row.push(r.std_errors[j].to_string());
            row.push(r.p_values[j].to_string());
            row.push(r.stars[j].clone());
        }
        w.write_record(&row).expect("in-memory write");
    }
    for (name, value) in [("n", None), ("r_squared", Some(()))] {
        let mut row = vec![name.to_string()];
        for r in results {
            row.push(match value {
                None => r.n.to_string(),
                Some(()) => r.r_squared.to_string(),
            });
            row.extend([String::new(), String::new(), String::new()]);
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

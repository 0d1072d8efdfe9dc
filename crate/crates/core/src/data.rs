//! Quarterly macro data: CSV ingestion, series transforms and panel alignment.
//!
//! A [`MacroTable`] is a validated block of quarterly series with no gaps and no
//! missing values. Derived series are described with small expressions such as
//! `diff(log(rgdp))` (see [`Series`]), and [`assemble_panel`] lines everything up
//! into estimation rows `(y_t, y_{t+1}, g_t, x_{t-1}, z_{t-1})`.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("data file not found: {0}")]
    NotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: unparsable date `{value}`")]
    BadDate { row: usize, value: String },
    #[error("row {row}: duplicate quarter {quarter}")]
    DuplicateQuarter { row: usize, quarter: Quarter },
    #[error("gap in quarters: {missing} is missing (after {after})")]
    QuarterGap { missing: Quarter, after: Quarter },
    #[error("row {row}, column `{column}`: non-finite value `{value}`")]
    NonFinite {
        row: usize,
        column: String,
        value: String,
    },
    #[error("column `{column}` has {got} values, expected {expected}")]
    LengthMismatch {
        column: String,
        got: usize,
        expected: usize,
    },
    #[error("log of non-positive value {value} in `{column}` at {quarter}")]
    NonPositiveLog {
        column: String,
        quarter: Quarter,
        value: f64,
    },
    #[error("unknown transform `{0}` (expected log, diff or lag)")]
    UnknownTransform(String),
    #[error("malformed series expression `{0}`")]
    BadExpression(String),
    #[error("insufficient rows after alignment: {got} usable, need at least {need}")]
    InsufficientRows { got: usize, need: usize },
    #[error("empty table")]
    Empty,
}

/// Calendar quarter, e.g. `1992Q1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    year: i32,
    quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Option<Self> {
        (1..=4).contains(&quarter).then_some(Quarter { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    /// Quarters since year 0, Q1.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        Quarter {
            year: ordinal.div_euclid(4) as i32,
            quarter: (ordinal.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn next(self) -> Self {
        Self::from_ordinal(self.ordinal() + 1)
    }

    pub fn prev(self) -> Self {
        Self::from_ordinal(self.ordinal() - 1)
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = ();

    /// Accepts `YYYYQn` (case-insensitive, optional `-` or space before the
    /// `Q`) and ISO dates `YYYY-MM-DD`, which map to the quarter containing
    /// the month.
    fn from_str(s: &str) -> Result<Self, ()> {
        let s = s.trim();
        let upper = s.to_ascii_uppercase();
        if let Some(pos) = upper.find('Q') {
            let year = upper[..pos].trim_end_matches(['-', ' ']);
            let q = &upper[pos + 1..];
            let year: i32 = year.parse().map_err(|_| ())?;
            let q: u8 = q.parse().map_err(|_| ())?;
            return Quarter::new(year, q).ok_or(());
        }
        let mut parts = s.split('-');
        let (Some(y), Some(m), Some(d), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(());
        };
        if y.len() != 4 || m.len() != 2 || d.len() != 2 {
            return Err(());
        }
        let year: i32 = y.parse().map_err(|_| ())?;
        let month: u8 = m.parse().map_err(|_| ())?;
        let day: u8 = d.parse().map_err(|_| ())?;
        if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
            return Err(());
        }
        Quarter::new(year, (month - 1) / 3 + 1).ok_or(())
    }
}

/// Validated quarterly multi-series table.
///
/// Dates are strictly consecutive quarters, every column has one finite value
/// per date, and column order is preserved from the source.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroTable {
    dates: Vec<Quarter>,
    columns: IndexMap<String, Vec<f64>>,
}

impl MacroTable {
    pub fn new(dates: Vec<Quarter>, columns: IndexMap<String, Vec<f64>>) -> Result<Self, DataError> {
        if dates.is_empty() {
            return Err(DataError::Empty);
        }
        for pair in dates.windows(2) {
            if pair[1] == pair[0] {
                return Err(DataError::DuplicateQuarter {
                    row: 0,
                    quarter: pair[1],
                });
            }
            if pair[1] != pair[0].next() {
                return Err(DataError::QuarterGap {
                    missing: pair[0].next(),
                    after: pair[0],
                });
            }
        }
        for (name, values) in &columns {
            if values.len() != dates.len() {
                return Err(DataError::LengthMismatch {
                    column: name.clone(),
                    got: values.len(),
                    expected: dates.len(),
                });
            }
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    row: i + 1,
                    column: name.clone(),
                    value: values[i].to_string(),
                });
            }
        }
        Ok(MacroTable { dates, columns })
    }

    pub fn dates(&self) -> &[Quarter] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64], DataError> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.columns.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Writes the table as CSV with a `date` column first. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W, date_col: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![date_col.to_string()];
        header.extend(self.columns.keys().cloned());
        w.write_record(&header)?;
        for (i, date) in self.dates.iter().enumerate() {
            let mut record = vec![date.to_string()];
            record.extend(self.columns.values().map(|col| col[i].to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, date_col: &str) -> Result<(), DataError> {
        self.write_csv(File::create(path)?, date_col)
    }

    /// Copy restricted to rows `start..` (used after lagging transforms).
    fn trim_front(&self, start: usize) -> Self {
        MacroTable {
            dates: self.dates[start..].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|(k, v)| (k.clone(), v[start..].to_vec()))
                .collect(),
        }
    }
}

/// Which columns a CSV file must provide.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date_col: String,
    /// Numeric columns to load. Empty means every non-date column.
    pub required: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date_col: "date".into(),
            required: ["rgdp", "gov_spend", "ted", "commodity", "unemp"]
                .map(String::from)
                .to_vec(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<MacroTable, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::NotFound(path.display().to_string()),
        _ => DataError::Io(e),
    })?;
    read_csv(file, schema)
}

/// Parses quarterly CSV from any reader. Rows may appear in any order; the
/// result is sorted by date. Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<MacroTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let date_idx = find(&schema.date_col)?;
    let wanted: Vec<(String, usize)> = if schema.required.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != date_idx)
            .map(|(i, h)| (h.to_string(), i))
            .collect()
    } else {
        schema
            .required
            .iter()
            .map(|name| Ok((name.clone(), find(name)?)))
            .collect::<Result<_, DataError>>()?
    };

    let mut rows: Vec<(Quarter, usize, Vec<f64>)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let raw_date = record.get(date_idx).unwrap_or("");
        let date: Quarter = raw_date.parse().map_err(|_| DataError::BadDate {
            row,
            value: raw_date.to_string(),
        })?;
        let mut values = Vec::with_capacity(wanted.len());
        for (name, idx) in &wanted {
            let raw = record.get(*idx).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(DataError::NonFinite {
                        row,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        rows.push((date, row, values));
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    rows.sort_by_key(|(d, _, _)| *d);
    for pair in rows.windows(2) {
        let (prev, _, _) = &pair[0];
        let (cur, row, _) = &pair[1];
        if cur == prev {
            return Err(DataError::DuplicateQuarter {
                row: *row,
                quarter: *cur,
            });
        }
        if *cur != prev.next() {
            return Err(DataError::QuarterGap {
                missing: prev.next(),
                after: *prev,
            });
        }
    }

    let dates = rows.iter().map(|(d, _, _)| *d).collect();
    let mut columns: IndexMap<String, Vec<f64>> = wanted
        .iter()
        .map(|(name, _)| (name.clone(), Vec::with_capacity(rows.len())))
        .collect();
    for (_, _, values) in rows {
        for (col, v) in columns.values_mut().zip(values) {
            col.push(v);
        }
    }
    MacroTable::new(dates, columns)
}

/// Series expression over raw columns: a column name, or `log(..)`,
/// `diff(..)` (first difference) and `lag(..)` (one-quarter lag) applied to
/// another expression.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Series {
    Column(String),
    Log(Box<Series>),
    Diff(Box<Series>),
    Lag(Box<Series>),
}

impl Series {
    pub fn column(name: impl Into<String>) -> Self {
        Series::Column(name.into())
    }

    pub fn log(self) -> Self {
        Series::Log(Box::new(self))
    }

    pub fn diff(self) -> Self {
        Series::Diff(Box::new(self))
    }

    pub fn lag(self) -> Self {
        Series::Lag(Box::new(self))
    }

    /// Number of leading quarters without a value.
    pub fn warmup(&self) -> usize {
        match self {
            Series::Column(_) => 0,
            Series::Log(inner) => inner.warmup(),
            Series::Diff(inner) | Series::Lag(inner) => inner.warmup() + 1,
        }
    }

    /// Raw columns the expression reads.
    pub fn source_columns(&self) -> Vec<&str> {
        match self {
            Series::Column(c) => vec![c.as_str()],
            Series::Log(i) | Series::Diff(i) | Series::Lag(i) => i.source_columns(),
        }
    }

    /// Evaluates over the full date range of `table`; the first
    /// [`warmup`](Self::warmup) entries are `None`.
    pub fn evaluate(&self, table: &MacroTable) -> Result<Vec<Option<f64>>, DataError> {
        match self {
            Series::Column(name) => Ok(table.column(name)?.iter().map(|&v| Some(v)).collect()),
            Series::Log(inner) => inner
                .evaluate(table)?
                .into_iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Some(v) if v > 0.0 => Ok(Some(v.ln())),
                    Some(v) => Err(DataError::NonPositiveLog {
                        column: inner.to_string(),
                        quarter: table.dates[i],
                        value: v,
                    }),
                    None => Ok(None),
                })
                .collect(),
            Series::Diff(inner) => {
                let v = inner.evaluate(table)?;
                Ok(std::iter::once(None)
                    .chain(v.windows(2).map(|w| Some(w[1]? - w[0]?)))
                    .take(v.len())
                    .collect())
            }
            Series::Lag(inner) => {
                let v = inner.evaluate(table)?;
                Ok(std::iter::once(None).chain(v.iter().copied()).take(v.len()).collect())
            }
        }
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Series::Column(c) => f.write_str(c),
            Series::Log(i) => write!(f, "log({i})"),
            Series::Diff(i) => write!(f, "diff({i})"),
            Series::Lag(i) => write!(f, "lag({i})"),
        }
    }
}

impl FromStr for Series {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, DataError> {
        let t = s.trim();
        let bad = || DataError::BadExpression(s.to_string());
        match t.find('(') {
            None => {
                if t.is_empty() || t.contains(')') {
                    return Err(bad());
                }
                Ok(Series::Column(t.to_string()))
            }
            Some(open) => {
                let inner = t[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                let inner: Series = inner.parse()?;
                match t[..open].trim() {
                    "log" => Ok(inner.log()),
                    "diff" => Ok(inner.diff()),
                    "lag" => Ok(inner.lag()),
                    other => Err(DataError::UnknownTransform(other.to_string())),
                }
            }
        }
    }
}

impl Serialize for Series {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Series {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Adds each derived series as a column named by its canonical expression,
/// then drops the leading quarters where any derived column is undefined.
pub fn transform(table: &MacroTable, derived: &[Series]) -> Result<MacroTable, DataError> {
    let mut evaluated = Vec::with_capacity(derived.len());
    for series in derived {
        evaluated.push((series.to_string(), series.evaluate(table)?));
    }
    let start = derived.iter().map(Series::warmup).max().unwrap_or(0);
    if start >= table.len() {
        return Err(DataError::InsufficientRows {
            got: 0,
            need: 1,
        });
    }
    let mut out = table.trim_front(start);
    for (name, values) in evaluated {
        let values = values[start..].iter().map(|v| v.expect("past warmup")).collect();
        out.columns.insert(name, values);
    }
    Ok(out)
}

/// How raw columns map onto panel quantities.
///
/// The output level is `log(output_col)` and the policy growth rate is
/// `diff(log(policy_col))`. Covariates and forecaster inputs are read one
/// quarter before the row date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub output_col: String,
    pub policy_col: String,
    pub covariates: Vec<Series>,
    pub forecaster_inputs: Vec<Series>,
    pub classes: usize,
}

impl Default for PanelConfig {
    fn default() -> Self {
        let p = |s: &str| s.parse::<Series>().expect("valid default expression");
        PanelConfig {
            output_col: "rgdp".into(),
            policy_col: "gov_spend".into(),
            covariates: vec![
                p("diff(log(rgdp))"),
                p("diff(log(commodity))"),
                p("diff(unemp)"),
            ],
            forecaster_inputs: vec![p("log(rgdp)"), p("ted"), p("log(commodity)"), p("log(unemp)")],
            classes: 4,
        }
    }
}

impl PanelConfig {
    /// Raw columns this configuration reads.
    pub fn required_columns(&self) -> Vec<String> {
        let mut cols = vec![self.output_col.clone(), self.policy_col.clone()];
        for s in self.covariates.iter().chain(&self.forecaster_inputs) {
            for c in s.source_columns() {
                if !cols.iter().any(|x| x == c) {
                    cols.push(c.to_string());
                }
            }
        }
        cols
    }
}

/// Aligned estimation rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub dates: Vec<Quarter>,
    /// Log output level at `t`.
    pub y: Vec<f64>,
    /// Log output level at `t + 1`.
    pub y_next: Vec<f64>,
    /// Policy-spending growth at `t`.
    pub g: Vec<f64>,
    /// Covariates dated `t - 1`, one row per date.
    pub x: DMatrix<f64>,
    /// Forecaster inputs dated `t - 1`.
    pub z: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
}

impl Panel {
    /// Builds a panel from already aligned pieces, checking shapes and
    /// finiteness.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dates: Vec<Quarter>,
        y: Vec<f64>,
        y_next: Vec<f64>,
        g: Vec<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        x_names: Vec<String>,
        z_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = dates.len();
        let check = |name: &str, len: usize| {
            if len != n {
                Err(DataError::LengthMismatch {
                    column: name.to_string(),
                    got: len,
                    expected: n,
                })
            } else {
                Ok(())
            }
        };
        check("y", y.len())?;
        check("y_next", y_next.len())?;
        check("g", g.len())?;
        check("x", x.nrows())?;
        check("z", z.nrows())?;
        check("x_names", if x_names.len() == x.ncols() { n } else { x_names.len() })?;
        check("z_names", if z_names.len() == z.ncols() { n } else { z_names.len() })?;
        let cols: [(&str, &[f64]); 5] = [
            ("y", &y),
            ("y_next", &y_next),
            ("g", &g),
            ("x", x.as_slice()),
            ("z", z.as_slice()),
        ];
        for (name, values) in cols {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    row: i % n.max(1) + 1,
                    column: name.to_string(),
                    value: values[i].to_string(),
                });
            }
        }
        Ok(Panel {
            dates,
            y,
            y_next,
            g,
            x,
            z,
            x_names,
            z_names,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Aligns raw quarterly series into estimation rows. Row `t` is kept when
/// `y_t`, `y_{t+1}`, `g_t` and every covariate and forecaster input at `t-1`
/// are defined.
pub fn assemble_panel(table: &MacroTable, config: &PanelConfig) -> Result<Panel, DataError> {
    let output = Series::column(&config.output_col).log().evaluate(table)?;
    let policy = Series::column(&config.policy_col).log().diff().evaluate(table)?;
    let covariates = config
        .covariates
        .iter()
        .map(|s| s.evaluate(table))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs = config
        .forecaster_inputs
        .iter()
        .map(|s| s.evaluate(table))
        .collect::<Result<Vec<_>, _>>()?;

    let k = covariates.len();
    let l = inputs.len();
    let need = config.classes + k + 1;
    let (mut dates, mut y, mut y_next, mut g) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut x, mut z) = (Vec::new(), Vec::new());
    for t in 1..table.len().saturating_sub(1) {
        let lagged = |cols: &[Vec<Option<f64>>]| cols.iter().map(|c| c[t - 1]).collect::<Option<Vec<f64>>>();
        let (Some(yt), Some(yn), Some(gt), Some(xs), Some(zs)) =
            (output[t], output[t + 1], policy[t], lagged(&covariates), lagged(&inputs))
        else {
            continue;
        };
        dates.push(table.dates()[t]);
        y.push(yt);
        y_next.push(yn);
        g.push(gt);
        x.extend(xs);
        z.extend(zs);
    }
    let n = dates.len();
    if n < need {
        return Err(DataError::InsufficientRows { got: n, need });
    }
    Panel::new(
        dates,
        y,
        y_next,
        g,
        DMatrix::from_row_slice(n, k, &x),
        DMatrix::from_row_slice(n, l, &z),
        config.covariates.iter().map(Series::to_string).collect(),
        config.forecaster_inputs.iter().map(Series::to_string).collect(),
    )
}

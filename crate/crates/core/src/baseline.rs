//! Counterfactual baseline: a linear forecast of the output level at `t` from
//! the macro vector dated `t - 1`.
//!
//! The forecaster only ever sees `y` and `z`. Spending growth and the policy
//! classes never enter, which is what makes the forecast-based response free
//! of the treatment by construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Panel;
use crate::regress::{ols_fit, FitResult, RegressError};

/// Rows fitted in-sample before the expanding window starts forecasting.
pub const EXPANDING_FIRST_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("forecaster regression failed: {0}")]
    Regress(#[from] RegressError),
    #[error("expanding window needs at least {need} rows, panel has {got}")]
    TooFewRows { got: usize, need: usize },
    #[error("empty panel")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// One regression over every row; the forecast is the fitted value.
    #[default]
    FullSample,
    /// Row `t` is forecast from a regression on rows strictly before `t`.
    Expanding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineFit {
    /// Full-sample regression of `y_t` on `(1, z_{t-1})`.
    pub projection: FitResult,
    /// Baseline forecast for each panel row.
    pub fitted: Vec<f64>,
    pub mode: BaselineMode,
}

impl BaselineFit {
    pub fn in_sample(&self) -> bool {
        self.mode == BaselineMode::FullSample
    }
}

fn with_intercept(z: &DMatrix<f64>) -> DMatrix<f64> {
    z.clone().insert_column(0, 1.0)
}

pub fn fit_baseline(panel: &Panel, mode: BaselineMode) -> Result<BaselineFit, BaselineError> {
    fit_forecaster(&panel.y, &panel.z, mode)
}

/// Forecasts `y` from `z` (already lagged) plus an intercept.
pub fn fit_forecaster(y: &[f64], z: &DMatrix<f64>, mode: BaselineMode) -> Result<BaselineFit, BaselineError> {
    let n = y.len();
    if n == 0 {
        return Err(BaselineError::Empty);
    }
    let design = with_intercept(z);
    let target = DVector::from_column_slice(y);
    let projection = ols_fit(&design, &target)?;

    let fitted = match mode {
        BaselineMode::FullSample => projection.fitted.iter().copied().collect(),
        BaselineMode::Expanding => {
            if n < EXPANDING_FIRST_WINDOW {
                return Err(BaselineError::TooFewRows {
                    got: n,
                    need: EXPANDING_FIRST_WINDOW,
                });
            }
            let window = EXPANDING_FIRST_WINDOW;
            let first = ols_fit(&design.rows(0, window).into_owned(), &target.rows(0, window).into_owned())?;
            let mut fitted: Vec<f64> = first.fitted.iter().copied().collect();
            for t in window..n {
                let fit = ols_fit(&design.rows(0, t).into_owned(), &target.rows(0, t).into_owned())?;
                fitted.push((design.row(t) * &fit.coefficients)[0]);
            }
            fitted
        }
    };
    Ok(BaselineFit { projection, fitted, mode })
}

/// `y_{t+1} - yhat_t`: next-quarter output over the forecast baseline.
pub fn response_a2(panel: &Panel, fit: &BaselineFit) -> Vec<f64> {
    panel.y_next.iter().zip(&fit.fitted).map(|(next, base)| next - base).collect()
}

/// `y_{t+1} - y_t`: realized one-quarter growth.
pub fn response_a1(panel: &Panel) -> Vec<f64> {
    panel.y_next.iter().zip(&panel.y).map(|(next, cur)| next - cur).collect()
}

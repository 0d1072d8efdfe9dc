//! Least-squares and multinomial-logit kernels.
//!
//! Linear fits go through a thin SVD of the column-equilibrated, weight-scaled
//! design; the normal equations are never formed. The multinomial logit is
//! fitted by Newton-Raphson with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Designs with a condition number (after column equilibration) above this are
/// rejected as rank deficient.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need more observations than parameters (n = {n}, p = {p})")]
    TooFewObservations { n: usize, p: usize },
    #[error("design is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("weight {index} is not positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("label {label} at row {row} outside 1..={classes}")]
    InvalidLabel { row: usize, label: usize, classes: usize },
    #[error("class {0} has no observations")]
    EmptyClass(usize),
    #[error("perfect separation detected after {iterations} iterations (max |coef| = {max_coef:.3e})")]
    Separation { iterations: usize, max_coef: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// `s^2 (X'WX)^-1`.
    #[default]
    Classical,
    /// HC1 sandwich, `n/(n-p) (X'WX)^-1 X'W diag(e^2) W X (X'WX)^-1`.
    Robust,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub coefficients: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Unweighted residuals `y - X b`.
    pub residuals: DVector<f64>,
    pub fitted: DVector<f64>,
    pub dof: usize,
    /// Weighted residual sum of squares (plain RSS for OLS).
    pub rss: f64,
    pub weighted: bool,
    /// Against the weighted mean for WLS.
    pub r_squared: f64,
    pub covariance_kind: CovarianceKind,
}

impl FitResult {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(|v| v.max(0.0).sqrt())
    }

    pub fn t_statistics(&self) -> DVector<f64> {
        self.coefficients.component_div(&self.std_errors())
    }

    /// Two-sided p-values from a t distribution with `dof` degrees of freedom.
    pub fn p_values(&self) -> DVector<f64> {
        let dist = StudentsT::new(0.0, 1.0, self.dof as f64).expect("dof >= 1");
        self.t_statistics().map(|t| {
            if t.is_nan() {
                1.0
            } else {
                (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
            }
        })
    }
}

pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult, RegressError> {
    least_squares(x, y, None, CovarianceKind::Classical)
}

pub fn wls_fit(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<FitResult, RegressError> {
    least_squares(x, y, Some(w), CovarianceKind::Classical)
}

/// Weighted or unweighted least squares with the requested covariance.
pub fn least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: Option<&DVector<f64>>,
    kind: CovarianceKind,
) -> Result<FitResult, RegressError> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(RegressError::DimensionMismatch(format!(
            "X has {n} rows but y has {}",
            y.len()
        )));
    }
    if n <= p {
        return Err(RegressError::TooFewObservations { n, p });
    }
    let weights = match w {
        Some(w) => {
            if w.len() != n {
                return Err(RegressError::DimensionMismatch(format!(
                    "X has {n} rows but w has {}",
                    w.len()
                )));
            }
            if let Some(index) = w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(RegressError::NonPositiveWeight { index, value: w[index] });
            }
            // Relative weights only; keeps the fit invariant to rescaling.
            let mean = w.mean();
            w.map(|v| v / mean)
        }
        None => DVector::from_element(n, 1.0),
    };
    let root_w = weights.map(f64::sqrt);

    let mut a = x.clone();
    for (mut row, rw) in a.row_iter_mut().zip(root_w.iter()) {
        row *= *rw;
    }
    let b = y.component_mul(&root_w);
    let scale = DVector::from_iterator(
        p,
        a.column_iter().map(|c| {
            let norm = c.norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                0.0
            }
        }),
    );
    if scale.iter().any(|&s| s == 0.0) {
        return Err(RegressError::RankDeficient { condition: f64::INFINITY });
    }
    for (mut col, s) in a.column_iter_mut().zip(scale.iter()) {
        col *= *s;
    }

    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(RegressError::RankDeficient { condition });
    }
    let u = svd.u.as_ref().expect("requested U");
    let v = svd.v_t.as_ref().expect("requested V^T").transpose();

    let ut_b = u.transpose() * &b;
    let scaled_coef = &v * ut_b.component_div(sv);
    let coefficients = scaled_coef.component_mul(&scale);

    // (A'A)^-1 in the original parameterization: D V S^-2 V' D.
    let vs = DMatrix::from_fn(p, p, |i, j| v[(i, j)] / sv[j]);
    let mut bread = &vs * vs.transpose();
    for i in 0..p {
        for j in 0..p {
            bread[(i, j)] *= scale[i] * scale[j];
        }
    }

    let fitted = x * &coefficients;
    let residuals = y - &fitted;
    let dof = n - p;
    let wrss: f64 = residuals.iter().zip(weights.iter()).map(|(e, w)| w * e * e).sum();

    let covariance = match kind {
        CovarianceKind::Classical => &bread * (wrss / dof as f64),
        CovarianceKind::Robust => {
            let mut meat = DMatrix::zeros(p, p);
            for t in 0..n {
                let xt = x.row(t).transpose();
                let we = weights[t] * residuals[t];
                meat += (&xt * xt.transpose()) * (we * we);
            }
            (&bread * meat * &bread) * (n as f64 / dof as f64)
        }
    };
    let covariance = (&covariance + covariance.transpose()) * 0.5;

    let wsum = weights.sum();
    let ybar = y.iter().zip(weights.iter()).map(|(y, w)| w * y).sum::<f64>() / wsum;
    let tss: f64 = y.iter().zip(weights.iter()).map(|(y, w)| w * (y - ybar).powi(2)).sum();
    let r_squared = if tss > 0.0 {
        1.0 - wrss / tss
    } else if wrss > 0.0 {
        0.0
    } else {
        1.0
    };
    let rss = match w {
        Some(w) => residuals.iter().zip(w.iter()).map(|(e, w)| w * e * e).sum(),
        None => wrss,
    };

    Ok(FitResult {
        coefficients,
        covariance,
        residuals,
        fitted,
        dof,
        rss,
        weighted: w.is_some(),
        r_squared,
        covariance_kind: kind,
    })
}

/// Stopping rules for [`mnl_fit_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MnlOptions {
    /// Converged when the max-norm of the score falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Coefficients beyond this magnitude count as divergence.
    pub divergence: f64,
    /// An observation whose own-class probability is within this of 1 marks
    /// the likelihood as unbounded.
    pub saturation: f64,
}

impl Default for MnlOptions {
    fn default() -> Self {
        MnlOptions {
            tolerance: 1e-8,
            max_iterations: 100,
            divergence: 1e4,
            saturation: 1e-8,
        }
    }
}

/// Multinomial logit with class 1 as reference.
#[derive(Clone, Debug, PartialEq)]
pub struct MnlFit {
    /// Row `j` holds `(intercept, slopes...)` for class `j + 2`.
    pub coefficients: DMatrix<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl MnlFit {
    pub fn classes(&self) -> usize {
        self.coefficients.nrows() + 1
    }

    pub fn covariates(&self) -> usize {
        self.coefficients.ncols() - 1
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<(), RegressError> {
    let mut counts = vec![0usize; classes];
    for (row, &label) in labels.iter().enumerate() {
        if label == 0 || label > classes {
            return Err(RegressError::InvalidLabel { row, label, classes });
        }
        counts[label - 1] += 1;
    }
    match counts.iter().position(|&c| c == 0) {
        Some(j) => Err(RegressError::EmptyClass(j + 1)),
        None => Ok(()),
    }
}

/// Softmax of one row of class scores, shifted by the row maximum.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn class_scores(coefficients: &DMatrix<f64>, x: &DMatrix<f64>, t: usize) -> Vec<f64> {
    let k = x.ncols();
    let mut scores = Vec::with_capacity(coefficients.nrows() + 1);
    scores.push(0.0);
    for j in 0..coefficients.nrows() {
        let mut s = coefficients[(j, 0)];
        for c in 0..k {
            s += coefficients[(j, c + 1)] * x[(t, c)];
        }
        scores.push(s);
    }
    scores
}

/// Log-likelihood and class probabilities at `coefficients`.
fn evaluate(coefficients: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[usize]) -> (f64, DMatrix<f64>) {
    let n = x.nrows();
    let classes = coefficients.nrows() + 1;
    let mut probs = DMatrix::zeros(n, classes);
    let mut ll = 0.0;
    for t in 0..n {
        let scores = class_scores(coefficients, x, t);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        ll += scores[labels[t] - 1] - lse;
        for (j, s) in scores.iter().enumerate() {
            probs[(t, j)] = (s - lse).exp();
        }
    }
    (ll, probs)
}

/// Score with respect to the coefficient matrix (same layout).
fn score(x: &DMatrix<f64>, labels: &[usize], probs: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let classes = probs.ncols();
    let mut grad = DMatrix::zeros(classes - 1, k + 1);
    for t in 0..n {
        for j in 1..classes {
            let resid = f64::from(labels[t] == j + 1) - probs[(t, j)];
            grad[(j - 1, 0)] += resid;
            for c in 0..k {
                grad[(j - 1, c + 1)] += resid * x[(t, c)];
            }
        }
    }
    grad
}

/// Multinomial log-likelihood of `labels` (1-based) at the given coefficients.
pub fn mnl_log_likelihood(
    coefficients: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
) -> Result<f64, RegressError> {
    check_shapes(coefficients, x, labels)?;
    Ok(evaluate(coefficients, x, labels).0)
}

/// Analytic gradient of [`mnl_log_likelihood`].
pub fn mnl_gradient(
    coefficients: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
) -> Result<DMatrix<f64>, RegressError> {
    check_shapes(coefficients, x, labels)?;
    let (_, probs) = evaluate(coefficients, x, labels);
    Ok(score(x, labels, &probs))
}

fn check_shapes(coefficients: &DMatrix<f64>, x: &DMatrix<f64>, labels: &[usize]) -> Result<(), RegressError> {
    if coefficients.ncols() != x.ncols() + 1 {
        return Err(RegressError::DimensionMismatch(format!(
            "coefficients have {} columns, expected {}",
            coefficients.ncols(),
            x.ncols() + 1
        )));
    }
    if labels.len() != x.nrows() {
        return Err(RegressError::DimensionMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            x.nrows()
        )));
    }
    let classes = coefficients.nrows() + 1;
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l == 0 || l > classes) {
        return Err(RegressError::InvalidLabel { row, label, classes });
    }
    Ok(())
}

/// Negative Hessian, parameters stacked class by class.
fn information(x: &DMatrix<f64>, probs: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = x.shape();
    let m = probs.ncols() - 1;
    let q = k + 1;
    let mut info = DMatrix::zeros(m * q, m * q);
    let mut xt = vec![1.0; q];
    for t in 0..n {
        for c in 0..k {
            xt[c + 1] = x[(t, c)];
        }
        for a in 0..m {
            let pa = probs[(t, a + 1)];
            for b in a..m {
                let pb = probs[(t, b + 1)];
                let h = if a == b { pa * (1.0 - pa) } else { -pa * pb };
                if h == 0.0 {
                    continue;
                }
                for r in 0..q {
                    for s in 0..q {
                        info[(a * q + r, b * q + s)] += h * xt[r] * xt[s];
                    }
                }
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            for r in 0..q {
                for s in 0..q {
                    info[(a * q + r, b * q + s)] = info[(b * q + s, a * q + r)];
                }
            }
        }
    }
    info
}

fn newton_direction(info: DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = info.clone().cholesky() {
        return chol.solve(grad);
    }
    // Singular information (e.g. constant covariates): minimum-norm step.
    let svd = info.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.solve(grad, eps).unwrap_or_else(|_| DVector::zeros(grad.len()))
}

pub fn mnl_fit(x: &DMatrix<f64>, labels: &[usize], classes: usize) -> Result<MnlFit, RegressError> {
    mnl_fit_with(x, labels, classes, &MnlOptions::default())
}

/// Maximum-likelihood multinomial logit of `labels` (1-based) on an intercept
/// plus the columns of `x`, starting from zero coefficients.
pub fn mnl_fit_with(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    options: &MnlOptions,
) -> Result<MnlFit, RegressError> {
    let (n, k) = x.shape();
    if labels.len() != n {
        return Err(RegressError::DimensionMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    if classes < 2 {
        return Err(RegressError::DimensionMismatch("need at least two classes".into()));
    }
    check_labels(labels, classes)?;
    let p = (classes - 1) * (k + 1);
    if n <= p {
        return Err(RegressError::TooFewObservations { n, p });
    }

    let mut coef = DMatrix::zeros(classes - 1, k + 1);
    let (mut ll, mut probs) = evaluate(&coef, x, labels);
    let mut grad = score(x, labels, &probs);
    let mut gnorm = grad.amax();
    let mut iterations = 0;
    let mut converged = gnorm < options.tolerance;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        // Row-major flattening matches the stacking used by `information`.
        let g = DVector::from_iterator(p, grad.transpose().iter().copied());
        let step = newton_direction(information(x, &probs), &g);
        let step = DMatrix::from_row_slice(classes - 1, k + 1, step.as_slice());

        // Near the optimum the predicted gain drops below what the summed
        // log-likelihood can resolve; there the full step is taken as long as
        // the likelihood stays within that resolution.
        let predicted_gain = 0.5 * g.dot(&DVector::from_iterator(p, step.transpose().iter().copied()));
        let resolution = 1e3 * f64::EPSILON * ll.abs().max(1.0);
        let slack = if predicted_gain < resolution { resolution } else { 0.0 };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &coef + &step * scale;
            let (trial_ll, trial_probs) = evaluate(&trial, x, labels);
            if trial_ll >= ll - slack {
                accepted = Some((trial, trial_ll, trial_probs));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll, next_probs)) = accepted else {
            break;
        };
        coef = next;
        ll = next_ll;
        probs = next_probs;
        grad = score(x, labels, &probs);
        gnorm = grad.amax();
        converged = gnorm < options.tolerance;

        let max_coef = coef.amax();
        if max_coef > options.divergence {
            return Err(RegressError::Separation { iterations, max_coef });
        }
    }

    let saturated = (0..n).any(|t| 1.0 - probs[(t, labels[t] - 1)] < options.saturation);
    if saturated {
        return Err(RegressError::Separation {
            iterations,
            max_coef: coef.amax(),
        });
    }

    Ok(MnlFit {
        coefficients: coef,
        log_likelihood: ll,
        converged,
        iterations,
        gradient_norm: gnorm,
    })
}

/// Class probabilities (`m x J`) for new covariate rows.
pub fn mnl_predict(fit: &MnlFit, x: &DMatrix<f64>) -> Result<DMatrix<f64>, RegressError> {
    if x.ncols() != fit.covariates() {
        return Err(RegressError::DimensionMismatch(format!(
            "model has {} covariates, X has {} columns",
            fit.covariates(),
            x.ncols()
        )));
    }
    let classes = fit.classes();
    let mut probs = DMatrix::zeros(x.nrows(), classes);
    for t in 0..x.nrows() {
        for (j, p) in softmax(&class_scores(&fit.coefficients, x, t)).into_iter().enumerate() {
            probs[(t, j)] = p;
        }
    }
    Ok(probs)
}

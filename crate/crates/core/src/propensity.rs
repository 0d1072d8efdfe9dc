//! Generalized propensity score for the policy classes and the inverse
//! probability weights built from it.
//!
//! Fitted class probabilities are floored at `e_min` (the no-empty-cell bound)
//! and the rest of each row is rescaled so it still sums to one. Each row's
//! weight is the inverse of the floored probability of the class it actually
//! received.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::regress::{mnl_fit, mnl_predict, MnlFit, RegressError};
use crate::treatment::TreatmentAssignment;

pub const DEFAULT_E_MIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PropensityError {
    #[error("class {0} is empty in sample (no-empty-cell violated)")]
    EmptyClass(usize),
    #[error("probability floor {e_min} must lie in (0, 1/{classes})")]
    InvalidFloor { e_min: f64, classes: usize },
    #[error("propensity model did not converge after {iterations} iterations (gradient max-norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("propensity model failed: {0}")]
    Model(#[from] RegressError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropensityFit {
    /// `None` when probabilities were supplied rather than estimated.
    pub model: Option<MnlFit>,
    /// Probabilities before flooring.
    pub raw_probs: DMatrix<f64>,
    /// Floored and renormalized probabilities.
    pub probs: DMatrix<f64>,
    pub e_min: f64,
    pub clipped_count: usize,
    pub weights: Vec<f64>,
    pub labels: Vec<usize>,
}

impl PropensityFit {
    pub fn classes(&self) -> usize {
        self.probs.ncols()
    }
}

fn check_floor(e_min: f64, classes: usize) -> Result<(), PropensityError> {
    if e_min > 0.0 && e_min * (classes as f64) < 1.0 {
        Ok(())
    } else {
        Err(PropensityError::InvalidFloor { e_min, classes })
    }
}

/// Floors every entry at `e_min` and rescales the remaining entries of the
/// row so it sums to one. Rows already at or above the floor are returned
/// untouched. Returns the clipped matrix and the number of floored entries.
pub fn clip_probabilities(probs: &DMatrix<f64>, e_min: f64) -> (DMatrix<f64>, usize) {
    let (n, classes) = probs.shape();
    let mut out = probs.clone();
    let mut clipped = 0;
    for t in 0..n {
        if (0..classes).all(|j| probs[(t, j)] >= e_min) {
            continue;
        }
        let mut floored = vec![false; classes];
        loop {
            let free_mass: f64 = (0..classes).filter(|&j| !floored[j]).map(|j| probs[(t, j)]).sum();
            let budget = 1.0 - e_min * floored.iter().filter(|&&f| f).count() as f64;
            let mut changed = false;
            for j in 0..classes {
                if !floored[j] && probs[(t, j)] * budget / free_mass < e_min {
                    floored[j] = true;
                    changed = true;
                }
            }
            if !changed {
                for j in 0..classes {
                    out[(t, j)] = if floored[j] {
                        e_min
                    } else {
                        probs[(t, j)] * budget / free_mass
                    };
                }
                break;
            }
        }
        clipped += floored.iter().filter(|&&f| f).count();
    }
    (out, clipped)
}

/// Multinomial-logit propensity of each class given lagged covariates.
pub fn fit_gps(
    x_lagged: &DMatrix<f64>,
    assignment: &TreatmentAssignment,
    e_min: f64,
) -> Result<PropensityFit, PropensityError> {
    let classes = assignment.classes;
    check_floor(e_min, classes)?;
    if x_lagged.nrows() != assignment.len() {
        return Err(PropensityError::DimensionMismatch(format!(
            "{} covariate rows for {} labels",
            x_lagged.nrows(),
            assignment.len()
        )));
    }
    if let Some(j) = assignment.counts().iter().position(|&c| c == 0) {
        return Err(PropensityError::EmptyClass(j + 1));
    }
    let model = mnl_fit(x_lagged, &assignment.labels, classes)?;
    if !model.converged {
        return Err(PropensityError::NotConverged {
            iterations: model.iterations,
            gradient_norm: model.gradient_norm,
        });
    }
    let raw = mnl_predict(&model, x_lagged)?;
    let mut fit = from_probabilities(raw, assignment, e_min)?;
    fit.model = Some(model);
    Ok(fit)
}

/// Builds weights from given class probabilities, e.g. the true propensities
/// of a simulation.
pub fn from_probabilities(
    raw_probs: DMatrix<f64>,
    assignment: &TreatmentAssignment,
    e_min: f64,
) -> Result<PropensityFit, PropensityError> {
    let classes = assignment.classes;
    check_floor(e_min, classes)?;
    if raw_probs.nrows() != assignment.len() || raw_probs.ncols() != classes {
        return Err(PropensityError::DimensionMismatch(format!(
            "probabilities are {}x{}, expected {}x{}",
            raw_probs.nrows(),
            raw_probs.ncols(),
            assignment.len(),
            classes
        )));
    }
    let (probs, clipped_count) = clip_probabilities(&raw_probs, e_min);
    let weights = assignment
        .labels
        .iter()
        .enumerate()
        .map(|(t, &l)| 1.0 / probs[(t, l - 1)])
        .collect();
    Ok(PropensityFit {
        model: None,
        raw_probs,
        probs,
        e_min,
        clipped_count,
        weights,
        labels: assignment.labels.clone(),
    })
}

/// Overlap diagnostics for a propensity fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoEmptyCellReport {
    pub e_min: f64,
    /// Smallest fitted probability of each class before flooring.
    pub min_prob: Vec<f64>,
    /// Entries below the floor, per class.
    pub below_floor: Vec<usize>,
    pub clipped_count: usize,
    pub max_weight: f64,
    pub violation: bool,
}

pub fn check_no_empty_cell(fit: &PropensityFit, e_min: f64) -> NoEmptyCellReport {
    let classes = fit.raw_probs.ncols();
    let min_prob: Vec<f64> = (0..classes).map(|j| fit.raw_probs.column(j).min()).collect();
    let below_floor: Vec<usize> = (0..classes)
        .map(|j| fit.raw_probs.column(j).iter().filter(|&&p| p < e_min).count())
        .collect();
    let clipped_count = below_floor.iter().sum();
    NoEmptyCellReport {
        e_min,
        violation: clipped_count > 0,
        min_prob,
        below_floor,
        clipped_count,
        max_weight: fit.weights.iter().copied().fold(f64::NAN, f64::max),
    }
}

impl NoEmptyCellReport {
    /// `key=value` lines, one fact per line.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "e_min={}", self.e_min);
        for (j, p) in self.min_prob.iter().enumerate() {
            let _ = writeln!(s, "min_prob.class{}={}", j + 1, p);
        }
        for (j, c) in self.below_floor.iter().enumerate() {
            let _ = writeln!(s, "below_floor.class{}={}", j + 1, c);
        }
        let _ = writeln!(s, "clipped_count={}", self.clipped_count);
        let _ = writeln!(s, "max_weight={}", self.max_weight);
        let _ = writeln!(s, "violation={}", self.violation);
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("Propensity diagnostics\n");
        let mins: Vec<String> = self.min_prob.iter().map(|p| format!("{p:.4}")).collect();
        let _ = writeln!(s, "  floor e_min          {}", self.e_min);
        let _ = writeln!(s, "  min prob by class    {}", mins.join("  "));
        let _ = writeln!(s, "  entries below floor  {}", self.clipped_count);
        let _ = writeln!(s, "  max weight           {:.4}", self.max_weight);
        let _ = writeln!(
            s,
            "  no-empty-cell        {}",
            if self.violation { "VIOLATED (probabilities floored)" } else { "ok" }
        );
        s
    }
}

//! Policy classes: binning spending growth into four levels and indicator
//! regressors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Number of policy classes used for spending growth.
pub const POLICY_CLASSES: usize = 4;

/// Human-readable names of the four spending-growth classes.
pub const CLASS_NAMES: [&str; POLICY_CLASSES] = [
    "Large fiscal contraction",
    "Small fiscal contraction",
    "Small fiscal expansion",
    "Large fiscal expansion",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreatmentError {
    #[error("need at least two growth observations, got {0}")]
    TooFew(usize),
    #[error("spending growth has zero variance")]
    ZeroVariance,
    #[error("non-finite growth value at row {0}")]
    NonFinite(usize),
    #[error("bin width must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("label {label} at row {row} outside 1..={classes}")]
    InvalidLabel { row: usize, label: usize, classes: usize },
}

/// Class label (1-based) for each row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Bin width; `None` when labels were supplied directly.
    pub sigma: Option<f64>,
}

impl TreatmentAssignment {
    /// Wraps externally drawn labels (e.g. from a simulation).
    pub fn from_labels(labels: Vec<usize>, classes: usize) -> Result<Self, TreatmentError> {
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l == 0 || l > classes) {
            return Err(TreatmentError::InvalidLabel { row, label, classes });
        }
        Ok(TreatmentAssignment {
            labels,
            classes,
            sigma: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(-sigma, 0, sigma)` for binned assignments.
    pub fn thresholds(&self) -> Option<[f64; 3]> {
        self.sigma.map(|s| [-s, 0.0, s])
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l - 1] += 1;
        }
        counts
    }

    pub fn dummies(&self) -> DMatrix<f64> {
        dummies(self)
    }
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Class of one growth rate given the bin width: `g <= -sigma` is 1,
/// `(-sigma, 0]` is 2, `(0, sigma]` is 3 and `g > sigma` is 4.
pub fn class_of(g: f64, sigma: f64) -> usize {
    if g <= -sigma {
        1
    } else if g <= 0.0 {
        2
    } else if g <= sigma {
        3
    } else {
        4
    }
}

/// Bins growth rates using the sample standard deviation of `g` itself.
pub fn classify(g: &[f64]) -> Result<TreatmentAssignment, TreatmentError> {
    if g.len() < 2 {
        return Err(TreatmentError::TooFew(g.len()));
    }
    if let Some(row) = g.iter().position(|v| !v.is_finite()) {
        return Err(TreatmentError::NonFinite(row));
    }
    let sigma = sample_sd(g);
    if sigma == 0.0 {
        return Err(TreatmentError::ZeroVariance);
    }
    classify_with_sigma(g, sigma)
}

/// Bins growth rates with a given bin width.
pub fn classify_with_sigma(g: &[f64], sigma: f64) -> Result<TreatmentAssignment, TreatmentError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(TreatmentError::BadSigma(sigma));
    }
    if let Some(row) = g.iter().position(|v| !v.is_finite()) {
        return Err(TreatmentError::NonFinite(row));
    }
    Ok(TreatmentAssignment {
        labels: g.iter().map(|&v| class_of(v, sigma)).collect(),
        classes: POLICY_CLASSES,
        sigma: Some(sigma),
    })
}

/// `n x J` indicator matrix; column `j` is 1 where the label is `j + 1`.
pub fn dummies(assignment: &TreatmentAssignment) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(assignment.len(), assignment.classes);
    for (t, &l) in assignment.labels.iter().enumerate() {
        d[(t, l - 1)] = 1.0;
    }
    d
}

//! Simulation laboratory with known class effects.
//!
//! One period of the data-generating process:
//!
//! ```text
//! x_t ~ N(0, I_k)                         assignment covariates
//! q_t ~ MNL(prop_coeffs, x_t)             policy class, class 1 is the reference
//! g_t = gamma_q + U(-s, s)                spending growth, gamma_j = j - (J+1)/2
//! z_t ~ N(0, I_l)                         forecaster inputs
//! y_t     = b'z_t - theta g_t + nu_t      base level
//! y_t+1(j) = b'z_t + mu_j + lambda'x_t + eps_t
//! ```
//!
//! with `eps ~ N(0, noise_sd^2)` and `nu ~ N(0, base_noise_sd^2)`. The realized-growth response
//! `y_t+1 - y_t` therefore carries `theta g_t`, while the forecast baseline
//! built from `z` alone does not see `g`.
//!
//! Replication `r` draws from ChaCha8 seeded with the base seed on stream
//! `r`, so results do not depend on scheduling.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baseline::{fit_baseline, response_a1, response_a2, BaselineMode};
use crate::data::{Panel, Quarter};
use crate::effects::{estimate_response, Parameterization, Variant};
use crate::propensity::{fit_gps, from_probabilities, DEFAULT_E_MIN};
use crate::regress::{ols_fit, softmax, CovarianceKind};
use crate::treatment::TreatmentAssignment;

pub const MIN_REPLICATIONS: usize = 50;
/// Draws used to evaluate the estimand when it has no closed form.
pub const TRUTH_DRAWS: usize = 1_000_000;
/// Stream reserved for the estimand simulation.
const TRUTH_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("need at least {MIN_REPLICATIONS} replications, got {0}")]
    TooFewReplications(usize),
    #[error("every replication failed; first error: {0}")]
    AllFailed(String),
}

fn default_forecast_loadings() -> Vec<f64> {
    vec![0.5, -0.3]
}

fn default_jitter() -> f64 {
    0.4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub classes: usize,
    /// True effect of each class.
    pub mu: Vec<f64>,
    /// Logit coefficients for classes `2..=J`, each row `[intercept, slopes...]`.
    pub prop_coeffs: Vec<Vec<f64>>,
    pub noise_sd: f64,
    /// Weight of spending growth in the base level.
    pub theta: f64,
    pub seed: u64,
    /// Loadings of the outcome on `x`; empty means none.
    #[serde(default)]
    pub outcome_loadings: Vec<f64>,
    /// Loadings `b` of both levels on the forecaster inputs.
    #[serde(default = "default_forecast_loadings")]
    pub forecast_loadings: Vec<f64>,
    /// Half-width of the uniform spread of `g` around its class center.
    #[serde(default = "default_jitter")]
    pub spending_jitter: f64,
    /// Noise in the base level that the forecaster cannot predict.
    #[serde(default)]
    pub base_noise_sd: f64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            n: 2000,
            classes: 4,
            mu: vec![-1.0, 0.0, 1.0, 2.0],
            prop_coeffs: vec![vec![0.0, 0.4], vec![0.0, 0.8], vec![0.0, 1.2]],
            noise_sd: 1.0,
            theta: 0.0,
            seed: 42,
            outcome_loadings: Vec::new(),
            forecast_loadings: default_forecast_loadings(),
            spending_jitter: default_jitter(),
            base_noise_sd: 0.0,
        }
    }
}

impl DgpSpec {
    pub fn covariates(&self) -> usize {
        self.prop_coeffs.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<(), McError> {
        let bad = |msg: String| Err(McError::InvalidSpec(msg));
        let j = self.classes;
        if j < 2 {
            return bad(format!("need at least 2 classes, got {j}"));
        }
        if self.n < 10 * j {
            return bad(format!("n = {} is below 10 * classes = {}", self.n, 10 * j));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if self.mu.len() != j {
            return bad(format!("mu has {} entries for {j} classes", self.mu.len()));
        }
        if self.prop_coeffs.len() != j - 1 {
            return bad(format!("prop_coeffs needs {} rows, got {}", j - 1, self.prop_coeffs.len()));
        }
        let width = self.covariates() + 1;
        if width < 2 || self.prop_coeffs.iter().any(|r| r.len() != width) {
            return bad("prop_coeffs rows must share a length of at least 2".into());
        }
        let k = width - 1;
        if !self.outcome_loadings.is_empty() && self.outcome_loadings.len() != k {
            return bad(format!("outcome_loadings has {} entries for {k} covariates", self.outcome_loadings.len()));
        }
        if self.forecast_loadings.is_empty() {
            return bad("forecast_loadings must not be empty".into());
        }
        if !(self.base_noise_sd >= 0.0 && self.base_noise_sd.is_finite()) {
            return bad(format!("base_noise_sd must be non-negative, got {}", self.base_noise_sd));
        }
        if !(self.spending_jitter >= 0.0 && self.spending_jitter.is_finite()) {
            return bad(format!("spending_jitter must be non-negative, got {}", self.spending_jitter));
        }
        let finite = self
            .mu
            .iter()
            .chain(self.prop_coeffs.iter().flatten())
            .chain(&self.outcome_loadings)
            .chain(&self.forecast_loadings)
            .chain([&self.theta])
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    /// Center of the spending-growth distribution of class `j` (1-based).
    pub fn spending_center(&self, j: usize) -> f64 {
        j as f64 - (self.classes as f64 + 1.0) / 2.0
    }

    /// True class probabilities at covariate row `x`.
    pub fn class_probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0];
        scores.extend(
            self.prop_coeffs
                .iter()
                .map(|r| r[0] + r[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()),
        );
        softmax(&scores)
    }
}

/// One simulated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulated {
    pub panel: Panel,
    pub assignment: TreatmentAssignment,
    /// True propensities, `n x J`.
    pub true_probs: DMatrix<f64>,
}

fn draw_class(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j + 1;
        }
    }
    probs.len()
}

struct Draw {
    x: Vec<f64>,
    probs: Vec<f64>,
    class: usize,
    g: f64,
    z: Vec<f64>,
    y: f64,
    /// Next-period level under each class.
    potential: Vec<f64>,
}

fn draw_period(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Draw {
    let k = spec.covariates();
    let x: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let probs = spec.class_probabilities(&x);
    let class = draw_class(rng, &probs);
    let g = spec.spending_center(class) + spec.spending_jitter * (2.0 * rng.random::<f64>() - 1.0);
    let z: Vec<f64> = spec.forecast_loadings.iter().map(|_| rng.sample(StandardNormal)).collect();
    let level: f64 = spec.forecast_loadings.iter().zip(&z).map(|(b, v)| b * v).sum();
    let nu: f64 = rng.sample(StandardNormal);
    let eps: f64 = rng.sample(StandardNormal);
    let y = level - spec.theta * g + spec.base_noise_sd * nu;
    let tilt: f64 = spec.outcome_loadings.iter().zip(&x).map(|(l, v)| l * v).sum();
    let potential = spec.mu.iter().map(|m| level + m + tilt + spec.noise_sd * eps).collect();
    Draw {
        x,
        probs,
        class,
        g,
        z,
        y,
        potential,
    }
}

fn simulate_with(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Simulated {
    let (n, k, l, j) = (spec.n, spec.covariates(), spec.forecast_loadings.len(), spec.classes);
    let draws: Vec<Draw> = (0..n).map(|_| draw_period(spec, rng)).collect();
    let start = Quarter::new(1000, 1).expect("valid quarter");
    let panel = Panel::new(
        (0..n as i64).map(|i| start.offset(i)).collect(),
        draws.iter().map(|d| d.y).collect(),
        draws.iter().map(|d| d.potential[d.class - 1]).collect(),
        draws.iter().map(|d| d.g).collect(),
        DMatrix::from_fn(n, k, |t, c| draws[t].x[c]),
        DMatrix::from_fn(n, l, |t, c| draws[t].z[c]),
        (1..=k).map(|i| format!("x{i}")).collect(),
        (1..=l).map(|i| format!("z{i}")).collect(),
    )
    .expect("simulated values are finite");
    let assignment =
        TreatmentAssignment::from_labels(draws.iter().map(|d| d.class).collect(), j).expect("labels in range");
    Simulated {
        panel,
        assignment,
        true_probs: DMatrix::from_fn(n, j, |t, c| draws[t].probs[c]),
    }
}

fn replication_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws one sample from stream 0 of `spec.seed`.
pub fn simulate_dgp(spec: &DgpSpec) -> Result<Simulated, McError> {
    spec.validate()?;
    Ok(simulate_with(spec, &mut replication_rng(spec.seed, 0)))
}

/// `E[y_t+1(j) - yhat_t]` for each class, where `yhat_t` is the linear
/// projection of `y_t` on `(1, z_t)`.
///
/// Without the spending term the estimand is `mu`. Otherwise it is evaluated
/// on [`TRUTH_DRAWS`] simulated periods.
pub fn true_effects(spec: &DgpSpec) -> Result<Vec<f64>, McError> {
    spec.validate()?;
    if spec.theta == 0.0 {
        return Ok(spec.mu.clone());
    }
    let mut rng = replication_rng(spec.seed, TRUTH_STREAM);
    let l = spec.forecast_loadings.len();
    let draws: Vec<Draw> = (0..TRUTH_DRAWS).map(|_| draw_period(spec, &mut rng)).collect();
    let design = DMatrix::from_fn(TRUTH_DRAWS, l + 1, |t, c| if c == 0 { 1.0 } else { draws[t].z[c - 1] });
    let target = DVector::from_iterator(TRUTH_DRAWS, draws.iter().map(|d| d.y));
    let projection = ols_fit(&design, &target).map_err(|e| McError::InvalidSpec(e.to_string()))?;
    let fitted = &projection.fitted;
    Ok((0..spec.classes)
        .map(|j| {
            draws
                .iter()
                .zip(fitted.iter())
                .map(|(d, f)| d.potential[j] - f)
                .sum::<f64>()
                / TRUTH_DRAWS as f64
        })
        .collect())
}

/// Where the replication weights come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySource {
    /// Multinomial logit fitted in each replication.
    #[default]
    Estimated,
    /// The simulation's own class probabilities.
    Known,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub spec: DgpSpec,
    pub replications: usize,
    #[serde(default = "default_e_min")]
    pub e_min: f64,
    /// IPW weights make the error variance heteroskedastic in the weighted
    /// regression, so intervals default to the HC1 sandwich.
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceKind,
    #[serde(default)]
    pub propensity: PropensitySource,
    #[serde(default)]
    pub baseline: BaselineMode,
}

fn default_e_min() -> f64 {
    DEFAULT_E_MIN
}

fn default_covariance() -> CovarianceKind {
    CovarianceKind::Robust
}

impl Experiment {
    pub fn new(spec: DgpSpec, replications: usize) -> Self {
        Experiment {
            spec,
            replications,
            e_min: DEFAULT_E_MIN,
            covariance: default_covariance(),
            propensity: PropensitySource::default(),
            baseline: BaselineMode::default(),
        }
    }
}

/// Per-class summary of one estimator across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub mean_estimate: Vec<f64>,
    pub mean_bias: Vec<f64>,
    /// Standard error of `mean_bias`: replication sd over `sqrt(R)`.
    pub mc_std_error: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Share of 95% intervals containing the true effect.
    pub coverage: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub spec: DgpSpec,
    pub replications: usize,
    pub succeeded: usize,
    pub failed: usize,
    /// `"replication: error"` for each failed replication.
    pub failures: Vec<String>,
    pub covariance: CovarianceKind,
    pub propensity: PropensitySource,
    pub true_effects: Vec<f64>,
    pub variants: Vec<VariantSummary>,
    /// Per class, the share of replications with `|bias_A1| > |bias_A2|`.
    pub a1_bias_exceeds_a2: Vec<f64>,
}

/// Estimates, standard errors and interval half-widths of one replication.
#[derive(Clone, Debug, PartialEq)]
struct Replicate {
    betas: Vec<Vec<f64>>,
    std_errors: Vec<Vec<f64>>,
    dof: usize,
}

fn run_replication(exp: &Experiment, r: usize) -> Result<Replicate, String> {
    let spec = &exp.spec;
    let sim = simulate_with(spec, &mut replication_rng(spec.seed, r as u64));
    let baseline = fit_baseline(&sim.panel, exp.baseline).map_err(|e| e.to_string())?;
    let prop = match exp.propensity {
        PropensitySource::Estimated => fit_gps(&sim.panel.x, &sim.assignment, exp.e_min),
        PropensitySource::Known => from_probabilities(sim.true_probs.clone(), &sim.assignment, exp.e_min),
    }
    .map_err(|e| e.to_string())?;
    let a2 = response_a2(&sim.panel, &baseline);
    let a1 = response_a1(&sim.panel);
    let mut out = Replicate {
        betas: Vec::new(),
        std_errors: Vec::new(),
        dof: spec.n - spec.classes,
    };
    for variant in Variant::ALL {
        let response = if variant.forecast_response() { &a2 } else { &a1 };
        let weights = variant.weighted().then_some(prop.weights.as_slice());
        let est = estimate_response(
            response,
            &sim.assignment,
            weights,
            variant,
            Parameterization::CellMeans,
            exp.covariance,
        )
        .map_err(|e| e.to_string())?;
        out.betas.push(est.betas);
        out.std_errors.push(est.std_errors);
    }
    Ok(out)
}

fn mean(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    v.sum::<f64>() / n
}

/// Runs the pipeline on `replications` independent samples with the default
/// experiment settings.
pub fn run_experiment(spec: &DgpSpec, replications: usize) -> Result<McReport, McError> {
    run(&Experiment::new(spec.clone(), replications))
}

pub fn run(exp: &Experiment) -> Result<McReport, McError> {
    exp.spec.validate()?;
    if exp.replications < MIN_REPLICATIONS {
        return Err(McError::TooFewReplications(exp.replications));
    }
    let truth = true_effects(&exp.spec)?;
    let outcomes: Vec<Result<Replicate, String>> = (0..exp.replications)
        .into_par_iter()
        .map(|r| run_replication(exp, r))
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rep) => ok.push(rep),
            Err(e) => failures.push(format!("{r}: {e}")),
        }
    }
    if ok.is_empty() {
        return Err(McError::AllFailed(failures.first().cloned().unwrap_or_default()));
    }
    let reps = ok.len() as f64;
    let classes = exp.spec.classes;
    let crit = StudentsT::new(0.0, 1.0, ok[0].dof as f64)
        .expect("positive dof")
        .inverse_cdf(0.975);

    let variants = Variant::ALL
        .iter()
        .enumerate()
        .map(|(v, &variant)| {
            let mut s = VariantSummary {
                variant,
                mean_estimate: Vec::new(),
                mean_bias: Vec::new(),
                mc_std_error: Vec::new(),
                rmse: Vec::new(),
                coverage: Vec::new(),
            };
            for j in 0..classes {
                let est = ok.iter().map(|rep| rep.betas[v][j]);
                let m = mean(est.clone());
                let sd = (est.clone().map(|b| (b - m).powi(2)).sum::<f64>() / (reps - 1.0).max(1.0)).sqrt();
                let covered = ok
                    .iter()
                    .filter(|rep| (rep.betas[v][j] - truth[j]).abs() <= crit * rep.std_errors[v][j])
                    .count();
                s.mean_estimate.push(m);
                s.mean_bias.push(m - truth[j]);
                s.mc_std_error.push(sd / reps.sqrt());
                s.rmse.push(mean(est.map(|b| (b - truth[j]).powi(2))).sqrt());
                s.coverage.push(covered as f64 / reps);
            }
            s
        })
        .collect();

    let a2 = Variant::ALL.iter().position(|&v| v == Variant::WlsA2).expect("listed");
    let a1 = Variant::ALL.iter().position(|&v| v == Variant::WlsA1).expect("listed");
    let a1_bias_exceeds_a2 = (0..classes)
        .map(|j| {
            ok.iter()
                .filter(|rep| (rep.betas[a1][j] - truth[j]).abs() > (rep.betas[a2][j] - truth[j]).abs())
                .count() as f64
                / reps
        })
        .collect();

    Ok(McReport {
        spec: exp.spec.clone(),
        replications: exp.replications,
        succeeded: ok.len(),
        failed: failures.len(),
        failures,
        covariance: exp.covariance,
        propensity: exp.propensity,
        true_effects: truth,
        variants,
        a1_bias_exceeds_a2,
    })
}

impl McReport {
    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == variant)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    /// One row per variant and class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,class,true_effect,mean_estimate,mean_bias,mc_std_error,rmse,coverage,a1_bias_exceeds_a2,replications,failed\n",
        );
        for v in &self.variants {
            for j in 0..self.true_effects.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    v.variant.key(),
                    j + 1,
                    self.true_effects[j],
                    v.mean_estimate[j],
                    v.mean_bias[j],
                    v.mc_std_error[j],
                    v.rmse[j],
                    v.coverage[j],
                    self.a1_bias_exceeds_a2[j],
                    self.replications,
                    self.failed
                );
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Monte Carlo: n = {}, theta = {}, {} replications ({} failed), {} standard errors, {} propensities",
            self.spec.n,
            self.spec.theta,
            self.replications,
            self.failed,
            match self.covariance {
                CovarianceKind::Classical => "classical",
                CovarianceKind::Robust => "robust",
            },
            match self.propensity {
                PropensitySource::Estimated => "estimated",
                PropensitySource::Known => "known",
            }
        );
        let _ = writeln!(
            s,
            "{:<8} {:>5} {:>10} {:>10} {:>10} {:>10} {:>9}",
            "variant", "class", "truth", "bias", "mc se", "rmse", "coverage"
        );
        for v in &self.variants {
            for j in 0..self.true_effects.len() {
                let _ = writeln!(
                    s,
                    "{:<8} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9.3}",
                    v.variant.key(),
                    j + 1,
                    self.true_effects[j],
                    v.mean_bias[j],
                    v.mc_std_error[j],
                    v.rmse[j],
                    v.coverage[j]
                );
            }
        }
        let shares: Vec<String> = self.a1_bias_exceeds_a2.iter().map(|p| format!("{p:.3}")).collect();
        let _ = writeln!(s, "share |bias A1| > |bias A2| by class: {}", shares.join(" "));
        s
    }
}

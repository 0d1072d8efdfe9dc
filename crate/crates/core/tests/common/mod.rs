//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Multinomial log-likelihood written out directly: class 1 has score 0,
/// class `j + 2` has score `b[j] . (1, x)`. `flat` is row-major.
pub fn oracle_log_likelihood(flat: &[f64], x: &DMatrix<f64>, labels: &[usize], classes: usize) -> f64 {
    let width = x.ncols() + 1;
    let mut ll = 0.0;
    for t in 0..x.nrows() {
        let mut scores = vec![0.0];
        for j in 0..classes - 1 {
            let b = &flat[j * width..(j + 1) * width];
            scores.push(b[0] + (0..x.ncols()).map(|c| b[c + 1] * x[(t, c)]).sum::<f64>());
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        ll += scores[labels[t] - 1] - lse;
    }
    ll
}

/// Nelder-Mead minimizer with restarts from the best vertex until a restart
/// no longer improves the objective.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, start: &[f64], step: f64) -> (Vec<f64>, f64) {
    let mut best = start.to_vec();
    let mut best_value = f(&best);
    loop {
        let (x, v) = nelder_mead_once(&f, &best, step);
        let improved = best_value - v;
        if v < best_value {
            best = x;
            best_value = v;
        }
        if improved <= 1e-13 {
            return (best, best_value);
        }
    }
}

fn nelder_mead_once(f: &impl Fn(&[f64]) -> f64, start: &[f64], step: f64) -> (Vec<f64>, f64) {
    let d = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..200_000 {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if values[d] - values[0] < 1e-15 * (1.0 + values[0].abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|c| simplex[..d].iter().map(|v| v[c]).sum::<f64>() / d as f64).collect();
        let along = |coef: f64| -> Vec<f64> { (0..d).map(|c| centroid[c] + coef * (simplex[d][c] - centroid[c])).collect() };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[d] = expanded;
                values[d] = fe;
            } else {
                simplex[d] = reflected;
                values[d] = fr;
            }
        } else if fr < values[d - 1] {
            simplex[d] = reflected;
            values[d] = fr;
        } else {
            let contracted = if fr < values[d] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < values[d].min(fr) {
                simplex[d] = contracted;
                values[d] = fc;
            } else {
                for i in 1..=d {
                    simplex[i] = (0..d).map(|c| simplex[0][c] + 0.5 * (simplex[i][c] - simplex[0][c])).collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let i = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    (simplex[i].clone(), values[i])
}

/// Central finite-difference gradient.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    (0..at.len())
        .map(|i| {
            let mut up = at.to_vec();
            let mut down = at.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

/// A small multinomial sample: 30 rows, three covariates, three classes.
pub fn small_mnl_sample(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (30, 3);
    let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = [[0.2, 0.8, -0.5, 0.3], [-0.1, -0.4, 0.6, 0.7]];
    let labels = (0..n)
        .map(|t| {
            let mut scores = vec![0.0];
            for row in &b {
                scores.push(row[0] + (0..k).map(|c| row[c + 1] * x[(t, c)]).sum::<f64>());
            }
            let total: f64 = scores.iter().map(|s| s.exp()).sum();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, s) in scores.iter().enumerate() {
                acc += s.exp() / total;
                if u < acc {
                    return j + 1;
                }
            }
            3
        })
        .collect();
    (x, labels)
}

/// Random linear model data with positive weights.
pub fn regression_sample(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
    let y = (0..n).map(|t| x.row(t).sum() + rng.sample::<f64, _>(StandardNormal)).collect();
    let w = (0..n).map(|_| rng.random_range(0.5..30.0)).collect();
    (x, y, w)
}

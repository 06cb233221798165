#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pretrend_core::{Observation, PanelDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random balanced common-timing panel with unit effects, group-specific
/// trends and noise. At least one treated and one control unit, and at least
/// one period on each side of `t_star`.
pub fn random_panel(
    rng: &mut ChaCha8Rng,
    min_units: usize,
    max_units: usize,
    min_periods: usize,
    max_periods: usize,
) -> PanelDataset {
    let n_units = rng.random_range(min_units.max(2)..=max_units);
    let n_periods = rng.random_range(min_periods.max(2)..=max_periods);
    let n_treated = rng.random_range(1..n_units);
    let t_min: i64 = rng.random_range(-6..=0);
    let t_max = t_min + n_periods as i64 - 1;
    let t_star = rng.random_range(t_min..t_max);
    let slope_t: f64 = rng.random_range(-2.0..2.0);
    let slope_c: f64 = rng.random_range(-2.0..2.0);
    let mut obs = Vec::with_capacity(n_units * n_periods);
    for u in 0..n_units {
        let treated = u < n_treated;
        let alpha: f64 = rng.random_range(-50.0..50.0);
        for t in t_min..=t_max {
            let trend = if treated { slope_t } else { slope_c } * t as f64;
            let effect = if treated && t > t_star {
                rng.random_range(0.0..5.0)
            } else {
                0.0
            };
            let noise: f64 = rng.random_range(-3.0..3.0);
            obs.push(Observation {
                unit_id: format!("u{u}"),
                time: t,
                treated_group: treated,
                outcome: alpha + trend + effect + noise,
            });
        }
    }
    PanelDataset::new(obs, t_star).unwrap()
}

/// OLS on `[1, unit dummies, time dummies, regressors]` (first level of each
/// factor dropped), solved by SVD. Returns the regressor coefficients.
pub fn dummy_expansion_ols(
    outcome: &[f64],
    regressors: &[Vec<f64>],
    units: &[usize],
    times: &[usize],
) -> Vec<f64> {
    let n = outcome.len();
    let n_units = units.iter().max().unwrap() + 1;
    let n_times = times.iter().max().unwrap() + 1;
    let k = 1 + (n_units - 1) + (n_times - 1) + regressors.len();
    let mut x = DMatrix::zeros(n, k);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        if units[i] > 0 {
            x[(i, units[i])] = 1.0;
        }
        if times[i] > 0 {
            x[(i, n_units - 1 + times[i])] = 1.0;
        }
        for (j, col) in regressors.iter().enumerate() {
            x[(i, n_units + n_times - 1 + j)] = col[i];
        }
    }
    let y = DVector::from_column_slice(outcome);
    let beta = x.svd(true, true).solve(&y, 1e-12).unwrap();
    let start = n_units + n_times - 1;
    (start..k).map(|j| beta[j]).collect()
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Published table rows: (length, mse, bias_squared, variance, coefficient, se).
pub fn read_table(name: &str) -> Vec<(usize, f64, f64, f64, f64, f64)> {
    let mut r = csv::Reader::from_path(data_path(name)).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let f = |i: usize| rec[i].parse::<f64>().unwrap();
            (rec[0].parse().unwrap(), f(1), f(2), f(3), f(4), f(5))
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

//! OLS with absorbed unit and time fixed effects.
//!
//! Both effects are swept out of the outcome and every regressor by
//! alternating projections, then the demeaned system is solved by QR. The
//! coefficient covariance is either the homoskedastic `s² (X'X)⁻¹` or a
//! unit-clustered sandwich.

use std::collections::{HashMap, HashSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DEMEAN_TOL: f64 = 1e-10;
const DEMEAN_MAX_SWEEPS: usize = 1000;
/// Reciprocal condition number of the demeaned cross-product below which the
/// design is declared collinear.
const RCOND_MIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SeType {
    #[default]
    Iid,
    ClusterByUnit,
}

impl SeType {
    pub fn label(self) -> &'static str {
        match self {
            SeType::Iid => "iid",
            SeType::ClusterByUnit => "cluster_by_unit",
        }
    }
}

impl fmt::Display for SeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Outcome, named regressors and the two fixed-effect index columns.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    outcome: Vec<f64>,
    names: Vec<String>,
    regressors: Vec<Vec<f64>>,
    unit_index: Vec<usize>,
    time_index: Vec<usize>,
    n_units: usize,
    n_periods: usize,
}

fn densify(index: &[usize]) -> (Vec<usize>, usize) {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let dense = index
        .iter()
        .map(|&k| {
            let next = map.len();
            *map.entry(k).or_insert(next)
        })
        .collect();
    (dense, map.len())
}

impl DesignSpec {
    /// `unit_index` and `time_index` are arbitrary category labels; they are
    /// re-coded densely.
    pub fn new(
        outcome: Vec<f64>,
        regressors: Vec<(String, Vec<f64>)>,
        unit_index: &[usize],
        time_index: &[usize],
    ) -> Result<Self> {
        let n = outcome.len();
        if n == 0 {
            return Err(Error::InvalidDesign("no observations".into()));
        }
        if unit_index.len() != n || time_index.len() != n {
            return Err(Error::InvalidDesign(
                "index columns differ in length from outcome".into(),
            ));
        }
        let mut seen = HashSet::new();
        for (name, col) in &regressors {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidDesign(format!(
                    "duplicate regressor name `{name}`"
                )));
            }
            if col.len() != n {
                return Err(Error::InvalidDesign(format!(
                    "regressor `{name}` has length {} but outcome has {n}",
                    col.len()
                )));
            }
        }
        let (unit_index, n_units) = densify(unit_index);
        let (time_index, n_periods) = densify(time_index);
        let (names, regressors) = regressors.into_iter().unzip();
        Ok(Self {
            outcome,
            names,
            regressors,
            unit_index,
            time_index,
            n_units,
            n_periods,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.outcome.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn unit_index(&self) -> &[usize] {
        &self.unit_index
    }

    pub fn time_index(&self) -> &[usize] {
        &self.time_index
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn regressor(&self, j: usize) -> &[f64] {
        &self.regressors[j]
    }

    /// Residual degrees of freedom after absorbing both effect sets.
    pub fn df_resid(&self) -> i64 {
        self.n_obs() as i64 - self.n_units as i64 - self.n_periods as i64 + 1
            - self.names.len() as i64
    }

    fn demean(&self, column: &[f64]) -> Vec<f64> {
        demean_two_way(
            column,
            &self.unit_index,
            self.n_units,
            &self.time_index,
            self.n_periods,
        )
    }
}

/// Removes unit and time means by alternating projections. Exact after one
/// double sweep on balanced panels; iterates otherwise.
pub fn demean_two_way(
    column: &[f64],
    unit_index: &[usize],
    n_units: usize,
    time_index: &[usize],
    n_periods: usize,
) -> Vec<f64> {
    let mut out = column.to_vec();
    let scale = 1.0 + column.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut sums_u = vec![0.0; n_units];
    let mut counts_u = vec![0usize; n_units];
    let mut sums_t = vec![0.0; n_periods];
    let mut counts_t = vec![0usize; n_periods];
    for &u in unit_index {
        counts_u[u] += 1;
    }
    for &t in time_index {
        counts_t[t] += 1;
    }
    for _ in 0..DEMEAN_MAX_SWEEPS {
        let mut change = 0.0_f64;
        for (index, sums, counts) in [
            (unit_index, &mut sums_u, &counts_u),
            (time_index, &mut sums_t, &counts_t),
        ] {
            sums.iter_mut().for_each(|s| *s = 0.0);
            for (v, &g) in out.iter().zip(index) {
                sums[g] += v;
            }
            for (s, &c) in sums.iter_mut().zip(counts.iter()) {
                *s /= c as f64;
                change = change.max(s.abs());
            }
            for (v, &g) in out.iter_mut().zip(index) {
                *v -= sums[g];
            }
        }
        if change < DEMEAN_TOL * scale {
            break;
        }
    }
    out
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// `None` when `df_resid < 1`.
    pub covariance: Option<DMatrix<f64>>,
    /// Unscaled `(X̃'X̃)⁻¹` of the demeaned design.
    pub bread: DMatrix<f64>,
    pub se_type: SeType,
    pub df_resid: i64,
    pub n_obs: usize,
    pub rss: f64,
}

impl FitResult {
    fn position(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownRegressor(name.to_string()))
    }

    pub fn coefficient(&self, name: &str) -> Result<f64> {
        Ok(self.coefficients[self.position(name)?])
    }

    /// Standard error of one coefficient.
    pub fn se(&self, name: &str) -> Result<f64> {
        let j = self.position(name)?;
        let cov = self.covariance.as_ref().ok_or(Error::SeUnavailable {
            df_resid: self.df_resid,
        })?;
        Ok(cov[(j, j)].max(0.0).sqrt())
    }
}

/// Square root of the covariance diagonal entry for `name`.
pub fn coefficient_se(fit: &FitResult, name: &str) -> Result<f64> {
    fit.se(name)
}

fn collinear_names(xtx: &DMatrix<f64>, names: &[String]) -> Option<Vec<String>> {
    let eig = xtx.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Some(names.to_vec());
    }
    let mut offending = vec![false; names.len()];
    let mut any = false;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda / max < RCOND_MIN {
            any = true;
            let v = eig.eigenvectors.column(k);
            for (j, flag) in offending.iter_mut().enumerate() {
                if v[j].abs() > 1e-6 {
                    *flag = true;
                }
            }
        }
    }
    any.then(|| {
        names
            .iter()
            .zip(offending)
            .filter(|(_, f)| *f)
            .map(|(n, _)| n.clone())
            .collect()
    })
}

/// Fits the two-way fixed-effects regression.
///
/// When `df_resid < 1` the coefficients are still returned but `covariance`
/// is `None`.
pub fn fit(design: &DesignSpec, se_type: SeType) -> Result<FitResult> {
    let n = design.n_obs();
    let k = design.names.len();
    if k == 0 {
        return Err(Error::InvalidDesign("no regressors".into()));
    }
    if n < k {
        return Err(Error::InvalidDesign(format!(
            "{n} observations for {k} regressors"
        )));
    }
    let y = DVector::from_vec(design.demean(&design.outcome));
    let mut x = DMatrix::zeros(n, k);
    for (j, col) in design.regressors.iter().enumerate() {
        x.set_column(j, &DVector::from_vec(design.demean(col)));
    }

    let xtx = x.transpose() * &x;
    if let Some(names) = collinear_names(&xtx, &design.names) {
        return Err(Error::Collinear { names });
    }

    let qr = x.clone().qr();
    let r = qr.r();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, k).into_owned())
        .ok_or_else(|| Error::Collinear {
            names: design.names.clone(),
        })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Collinear {
            names: design.names.clone(),
        })?;
    let bread = &r_inv * r_inv.transpose();

    let residuals = &y - &x * &beta;
    let rss = residuals.norm_squared();
    let df_resid = design.df_resid();

    let covariance = if df_resid < 1 {
        None
    } else {
        let cov = match se_type {
            SeType::Iid => &bread * (rss / df_resid as f64),
            SeType::ClusterByUnit => {
                cluster_robust_covariance(&x, &residuals, &design.unit_index, &bread, df_resid)?
            }
        };
        Some(symmetrize(cov))
    };

    Ok(FitResult {
        names: design.names.clone(),
        coefficients: beta.iter().copied().collect(),
        covariance,
        bread,
        se_type,
        df_resid,
        n_obs: n,
        rss,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Sandwich covariance with scores summed within each cluster, scaled by
/// `G/(G-1) · (N-1)/df_resid`.
pub fn cluster_robust_covariance(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    clusters: &[usize],
    bread: &DMatrix<f64>,
    df_resid: i64,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let k = x.ncols();
    if residuals.len() != n || clusters.len() != n {
        return Err(Error::InvalidDesign(
            "cluster inputs differ in length".into(),
        ));
    }
    if df_resid < 1 {
        return Err(Error::SeUnavailable { df_resid });
    }
    let mut scores: HashMap<usize, DVector<f64>> = HashMap::new();
    for i in 0..n {
        let s = scores
            .entry(clusters[i])
            .or_insert_with(|| DVector::zeros(k));
        for j in 0..k {
            s[j] += x[(i, j)] * residuals[i];
        }
    }
    let g = scores.len();
    if g < 2 {
        return Err(Error::SingleCluster(g));
    }
    // sum in cluster-label order so the result does not depend on hash order
    let mut labels: Vec<usize> = scores.keys().copied().collect();
    labels.sort_unstable();
    let mut meat = DMatrix::zeros(k, k);
    for label in labels {
        let s = &scores[&label];
        meat += s * s.transpose();
    }
    let factor = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / df_resid as f64);
    Ok(symmetrize(bread * meat * bread * factor))
}

//! Pre-trends length selection by estimated mean squared error.
//!
//! For each length `ell` the feasible rule treats the `ell = 0` estimate as
//! unbiased, estimates the bias of `ell` as the distance to it, and uses the
//! squared standard error as the variance. The infeasible oracle rule uses a
//! known linear pre-trend divergence and known variances instead.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimateRecord, ModelKind, Target};
use crate::fe_ols::SeType;
use crate::output::Precision;
use crate::panel::PanelDataset;

/// Header of the candidate table, in this exact order.
pub const CANDIDATE_HEADER: [&str; 6] = [
    "length",
    "mse",
    "bias_squared",
    "variance",
    "coefficient",
    "se",
];

/// One row of the candidate table.
#[derive(Debug, Clone, PartialEq)]
pub struct MseCandidate {
    pub pre_length: usize,
    pub coefficient: f64,
    pub se: f64,
    /// `coefficient - coefficient at length 0`
    pub bias: f64,
    pub bias_sq: f64,
    /// `se²`
    pub variance: f64,
    /// `bias_sq + variance`
    pub mse: f64,
    /// Diagnostic: `mse` after removing the benchmark's sampling noise from
    /// `bias_sq`, assuming the benchmark's sample nests this one. Not used
    /// for selection.
    pub mse_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub candidates: Vec<MseCandidate>,
    pub optimal_length: usize,
    pub selected: EstimateRecord,
}

/// What to do when estimation fails for some length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Drop failing lengths (never the benchmark) and record them.
    Skip,
}

/// Estimates and candidate rows for every attempted length.
#[derive(Debug, Clone)]
pub struct CandidateTable {
    pub candidates: Vec<MseCandidate>,
    pub estimates: Vec<EstimateRecord>,
    /// Lengths dropped under [`FailurePolicy::Skip`], with the error text.
    pub skipped: Vec<(usize, String)>,
}

/// Candidate rows from `(length, coefficient, se)` triples. The triple with
/// length 0 is the benchmark.
pub fn candidates_from_estimates(rows: &[(usize, f64, f64)]) -> Result<Vec<MseCandidate>> {
    if rows.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let benchmark = rows
        .iter()
        .find(|r| r.0 == 0)
        .ok_or_else(|| Error::CandidateMismatch("no length-0 benchmark".into()))?;
    let (b0, var0) = (benchmark.1, benchmark.2 * benchmark.2);
    Ok(rows
        .iter()
        .map(|&(pre_length, coefficient, se)| {
            let bias = if pre_length == 0 {
                0.0
            } else {
                coefficient - b0
            };
            let bias_sq = bias * bias;
            let variance = se * se;
            MseCandidate {
                pre_length,
                coefficient,
                se,
                bias,
                bias_sq,
                variance,
                mse: bias_sq + variance,
                mse_adjusted: bias_sq - (var0 - variance) + variance,
            }
        })
        .collect())
}

/// Estimates on every window `ell = 0..=max_length` and builds the candidate
/// rows.
pub fn build_candidates(
    ds: &PanelDataset,
    max_length: usize,
    kind: ModelKind,
    target: Target,
    se_type: SeType,
    policy: FailurePolicy,
) -> Result<CandidateTable> {
    match (kind, target) {
        (ModelKind::Twfe, _) | (ModelKind::ModifiedEventStudy, Target::EventTime(_)) => {}
        (ModelKind::ModifiedEventStudy, Target::Static) => {
            return Err(Error::InvalidConfig(
                "the modified event study needs an event-time target".into(),
            ))
        }
        (ModelKind::EventStudy, _) => {
            return Err(Error::InvalidConfig(
                "window selection supports twfe and modified_event_study only".into(),
            ))
        }
    }
    let available = ds.max_pre_length();
    if max_length as i64 > available {
        return Err(Error::WindowOutOfRange {
            requested: max_length as i64,
            max: available,
        });
    }
    let mut estimates = Vec::with_capacity(max_length + 1);
    let mut skipped = Vec::new();
    for ell in 0..=max_length {
        match estimators::estimate_target(ds, kind, ell, target, se_type) {
            Ok(rec) => estimates.push(rec),
            Err(e) if policy == FailurePolicy::Skip && ell > 0 => {
                skipped.push((ell, e.to_string()))
            }
            Err(e) => {
                return Err(Error::CandidateFailed {
                    ell,
                    source: Box::new(e),
                })
            }
        }
    }
    let rows: Vec<(usize, f64, f64)> = estimates
        .iter()
        .map(|r| (r.pre_length, r.coefficient, r.se))
        .collect();
    Ok(CandidateTable {
        candidates: candidates_from_estimates(&rows)?,
        estimates,
        skipped,
    })
}

/// Index of the smallest finite `mse`, smallest length on ties.
pub fn argmin_mse(candidates: &[MseCandidate]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if let Some(bad) = candidates.iter().find(|c| !c.mse.is_finite()) {
        return Err(Error::NonFiniteMse(bad.pre_length));
    }
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.mse
                .total_cmp(&b.mse)
                .then(a.pre_length.cmp(&b.pre_length))
        })
        .map(|(i, _)| i)
        .expect("non-empty");
    Ok(best)
}

/// Picks the MSE-minimizing length. `estimates[i]` must belong to
/// `candidates[i]`.
pub fn select(
    candidates: &[MseCandidate],
    estimates: &[EstimateRecord],
) -> Result<SelectionResult> {
    if candidates.len() != estimates.len() {
        return Err(Error::CandidateMismatch(format!(
            "{} candidates but {} estimates",
            candidates.len(),
            estimates.len()
        )));
    }
    if let Some((c, e)) = candidates
        .iter()
        .zip(estimates)
        .find(|(c, e)| c.pre_length != e.pre_length)
    {
        return Err(Error::CandidateMismatch(format!(
            "candidate length {} paired with estimate length {}",
            c.pre_length, e.pre_length
        )));
    }
    let best = argmin_mse(candidates)?;
    let mut ordered = candidates.to_vec();
    ordered.sort_by_key(|c| c.pre_length);
    Ok(SelectionResult {
        candidates: ordered,
        optimal_length: candidates[best].pre_length,
        selected: estimates[best].clone(),
    })
}

/// Inputs of the infeasible rule: pre-trend divergence per period, number of
/// post periods, and the true variance of each candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub gamma: f64,
    pub ell_post: usize,
    pub variances: BTreeMap<usize, f64>,
}

impl OracleSpec {
    pub fn new(gamma: f64, ell_post: usize, variances: BTreeMap<usize, f64>) -> Result<Self> {
        if ell_post == 0 {
            return Err(Error::InvalidConfig("ell_post must be positive".into()));
        }
        if let Some((l, v)) = variances.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "variance at length {l} must be finite and non-negative, got {v}"
            )));
        }
        Ok(Self {
            gamma,
            ell_post,
            variances,
        })
    }
}

/// `(γ·ℓ / (ℓ + ℓ_post))² + Var(ℓ)`
pub fn oracle_mse(spec: &OracleSpec, ell: usize) -> Result<f64> {
    let var = spec.variances.get(&ell).ok_or(Error::UnknownLength(ell))?;
    let bias = spec.gamma * ell as f64 / (ell + spec.ell_post) as f64;
    Ok(bias * bias + var)
}

pub fn oracle_select(spec: &OracleSpec) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    // BTreeMap iterates in ascending length, so strict `<` keeps the smallest on ties
    for &ell in spec.variances.keys() {
        let mse = oracle_mse(spec, ell)?;
        if best.is_none_or(|(_, m)| mse < m) {
            best = Some((ell, mse));
        }
    }
    best.map(|(l, _)| l).ok_or(Error::EmptyCandidates)
}

pub fn write_candidates_csv<W: Write>(
    candidates: &[MseCandidate],
    sink: W,
    precision: Precision,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CANDIDATE_HEADER)?;
    for c in candidates {
        w.write_record([
            c.pre_length.to_string(),
            precision.format(c.mse),
            precision.format(c.bias_sq),
            precision.format(c.variance),
            precision.format(c.coefficient),
            precision.format(c.se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Extra per-length columns that are not part of the candidate table.
pub fn write_diagnostics_csv<W: Write>(
    candidates: &[MseCandidate],
    sink: W,
    precision: Precision,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["length", "bias", "mse_adjusted"])?;
    for c in candidates {
        w.write_record([
            c.pre_length.to_string(),
            precision.format(c.bias),
            precision.format(c.mse_adjusted),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(length, coefficient, se)` rows from a CSV with those three
/// columns (any order, extra columns ignored).
pub fn read_estimates_csv<R: Read>(source: R) -> Result<Vec<(usize, f64, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (cl, cc, cs) = (col("length")?, col("coefficient")?, col("se")?);
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            msg: e.to_string(),
        })?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let bad = |what: &str| Error::MalformedRow {
            row,
            msg: format!("cannot parse {what}"),
        };
        rows.push((
            get(cl).parse().map_err(|_| bad("length"))?,
            get(cc).parse().map_err(|_| bad("coefficient"))?,
            get(cs).parse().map_err(|_| bad("se"))?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(ell: usize, coefficient: f64, se: f64) -> EstimateRecord {
        EstimateRecord {
            model_kind: ModelKind::Twfe,
            pre_length: ell,
            target: Target::Static,
            coefficient,
            se,
            n_obs: 0,
            df: 1,
            se_type: SeType::Iid,
        }
    }

    #[test]
    fn benchmark_row_has_no_bias() {
        let c = candidates_from_estimates(&[(0, 3.0, 2.0), (1, 4.0, 1.0)]).unwrap();
        assert_eq!(c[0].bias, 0.0);
        assert_eq!(c[0].bias_sq, 0.0);
        assert_eq!(c[0].mse, c[0].variance);
        assert_eq!(c[0].mse_adjusted, 4.0);
        assert_eq!(c[1].mse, 2.0);
        // 1 - (4 - 1) + 1
        assert_eq!(c[1].mse_adjusted, -1.0);
    }

    #[test]
    fn single_candidate_selects_zero() {
        let c = candidates_from_estimates(&[(0, 3.0, 2.0)]).unwrap();
        let s = select(&c, &[record(0, 3.0, 2.0)]).unwrap();
        assert_eq!(s.optimal_length, 0);
    }

    #[test]
    fn ties_go_to_the_shorter_window() {
        // both have mse 4
        let c = candidates_from_estimates(&[(0, 0.0, 2.0), (1, 0.0, 2.0), (2, 2.0, 0.0)]).unwrap();
        let est = [
            record(0, 0.0, 2.0),
            record(1, 0.0, 2.0),
            record(2, 2.0, 0.0),
        ];
        assert_eq!(select(&c, &est).unwrap().optimal_length, 0);
        let rev: Vec<_> = c.iter().rev().cloned().collect();
        let rev_est: Vec<_> = est.iter().rev().cloned().collect();
        assert_eq!(select(&rev, &rev_est).unwrap().optimal_length, 0);
    }

    #[test]
    fn selection_errors() {
        assert!(matches!(select(&[], &[]), Err(Error::EmptyCandidates)));
        let mut c = candidates_from_estimates(&[(0, 0.0, 1.0), (1, 0.0, 1.0)]).unwrap();
        c[1].mse = f64::NAN;
        let est = [record(0, 0.0, 1.0), record(1, 0.0, 1.0)];
        assert!(matches!(select(&c, &est), Err(Error::NonFiniteMse(1))));
        assert!(matches!(
            select(&c, &est[..1]),
            Err(Error::CandidateMismatch(_))
        ));
        assert!(matches!(
            candidates_from_estimates(&[(1, 0.0, 1.0)]),
            Err(Error::CandidateMismatch(_))
        ));
    }

    fn spec(gamma: f64, ell_post: usize, vars: &[f64]) -> OracleSpec {
        OracleSpec::new(gamma, ell_post, vars.iter().copied().enumerate().collect()).unwrap()
    }

    #[test]
    fn oracle_mse_formula() {
        let s = spec(2.0, 1, &[9.0, 1.0, 1.0, 5.0]);
        assert_eq!(oracle_mse(&s, 3).unwrap(), 7.25);
        assert_eq!(oracle_mse(&s, 0).unwrap(), 9.0);
        assert!(matches!(oracle_mse(&s, 4), Err(Error::UnknownLength(4))));
    }

    #[test]
    fn oracle_select_edge_cases() {
        let decreasing: Vec<f64> = (0..10).map(|l| 10.0 - l as f64).collect();
        assert_eq!(oracle_select(&spec(0.0, 5, &decreasing)).unwrap(), 9);
        assert_eq!(oracle_select(&spec(1e6, 5, &[1.0; 10])).unwrap(), 0);
        let empty = OracleSpec::new(1.0, 1, BTreeMap::new()).unwrap();
        assert!(matches!(oracle_select(&empty), Err(Error::EmptyCandidates)));
        assert!(OracleSpec::new(1.0, 0, BTreeMap::new()).is_err());
        assert!(OracleSpec::new(1.0, 1, [(0, f64::INFINITY)].into()).is_err());
    }

    #[test]
    fn oracle_select_by_enumeration() {
        // Var(ℓ) = 1.1 · 110/(ℓ+11), γ = 1, ℓ_post = 11
        let vars: Vec<f64> = (0..10).map(|l| 1.1 * 110.0 / (l as f64 + 11.0)).collect();
        let mut best = (0, f64::INFINITY);
        for (l, v) in vars.iter().enumerate() {
            let b = l as f64 / (l as f64 + 11.0);
            let m = b * b + v;
            if m < best.1 {
                best = (l, m);
            }
        }
        assert_eq!(best.0, 9);
        assert_eq!(oracle_select(&spec(1.0, 11, &vars)).unwrap(), best.0);
    }

    #[test]
    fn candidate_csv_header_is_exact() {
        let c = candidates_from_estimates(&[(0, 100.292, 11.152)]).unwrap();
        let mut buf = Vec::new();
        write_candidates_csv(&c, &mut buf, Precision::Significant6).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "length,mse,bias_squared,variance,coefficient,se\n0,124.367,0,124.367,100.292,11.152\n"
        );
    }

    #[test]
    fn estimates_csv_parses() {
        let rows =
            read_estimates_csv("length,coefficient,se\n0,1.5,0.5\n1,2,0.25\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![(0, 1.5, 0.5), (1, 2.0, 0.25)]);
        assert!(read_estimates_csv("length,coefficient\n0,1\n".as_bytes()).is_err());
    }
}

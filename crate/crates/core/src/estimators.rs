//! Difference-in-differences specifications on a balanced, common-timing
//! panel: two-way fixed effects with a single treatment dummy, the
//! conventional event study, and the modified event study that pools every
//! included pre-period into the comparison base. Closed-form versions of the
//! same estimators are provided for cross-checking.
//!
//! Event times are relative to the reference period: `l = t - t_star`, so the
//! reference period itself is `l = 0` and the first treated period is `l = 1`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fe_ols::{self, DesignSpec, SeType};
use crate::output::Precision;
use crate::panel::PanelDataset;

const TREATMENT: &str = "treatment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Twfe,
    EventStudy,
    ModifiedEventStudy,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Twfe => "twfe",
            ModelKind::EventStudy => "event_study",
            ModelKind::ModifiedEventStudy => "modified_event_study",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "twfe" => Ok(ModelKind::Twfe),
            "event_study" => Ok(ModelKind::EventStudy),
            "modified_event_study" => Ok(ModelKind::ModifiedEventStudy),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Parameter an estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// The single TWFE treatment coefficient.
    Static,
    /// Event-time coefficient, relative to the reference period.
    EventTime(i64),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Static => f.write_str("static"),
            Target::EventTime(l) => write!(f, "event_time:{l}"),
        }
    }
}

/// One coefficient and its standard error for a given pre-trends length.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub model_kind: ModelKind,
    pub pre_length: usize,
    pub target: Target,
    pub coefficient: f64,
    pub se: f64,
    pub n_obs: usize,
    pub df: i64,
    pub se_type: SeType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    /// `period - t_star`
    pub event_time: i64,
    /// Calendar period.
    pub period: i64,
    pub coefficient: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Event-study coefficients with 95% Student-t intervals. The reference
/// period carries no point.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStudyCurve {
    pub points: Vec<CurvePoint>,
    /// Calendar reference period `t_star`.
    pub reference_time: i64,
    pub model_kind: ModelKind,
    pub pre_length: usize,
    pub df: i64,
    pub n_obs: usize,
    pub se_type: SeType,
}

impl EventStudyCurve {
    pub fn point(&self, event_time: i64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.event_time == event_time)
    }

    pub fn point_at_period(&self, period: i64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.period == period)
    }

    /// Writes `event_time,period,coefficient,se,ci_low,ci_high[,true_value]`.
    pub fn write_csv<W: Write>(
        &self,
        sink: W,
        true_value: Option<&dyn Fn(i64) -> Option<f64>>,
        precision: Precision,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![
            "event_time",
            "period",
            "coefficient",
            "se",
            "ci_low",
            "ci_high",
        ];
        if true_value.is_some() {
            header.push("true_value");
        }
        w.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![
                p.event_time.to_string(),
                p.period.to_string(),
                precision.format(p.coefficient),
                precision.format(p.se),
                precision.format(p.ci_low),
                precision.format(p.ci_high),
            ];
            if let Some(f) = true_value {
                row.push(f(p.period).map(|v| precision.format(v)).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two-sided 95% Student-t critical value.
pub fn t_critical(df: i64) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN)
}

/// Builds the fixed-effects design on a balanced panel. `dummy_for` maps an
/// observation's period to the regressor index it switches on, for treated
/// units only.
fn panel_design(
    ds: &PanelDataset,
    names: Vec<String>,
    dummy_for: impl Fn(i64) -> Option<usize>,
) -> Result<DesignSpec> {
    ds.require_balanced()?;
    let unit_pos: HashMap<&str, usize> = ds
        .units()
        .iter()
        .enumerate()
        .map(|(i, (u, _))| (u.as_str(), i))
        .collect();
    let n = ds.len();
    let mut outcome = Vec::with_capacity(n);
    let mut units = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut columns = vec![vec![0.0; n]; names.len()];
    for (row, o) in ds.observations().iter().enumerate() {
        outcome.push(o.outcome);
        units.push(unit_pos[o.unit_id.as_str()]);
        times.push((o.time - ds.t_min()) as usize);
        if o.treated_group {
            if let Some(j) = dummy_for(o.time) {
                columns[j][row] = 1.0;
            }
        }
    }
    DesignSpec::new(
        outcome,
        names.into_iter().zip(columns).collect(),
        &units,
        &times,
    )
}

/// TWFE estimate of the treatment dummy `treated ∧ t > t_star` on the window
/// `[t_star - ell, t_max]`.
pub fn estimate_twfe(ds: &PanelDataset, ell: usize, se_type: SeType) -> Result<EstimateRecord> {
    estimate_target(ds, ModelKind::Twfe, ell, Target::Static, se_type)
}

fn event_name(l: i64) -> String {
    format!("event_{l}")
}

fn fit_curve(
    ds: &PanelDataset,
    periods: Vec<i64>,
    model_kind: ModelKind,
    pre_length: usize,
    se_type: SeType,
) -> Result<EventStudyCurve> {
    if periods.is_empty() {
        return Err(Error::InvalidPanel(
            "no event-time coefficients to estimate outside the reference period".into(),
        ));
    }
    let t_star = ds.t_star();
    let names: Vec<String> = periods.iter().map(|&t| event_name(t - t_star)).collect();
    let position: HashMap<i64, usize> = periods.iter().enumerate().map(|(j, &t)| (t, j)).collect();
    let design = panel_design(ds, names.clone(), |t| position.get(&t).copied())?;
    let fit = fe_ols::fit(&design, se_type)?;
    let crit = t_critical(fit.df_resid);
    let mut points = Vec::with_capacity(periods.len());
    for (name, &period) in names.iter().zip(&periods) {
        let coefficient = fit.coefficient(name)?;
        let se = fe_ols::coefficient_se(&fit, name)?;
        points.push(CurvePoint {
            event_time: period - t_star,
            period,
            coefficient,
            se,
            ci_low: coefficient - crit * se,
            ci_high: coefficient + crit * se,
        });
    }
    Ok(EventStudyCurve {
        points,
        reference_time: t_star,
        model_kind,
        pre_length,
        df: fit.df_resid,
        n_obs: fit.n_obs,
        se_type,
    })
}

/// Conventional event study on the panel as given: one dummy per period other
/// than the reference period.
pub fn estimate_event_study(ds: &PanelDataset, se_type: SeType) -> Result<EventStudyCurve> {
    let t_star = ds.t_star();
    let periods: Vec<i64> = ds.periods().into_iter().filter(|&t| t != t_star).collect();
    let pre_length = ds.max_pre_length() as usize;
    fit_curve(ds, periods, ModelKind::EventStudy, pre_length, se_type)
}

/// Modified event study on `[t_star - ell, t_max]`: dummies only for periods
/// after `t_star`, with every retained pre-period in the omitted base.
pub fn estimate_modified_event_study(
    ds: &PanelDataset,
    ell: usize,
    se_type: SeType,
) -> Result<EventStudyCurve> {
    let window = ds.truncate_pre_window(ell)?;
    let t_star = window.t_star();
    let periods: Vec<i64> = window
        .periods()
        .into_iter()
        .filter(|&t| t > t_star)
        .collect();
    fit_curve(
        &window,
        periods,
        ModelKind::ModifiedEventStudy,
        ell,
        se_type,
    )
}

/// Design for one model on the window `[t_star - ell, t_max]`, plus the name
/// of the regressor carrying `target`.
fn target_design(
    ds: &PanelDataset,
    kind: ModelKind,
    ell: usize,
    target: Target,
) -> Result<(DesignSpec, String)> {
    let window = ds.truncate_pre_window(ell)?;
    let t_star = window.t_star();
    let periods: Vec<i64> = match (kind, target) {
        (ModelKind::Twfe, _) => {
            let design = panel_design(&window, vec![TREATMENT.into()], |t| {
                (t > t_star).then_some(0)
            })?;
            return Ok((design, TREATMENT.into()));
        }
        (_, Target::Static) => {
            return Err(Error::InvalidConfig(format!(
                "model `{kind}` needs an event-time target"
            )))
        }
        (ModelKind::EventStudy, _) => window
            .periods()
            .into_iter()
            .filter(|&t| t != t_star)
            .collect(),
        (ModelKind::ModifiedEventStudy, _) => window
            .periods()
            .into_iter()
            .filter(|&t| t > t_star)
            .collect(),
    };
    let Target::EventTime(l) = target else {
        unreachable!("static target handled above")
    };
    if !periods.contains(&(t_star + l)) {
        return Err(Error::MissingPeriod(t_star + l));
    }
    let names: Vec<String> = periods.iter().map(|&t| event_name(t - t_star)).collect();
    let position: HashMap<i64, usize> = periods.iter().enumerate().map(|(j, &t)| (t, j)).collect();
    let design = panel_design(&window, names, |t| position.get(&t).copied())?;
    Ok((design, event_name(l)))
}

/// Single-coefficient estimate used by window selection.
pub fn estimate_target(
    ds: &PanelDataset,
    kind: ModelKind,
    ell: usize,
    target: Target,
    se_type: SeType,
) -> Result<EstimateRecord> {
    let (design, name) = target_design(ds, kind, ell, target)?;
    let fit = fe_ols::fit(&design, se_type)?;
    Ok(EstimateRecord {
        model_kind: kind,
        pre_length: ell,
        target,
        coefficient: fit.coefficient(&name)?,
        se: fe_ols::coefficient_se(&fit, &name)?,
        n_obs: fit.n_obs,
        df: fit.df_resid,
        se_type,
    })
}

/// Coefficient and `(X̃'X̃)⁻¹` diagonal entry for `target`. Under i.i.d.
/// errors with standard deviation σ the estimator's variance is σ² times the
/// returned factor.
pub fn coefficient_and_variance_factor(
    ds: &PanelDataset,
    kind: ModelKind,
    ell: usize,
    target: Target,
) -> Result<(f64, f64)> {
    let (design, name) = target_design(ds, kind, ell, target)?;
    let fit = fe_ols::fit(&design, SeType::Iid)?;
    let j = fit
        .names
        .iter()
        .position(|n| *n == name)
        .expect("target regressor present");
    Ok((fit.coefficients[j], fit.bread[(j, j)]))
}

fn group_mean_difference(
    ds: &PanelDataset,
    unit_change: impl Fn(&crate::panel::OutcomeGrid, usize) -> f64,
) -> Result<f64> {
    let grid = ds.outcome_grid()?;
    let (mut sum_t, mut n_t, mut sum_c, mut n_c) = (0.0, 0usize, 0.0, 0usize);
    for u in 0..grid.n_units() {
        let d = unit_change(&grid, u);
        if grid.is_treated_unit(u) {
            sum_t += d;
            n_t += 1;
        } else {
            sum_c += d;
            n_c += 1;
        }
    }
    Ok(sum_t / n_t as f64 - sum_c / n_c as f64)
}

/// Mean change from `t_star` to `t_star + l` among treated units minus the
/// same among controls.
pub fn closed_form_event_study(ds: &PanelDataset, l: i64) -> Result<f64> {
    let t_star = ds.t_star();
    let target = t_star + l;
    let grid = ds.outcome_grid()?;
    if !grid.contains_period(target) {
        return Err(Error::MissingPeriod(target));
    }
    group_mean_difference(ds, |g, u| {
        g.get(u, target).unwrap_or(f64::NAN) - g.get(u, t_star).unwrap_or(f64::NAN)
    })
}

/// Like [`closed_form_event_study`] but differencing against each unit's
/// average over `[t_star - ell, t_star]`.
pub fn closed_form_modified(ds: &PanelDataset, l: i64, ell: usize) -> Result<f64> {
    let t_star = ds.t_star();
    let target = t_star + l;
    let max = ds.max_pre_length();
    if ell as i64 > max {
        return Err(Error::WindowOutOfRange {
            requested: ell as i64,
            max,
        });
    }
    let grid = ds.outcome_grid()?;
    if !grid.contains_period(target) {
        return Err(Error::MissingPeriod(target));
    }
    let start = t_star - ell as i64;
    group_mean_difference(ds, |g, u| {
        let pre: f64 = (start..=t_star).filter_map(|t| g.get(u, t)).sum::<f64>() / (ell + 1) as f64;
        g.get(u, target).unwrap_or(f64::NAN) - pre
    })
}

/// Two-period difference in mean changes.
pub fn att_2x2(ds: &PanelDataset) -> Result<f64> {
    let periods = ds.periods();
    if periods.len() != 2 {
        return Err(Error::WrongPeriodCount(periods.len()));
    }
    let (first, second) = (periods[0], periods[1]);
    group_mean_difference(ds, |g, u| {
        g.get(u, second).unwrap_or(f64::NAN) - g.get(u, first).unwrap_or(f64::NAN)
    })
}

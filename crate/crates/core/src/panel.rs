//! Long-format panel data: ingestion, validation and pre-trends windows.
//!
//! A panel has a single treatment reference period `t_star` shared by every
//! unit. Treatment is active for units in the treated group at periods
//! strictly after `t_star`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// One (unit, period) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit_id: String,
    pub time: i64,
    /// Group membership, constant within a unit.
    pub treated_group: bool,
    pub outcome: f64,
}

/// An immutable panel with a common reference period.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    observations: Vec<Observation>,
    t_star: i64,
    t_min: i64,
    t_max: i64,
    /// Units in first-appearance order with their group flag.
    units: Vec<(String, bool)>,
    n_treated: usize,
    n_control: usize,
}

/// Result of [`PanelDataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub is_balanced: bool,
    pub missing_cells: Vec<(String, i64)>,
    /// (treated units, control units)
    pub group_counts: (usize, usize),
    /// (t_min, t_max)
    pub period_range: (i64, i64),
}

/// Column names used when reading or writing long-format CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    pub treated: String,
    pub outcome: String,
    pub t_star: i64,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            time: "time".into(),
            treated: "treated".into(),
            outcome: "outcome".into(),
            t_star: -1,
        }
    }
}

impl PanelDataset {
    /// Builds a dataset, checking key uniqueness, group consistency and the
    /// position of `t_star`. Balance is not enforced here; see
    /// [`PanelDataset::validate`] and [`PanelDataset::require_balanced`].
    pub fn new(observations: Vec<Observation>, t_star: i64) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen: BTreeSet<(&str, i64)> = BTreeSet::new();
        let mut group: HashMap<&str, bool> = HashMap::new();
        let mut units = Vec::new();
        let mut t_min = i64::MAX;
        let mut t_max = i64::MIN;
        for obs in &observations {
            if !seen.insert((obs.unit_id.as_str(), obs.time)) {
                return Err(Error::DuplicateKey {
                    unit: obs.unit_id.clone(),
                    time: obs.time,
                });
            }
            match group.get(obs.unit_id.as_str()) {
                Some(&g) if g != obs.treated_group => {
                    return Err(Error::InconsistentTreatment {
                        unit: obs.unit_id.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    group.insert(obs.unit_id.as_str(), obs.treated_group);
                    units.push((obs.unit_id.clone(), obs.treated_group));
                }
            }
            t_min = t_min.min(obs.time);
            t_max = t_max.max(obs.time);
        }
        let n_treated = units.iter().filter(|(_, g)| *g).count();
        let n_control = units.len() - n_treated;
        if n_treated == 0 || n_control == 0 {
            return Err(Error::InvalidPanel(format!(
                "need at least one treated and one control unit, found {n_treated} treated and {n_control} control"
            )));
        }
        if !(t_min <= t_star && t_star < t_max) {
            return Err(Error::InvalidPanel(format!(
                "reference period {t_star} must satisfy {t_min} <= t_star < {t_max}"
            )));
        }
        Ok(Self {
            observations,
            t_star,
            t_min,
            t_max,
            units,
            n_treated,
            n_control,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn t_star(&self) -> i64 {
        self.t_star
    }

    pub fn t_min(&self) -> i64 {
        self.t_min
    }

    pub fn t_max(&self) -> i64 {
        self.t_max
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    /// Units with their group flag, in first-appearance order.
    pub fn units(&self) -> &[(String, bool)] {
        &self.units
    }

    /// Distinct periods present, ascending.
    pub fn periods(&self) -> Vec<i64> {
        let set: BTreeSet<i64> = self.observations.iter().map(|o| o.time).collect();
        set.into_iter().collect()
    }

    /// Maximum feasible pre-trends length, `t_star - t_min`.
    pub fn max_pre_length(&self) -> i64 {
        self.t_star - self.t_min
    }

    /// Treatment status used in estimation.
    pub fn is_treated(&self, obs: &Observation) -> bool {
        obs.treated_group && obs.time > self.t_star
    }

    /// Event time of a calendar period relative to the reference period.
    pub fn event_time(&self, time: i64) -> i64 {
        time - self.t_star
    }

    pub fn validate(&self) -> ValidationReport {
        let periods: Vec<i64> = (self.t_min..=self.t_max).collect();
        let present: BTreeSet<(&str, i64)> = self
            .observations
            .iter()
            .map(|o| (o.unit_id.as_str(), o.time))
            .collect();
        let mut missing_cells = Vec::new();
        for (unit, _) in &self.units {
            for &t in &periods {
                if !present.contains(&(unit.as_str(), t)) {
                    missing_cells.push((unit.clone(), t));
                }
            }
        }
        ValidationReport {
            is_balanced: missing_cells.is_empty(),
            missing_cells,
            group_counts: (self.n_treated, self.n_control),
            period_range: (self.t_min, self.t_max),
        }
    }

    pub fn require_balanced(&self) -> Result<()> {
        let expected = self.units.len() as i64 * (self.t_max - self.t_min + 1);
        if self.observations.len() as i64 == expected {
            return Ok(());
        }
        Err(Error::Unbalanced {
            missing: self.validate().missing_cells.len(),
        })
    }

    /// Keeps periods `[t_star - ell, t_max]`. The reference period is always
    /// retained, so `ell = 0` leaves exactly one pre-treatment period.
    pub fn truncate_pre_window(&self, ell: usize) -> Result<PanelDataset> {
        let max = self.max_pre_length();
        let ell_i = i64::try_from(ell).unwrap_or(i64::MAX);
        if ell_i > max {
            return Err(Error::WindowOutOfRange {
                requested: ell_i,
                max,
            });
        }
        let start = self.t_star - ell_i;
        let observations: Vec<Observation> = self
            .observations
            .iter()
            .filter(|o| o.time >= start)
            .cloned()
            .collect();
        PanelDataset::new(observations, self.t_star)
    }

    /// Outcomes as a `units × periods` grid over `[t_min, t_max]`, rows in
    /// unit order. Requires a balanced panel.
    pub fn outcome_grid(&self) -> Result<OutcomeGrid> {
        self.require_balanced()?;
        let n_periods = (self.t_max - self.t_min + 1) as usize;
        let index: HashMap<&str, usize> = self
            .units
            .iter()
            .enumerate()
            .map(|(i, (u, _))| (u.as_str(), i))
            .collect();
        let mut values = vec![0.0; self.units.len() * n_periods];
        for o in &self.observations {
            let row = index[o.unit_id.as_str()];
            let col = (o.time - self.t_min) as usize;
            values[row * n_periods + col] = o.outcome;
        }
        Ok(OutcomeGrid {
            t_min: self.t_min,
            n_periods,
            treated: self.units.iter().map(|(_, g)| *g).collect(),
            values,
        })
    }

    /// Per-period group means: `period -> (treated mean, control mean)`.
    pub fn group_means(&self) -> BTreeMap<i64, (f64, f64)> {
        let mut acc: BTreeMap<i64, [(f64, usize); 2]> = BTreeMap::new();
        for o in &self.observations {
            let slot =
                &mut acc.entry(o.time).or_insert([(0.0, 0); 2])[usize::from(!o.treated_group)];
            slot.0 += o.outcome;
            slot.1 += 1;
        }
        acc.into_iter()
            .map(|(t, [tr, co])| {
                let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };
                (t, (mean(tr), mean(co)))
            })
            .collect()
    }
}

/// Dense view of a balanced panel's outcomes.
#[derive(Debug, Clone)]
pub struct OutcomeGrid {
    t_min: i64,
    n_periods: usize,
    treated: Vec<bool>,
    values: Vec<f64>,
}

impl OutcomeGrid {
    pub fn n_units(&self) -> usize {
        self.treated.len()
    }

    pub fn is_treated_unit(&self, unit: usize) -> bool {
        self.treated[unit]
    }

    pub fn contains_period(&self, t: i64) -> bool {
        t >= self.t_min && ((t - self.t_min) as usize) < self.n_periods
    }

    pub fn get(&self, unit: usize, t: i64) -> Option<f64> {
        if !self.contains_period(t) {
            return None;
        }
        Some(self.values[unit * self.n_periods + (t - self.t_min) as usize])
    }
}

fn parse_treated(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads comma-delimited long-format data with a header row.
pub fn load_long_csv<R: Read>(source: R, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_unit = column(&schema.unit)?;
    let c_time = column(&schema.time)?;
    let c_treated = column(&schema.treated)?;
    let c_outcome = column(&schema.outcome)?;

    let mut observations = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is row 1
        let row = i as u64 + 2;
        let record = record.map_err(|e| Error::MalformedRow {
            row,
            msg: e.to_string(),
        })?;
        let field = |c: usize, name: &str| {
            record.get(c).ok_or_else(|| Error::MalformedRow {
                row,
                msg: format!("missing field `{name}`"),
            })
        };
        let unit_id = field(c_unit, &schema.unit)?.to_string();
        let raw_time = field(c_time, &schema.time)?;
        let time: i64 = raw_time.parse().map_err(|_| Error::MalformedRow {
            row,
            msg: format!("time `{raw_time}` is not an integer"),
        })?;
        let raw_treated = field(c_treated, &schema.treated)?;
        let treated_group = parse_treated(raw_treated).ok_or_else(|| Error::MalformedRow {
            row,
            msg: format!("treated `{raw_treated}` is not 0/1 or true/false"),
        })?;
        let raw_outcome = field(c_outcome, &schema.outcome)?;
        let outcome: f64 = raw_outcome.parse().map_err(|_| Error::MalformedRow {
            row,
            msg: format!("outcome `{raw_outcome}` is not a number"),
        })?;
        observations.push(Observation {
            unit_id,
            time,
            treated_group,
            outcome,
        });
    }
    if observations.is_empty() {
        return Err(Error::EmptyInput);
    }
    PanelDataset::new(observations, schema.t_star)
}

/// Writes the dataset in long format. Outcomes use the shortest
/// representation that round-trips exactly.
pub fn write_long_csv<W: Write>(ds: &PanelDataset, sink: W, schema: &CsvSchema) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record([&schema.unit, &schema.time, &schema.treated, &schema.outcome])?;
    for o in ds.observations() {
        writer.write_record([
            o.unit_id.clone(),
            o.time.to_string(),
            u8::from(o.treated_group).to_string(),
            o.outcome.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

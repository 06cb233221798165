//! Synthetic panels with non-parallel pre-trends and a Monte Carlo harness.
//!
//! Both generators draw `Y_it = μ_group + θ_it + effect_it + ε_it` with
//! `θ_it = slope_control_pre · t` for control units before treatment and
//! `slope_common · t` otherwise. The static design adds a level shift after
//! `t_star`; the dynamic design adds `effect · (t - t_star - 1)`, which is
//! zero in the first treated period.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{self, ModelKind, Target};
use crate::fe_ols::SeType;
use crate::output::Precision;
use crate::panel::{Observation, PanelDataset};
use crate::selector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimKind {
    Static,
    Dynamic,
}

impl SimKind {
    pub fn label(self) -> &'static str {
        match self {
            SimKind::Static => "static",
            SimKind::Dynamic => "dynamic",
        }
    }

    /// Model used to estimate effects on data of this kind.
    pub fn model(self) -> ModelKind {
        match self {
            SimKind::Static => ModelKind::Twfe,
            SimKind::Dynamic => ModelKind::ModifiedEventStudy,
        }
    }
}

impl fmt::Display for SimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(SimKind::Static),
            "dynamic" => Ok(SimKind::Dynamic),
            other => Err(Error::InvalidConfig(format!(
                "unknown simulation kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub kind: SimKind,
    pub mu_treated: f64,
    pub mu_control: f64,
    pub slope_common: f64,
    pub slope_control_pre: f64,
    /// Level shift (static) or per-period slope of the effect (dynamic).
    pub effect: f64,
    /// Standard deviation of ε.
    pub noise_sd: f64,
    pub n_per_group: usize,
    pub t_min: i64,
    pub t_max: i64,
    pub t_star: i64,
    pub seed: u64,
}

/// Keys accepted in config files, in snapshot order.
pub const CONFIG_KEYS: [&str; 12] = [
    "kind",
    "mu_treated",
    "mu_control",
    "slope_common",
    "slope_control_pre",
    "effect",
    "noise_sd",
    "n_per_group",
    "t_min",
    "t_max",
    "t_star",
    "seed",
];

pub const DEFAULT_SEED: u64 = 20_240_101;

impl SimConfig {
    pub fn defaults(kind: SimKind) -> Self {
        let (slope_control_pre, effect) = match kind {
            SimKind::Static => (11.0, 100.0),
            SimKind::Dynamic => (7.0, 6.0),
        };
        Self {
            kind,
            mu_treated: 100.0,
            mu_control: -100.0,
            slope_common: 10.0,
            slope_control_pre,
            effect,
            noise_sd: 50.0,
            n_per_group: 50,
            t_min: -10,
            t_max: 10,
            t_star: -1,
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be finite and >= 0, got {}",
                self.noise_sd
            )));
        }
        if self.n_per_group < 1 {
            return Err(Error::InvalidConfig(
                "n_per_group must be at least 1".into(),
            ));
        }
        if !(self.t_min <= self.t_star && self.t_star < self.t_max) {
            return Err(Error::InvalidConfig(format!(
                "need t_min <= t_star < t_max, got {} <= {} < {}",
                self.t_min, self.t_star, self.t_max
            )));
        }
        Ok(())
    }

    /// Sets one field from its textual value. `kind` is not accepted here
    /// because it selects the defaults; use [`SimConfig::from_pairs`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "mu_treated" => self.mu_treated = num(key, value)?,
            "mu_control" => self.mu_control = num(key, value)?,
            "slope_common" => self.slope_common = num(key, value)?,
            "slope_control_pre" => self.slope_control_pre = num(key, value)?,
            "effect" => self.effect = num(key, value)?,
            "noise_sd" => self.noise_sd = num(key, value)?,
            "n_per_group" => self.n_per_group = num(key, value)?,
            "t_min" => self.t_min = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "t_star" => self.t_star = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "kind" => {
                let kind: SimKind = value.trim().parse()?;
                if kind != self.kind {
                    return Err(Error::InvalidConfig(
                        "`kind` must be resolved before other keys".into(),
                    ));
                }
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Starts from the defaults of the `kind` found in `pairs` (or
    /// `fallback_kind`), then applies the remaining pairs in order.
    pub fn from_pairs(fallback_kind: SimKind, pairs: &[(String, String)]) -> Result<Self> {
        let kind = match pairs.iter().rev().find(|(k, _)| k == "kind") {
            Some((_, v)) => v.parse()?,
            None => fallback_kind,
        };
        let mut cfg = Self::defaults(kind);
        for (k, v) in pairs.iter().filter(|(k, _)| k != "kind") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// All fields as `key = value` pairs in [`CONFIG_KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let values = [
            self.kind.label().to_string(),
            self.mu_treated.to_string(),
            self.mu_control.to_string(),
            self.slope_common.to_string(),
            self.slope_control_pre.to_string(),
            self.effect.to_string(),
            self.noise_sd.to_string(),
            self.n_per_group.to_string(),
            self.t_min.to_string(),
            self.t_max.to_string(),
            self.t_star.to_string(),
            self.seed.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn trend(&self, treated: bool, t: i64) -> f64 {
        let slope = if !treated && t <= self.t_star {
            self.slope_control_pre
        } else {
            self.slope_common
        };
        slope * t as f64
    }

    fn treatment_effect(&self, t: i64) -> f64 {
        if t <= self.t_star {
            return 0.0;
        }
        match self.kind {
            SimKind::Static => self.effect,
            SimKind::Dynamic => self.effect * (t - self.t_star - 1) as f64,
        }
    }
}

/// Parses flat `key = value` text. Blank lines and `#` comments are ignored.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`", i + 1))
        })?;
        let key = k.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::InvalidConfig(format!(
                "line {}: unknown config key `{key}`",
                i + 1
            )));
        }
        pairs.push((key.to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Standard normal draws by the Box–Muller transform.
#[derive(Debug, Clone)]
pub struct NormalSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps ln finite
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }
}

/// 64-bit mixing function used to derive per-replication seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replication_seed(base: u64, replication: u64) -> u64 {
    base ^ splitmix64(replication)
}

fn generate(cfg: &SimConfig) -> Result<PanelDataset> {
    cfg.validate()?;
    let mut noise = NormalSampler::new(cfg.seed);
    let width = cfg.n_per_group.to_string().len().max(3);
    let n_periods = (cfg.t_max - cfg.t_min + 1) as usize;
    let mut obs = Vec::with_capacity(2 * cfg.n_per_group * n_periods);
    for (treated, prefix, mu) in [(true, 'T', cfg.mu_treated), (false, 'C', cfg.mu_control)] {
        for i in 1..=cfg.n_per_group {
            let unit_id = format!("{prefix}{i:0width$}");
            for t in cfg.t_min..=cfg.t_max {
                let mut y = mu + cfg.trend(treated, t);
                if treated {
                    y += cfg.treatment_effect(t);
                }
                let eps = noise.next_standard();
                if cfg.noise_sd > 0.0 {
                    y += cfg.noise_sd * eps;
                }
                obs.push(Observation {
                    unit_id: unit_id.clone(),
                    time: t,
                    treated_group: treated,
                    outcome: y,
                });
            }
        }
    }
    PanelDataset::new(obs, cfg.t_star)
}

/// Static-effect panel. `cfg.kind` is ignored.
pub fn gen_static(cfg: &SimConfig) -> Result<PanelDataset> {
    generate(&SimConfig {
        kind: SimKind::Static,
        ..cfg.clone()
    })
}

/// Dynamic-effect panel. `cfg.kind` is ignored.
pub fn gen_dynamic(cfg: &SimConfig) -> Result<PanelDataset> {
    generate(&SimConfig {
        kind: SimKind::Dynamic,
        ..cfg.clone()
    })
}

/// Panel of the kind named in `cfg`.
pub fn gen(cfg: &SimConfig) -> Result<PanelDataset> {
    generate(cfg)
}

/// True treatment effect on the treated at calendar `period`.
pub fn true_effect(cfg: &SimConfig, kind: SimKind, period: i64) -> Result<f64> {
    match kind {
        SimKind::Static => Ok(cfg.effect),
        SimKind::Dynamic if period > cfg.t_star => {
            Ok(cfg.effect * (period - cfg.t_star - 1) as f64)
        }
        SimKind::Dynamic => Err(Error::InvalidConfig(format!(
            "no dynamic treatment effect is defined at pre-treatment period {period}"
        ))),
    }
}

/// How a replication picks its estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    FeasibleMse,
    /// Minimizes the true MSE, computed from the noise-free design.
    Oracle,
    Fixed(usize),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::FeasibleMse => f.write_str("feasible_mse"),
            Rule::Oracle => f.write_str("oracle"),
            Rule::Fixed(l) => write!(f, "fixed({l})"),
        }
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "feasible_mse" | "feasible" => return Ok(Rule::FeasibleMse),
            "oracle" => return Ok(Rule::Oracle),
            _ => {}
        }
        let inner = s
            .strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("fixed:"));
        inner
            .and_then(|n| n.trim().parse().ok())
            .map(Rule::Fixed)
            .ok_or_else(|| Error::InvalidConfig(format!("invalid rule tag `{s}`")))
    }
}

/// Monte Carlo settings besides the data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct McPlan {
    pub replications: usize,
    pub rules: Vec<Rule>,
    /// Calendar period of the target coefficient for dynamic data.
    pub target_period: i64,
    /// Largest pre-trends length considered by the selection rules; defaults
    /// to all available pre-periods.
    pub max_length: Option<usize>,
    pub se_type: SeType,
}

impl McPlan {
    pub fn new(replications: usize, rules: Vec<Rule>) -> Self {
        Self {
            replications,
            rules,
            target_period: 5,
            max_length: None,
            se_type: SeType::Iid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleOutcome {
    pub length: usize,
    pub coefficient: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    /// One entry per plan rule, in plan order; empty on failure.
    pub outcomes: Vec<RuleOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSummary {
    pub rule: Rule,
    /// Successful replications.
    pub replications: usize,
    pub mean: f64,
    pub sd: f64,
    /// `mean - truth`
    pub bias: f64,
    /// Mean of `(estimate - truth)²`.
    pub mse: f64,
    pub mean_se: f64,
    /// Selected length → count; sums to `replications`.
    pub frequencies: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub config: SimConfig,
    pub plan: McPlan,
    pub truth: f64,
    pub replications: usize,
    pub failures: usize,
    /// Length chosen by the oracle rule, if requested.
    pub oracle_length: Option<usize>,
    pub rules: Vec<RuleSummary>,
    pub records: Vec<ReplicationRecord>,
}

impl McSummary {
    pub fn rule(&self, rule: Rule) -> Option<&RuleSummary> {
        self.rules.iter().find(|r| r.rule == rule)
    }

    /// `rule,replications,failures,truth,mean,sd,bias,mse,mean_se`
    pub fn write_summary_csv<W: Write>(&self, sink: W, precision: Precision) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "rule",
            "replications",
            "failures",
            "truth",
            "mean",
            "sd",
            "bias",
            "mse",
            "mean_se",
        ])?;
        for r in &self.rules {
            w.write_record([
                r.rule.to_string(),
                r.replications.to_string(),
                self.failures.to_string(),
                precision.format(self.truth),
                precision.format(r.mean),
                precision.format(r.sd),
                precision.format(r.bias),
                precision.format(r.mse),
                precision.format(r.mean_se),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `rule,length,count`
    pub fn write_selection_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["rule", "length", "count"])?;
        for r in &self.rules {
            for (len, count) in &r.frequencies {
                w.write_record([r.rule.to_string(), len.to_string(), count.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One row per replication and rule.
    pub fn write_replications_csv<W: Write>(&self, sink: W, precision: Precision) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "replication",
            "seed",
            "rule",
            "length",
            "coefficient",
            "se",
            "error",
        ])?;
        for rec in &self.records {
            if let Some(err) = &rec.error {
                w.write_record([
                    rec.replication.to_string(),
                    rec.seed.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    err.clone(),
                ])?;
                continue;
            }
            for (rule, out) in self.plan.rules.iter().zip(&rec.outcomes) {
                w.write_record([
                    rec.replication.to_string(),
                    rec.seed.to_string(),
                    rule.to_string(),
                    out.length.to_string(),
                    precision.format(out.coefficient),
                    precision.format(out.se),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn target_for(cfg: &SimConfig, plan: &McPlan) -> Target {
    match cfg.kind {
        SimKind::Static => Target::Static,
        SimKind::Dynamic => Target::EventTime(plan.target_period - cfg.t_star),
    }
}

/// Length minimizing the exact MSE: bias from the noise-free panel and
/// variance `noise_sd² · (X̃'X̃)⁻¹` from its design.
pub fn oracle_length(cfg: &SimConfig, plan: &McPlan, max_length: usize) -> Result<usize> {
    let clean = gen(&SimConfig {
        noise_sd: 0.0,
        ..cfg.clone()
    })?;
    let truth = truth_for(cfg, plan)?;
    let target = target_for(cfg, plan);
    let mut best: Option<(usize, f64)> = None;
    for ell in 0..=max_length {
        let (expected, factor) =
            estimators::coefficient_and_variance_factor(&clean, cfg.kind.model(), ell, target)
                .map_err(|e| Error::CandidateFailed {
                    ell,
                    source: Box::new(e),
                })?;
        let mse = (expected - truth).powi(2) + cfg.noise_sd.powi(2) * factor;
        if best.is_none_or(|(_, m)| mse < m) {
            best = Some((ell, mse));
        }
    }
    Ok(best.expect("at least length 0").0)
}

fn truth_for(cfg: &SimConfig, plan: &McPlan) -> Result<f64> {
    true_effect(cfg, cfg.kind, plan.target_period)
}

fn run_replication(
    cfg: &SimConfig,
    plan: &McPlan,
    replication: usize,
    lengths_needed: &[usize],
    max_length: usize,
    oracle: Option<usize>,
) -> ReplicationRecord {
    let seed = replication_seed(cfg.seed, replication as u64);
    let run = || -> Result<Vec<RuleOutcome>> {
        let ds = gen(&SimConfig {
            seed,
            ..cfg.clone()
        })?;
        let target = target_for(cfg, plan);
        let mut estimates: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for &ell in lengths_needed {
            let rec = estimators::estimate_target(&ds, cfg.kind.model(), ell, target, plan.se_type)
                .map_err(|e| Error::CandidateFailed {
                    ell,
                    source: Box::new(e),
                })?;
            estimates.insert(ell, (rec.coefficient, rec.se));
        }
        let outcome = |ell: usize| {
            let (coefficient, se) = estimates[&ell];
            RuleOutcome {
                length: ell,
                coefficient,
                se,
            }
        };
        plan.rules
            .iter()
            .map(|rule| match *rule {
                Rule::Fixed(ell) => Ok(outcome(ell)),
                Rule::Oracle => Ok(outcome(oracle.expect("oracle length computed"))),
                Rule::FeasibleMse => {
                    let rows: Vec<(usize, f64, f64)> = (0..=max_length)
                        .map(|l| (l, estimates[&l].0, estimates[&l].1))
                        .collect();
                    let candidates = selector::candidates_from_estimates(&rows)?;
                    let best = selector::argmin_mse(&candidates)?;
                    Ok(outcome(candidates[best].pre_length))
                }
            })
            .collect()
    };
    match run() {
        Ok(outcomes) => ReplicationRecord {
            replication,
            seed,
            outcomes,
            error: None,
        },
        Err(e) => ReplicationRecord {
            replication,
            seed,
            outcomes: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

/// Runs `plan.replications` independent draws and summarizes each rule
/// against the true effect. Replications run in parallel; summaries are
/// computed from the stored records in replication order.
pub fn monte_carlo(cfg: &SimConfig, plan: &McPlan) -> Result<McSummary> {
    cfg.validate()?;
    if plan.replications < 1 {
        return Err(Error::InvalidConfig("need at least one replication".into()));
    }
    if plan.rules.is_empty() {
        return Err(Error::InvalidConfig("no rules requested".into()));
    }
    let available = (cfg.t_star - cfg.t_min) as usize;
    let max_length = plan.max_length.unwrap_or(available);
    let largest_fixed = plan
        .rules
        .iter()
        .filter_map(|r| match r {
            Rule::Fixed(l) => Some(*l),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    if max_length.max(largest_fixed) > available {
        return Err(Error::WindowOutOfRange {
            requested: max_length.max(largest_fixed) as i64,
            max: available as i64,
        });
    }
    let truth = truth_for(cfg, plan)?;

    let mut lengths: Vec<usize> = Vec::new();
    let selecting = plan
        .rules
        .iter()
        .any(|r| matches!(r, Rule::FeasibleMse | Rule::Oracle));
    if selecting {
        lengths.extend(0..=max_length);
    }
    for r in &plan.rules {
        if let Rule::Fixed(l) = r {
            lengths.push(*l);
        }
    }
    let oracle = if plan.rules.contains(&Rule::Oracle) {
        Some(oracle_length(cfg, plan, max_length)?)
    } else {
        None
    };
    lengths.sort_unstable();
    lengths.dedup();

    let records: Vec<ReplicationRecord> = (0..plan.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, plan, r, &lengths, max_length, oracle))
        .collect();

    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let failures = records.len() - ok.len();
    let rules = plan
        .rules
        .iter()
        .enumerate()
        .map(|(k, &rule)| summarize(rule, ok.iter().map(|r| r.outcomes[k]), truth))
        .collect();

    Ok(McSummary {
        config: cfg.clone(),
        plan: plan.clone(),
        truth,
        replications: plan.replications,
        failures,
        oracle_length: oracle,
        rules,
        records,
    })
}

fn summarize(rule: Rule, outcomes: impl Iterator<Item = RuleOutcome>, truth: f64) -> RuleSummary {
    let outcomes: Vec<RuleOutcome> = outcomes.collect();
    let n = outcomes.len();
    let nf = n as f64;
    let mut frequencies = BTreeMap::new();
    for o in &outcomes {
        *frequencies.entry(o.length).or_insert(0) += 1;
    }
    let mean = outcomes.iter().map(|o| o.coefficient).sum::<f64>() / nf;
    let sd = if n > 1 {
        (outcomes
            .iter()
            .map(|o| (o.coefficient - mean).powi(2))
            .sum::<f64>()
            / (nf - 1.0))
            .sqrt()
    } else {
        0.0
    };
    RuleSummary {
        rule,
        replications: n,
        mean,
        sd,
        bias: mean - truth,
        mse: outcomes
            .iter()
            .map(|o| (o.coefficient - truth).powi(2))
            .sum::<f64>()
            / nf,
        mean_se: outcomes.iter().map(|o| o.se).sum::<f64>() / nf,
        frequencies,
    }
}

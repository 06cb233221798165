//! `pretrend`: simulate panels, estimate DiD models and pick the
//! pre-trends window by estimated MSE.

mod manifest;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pretrend_core::estimators::EventStudyCurve;
use pretrend_core::selector::{self, candidates_from_estimates, read_estimates_csv};
use pretrend_core::simulate::{self, parse_config_text};
use pretrend_core::{
    build_candidates, estimate_event_study, estimate_modified_event_study, estimate_twfe,
    load_long_csv, monte_carlo, select, true_effect, write_long_csv, CsvSchema, Error,
    EstimateRecord, FailurePolicy, McPlan, ModelKind, PanelDataset, Precision, Result, Rule,
    SeType, SimConfig, SimKind, Target,
};

use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(
    name = "pretrend",
    version,
    about = "Difference-in-differences with MSE-optimal pre-trends windows"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// `key = value` file with simulation settings (and `t_star`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Last untreated period
    #[arg(long, global = true, allow_hyphen_values = true)]
    t_star: Option<i64>,
    #[arg(long, global = true, value_enum, default_value = "iid")]
    se: SeArg,
    /// Directory for output files
    #[arg(long, global = true, default_value = "out")]
    output: PathBuf,
    #[arg(long, global = true, default_value = "unit")]
    col_unit: String,
    #[arg(long, global = true, default_value = "time")]
    col_time: String,
    #[arg(long, global = true, default_value = "treated")]
    col_treated: String,
    #[arg(long, global = true, default_value = "outcome")]
    col_outcome: String,
    /// Write floats with full round-trip precision instead of 6 significant digits
    #[arg(long, global = true)]
    full_precision: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SeArg {
    Iid,
    Cluster,
}

impl From<SeArg> for SeType {
    fn from(s: SeArg) -> Self {
        match s {
            SeArg::Iid => SeType::Iid,
            SeArg::Cluster => SeType::ClusterByUnit,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Static,
    Dynamic,
}

impl From<KindArg> for SimKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Static => SimKind::Static,
            KindArg::Dynamic => SimKind::Dynamic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SelectModel {
    Twfe,
    ModifiedEventStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum EstimateModel {
    Twfe,
    EventStudy,
    ModifiedEventStudy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum PlotModel {
    EventStudy,
    ModifiedEventStudy,
    MseOptimal,
}

/// Overrides for individual simulation settings.
#[derive(Debug, Default, Args)]
struct SimOverrides {
    #[arg(long, allow_hyphen_values = true)]
    mu_treated: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu_control: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    slope_common: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    slope_control_pre: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    effect: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    n_per_group: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    t_min: Option<i64>,
    #[arg(long, allow_hyphen_values = true)]
    t_max: Option<i64>,
}

impl SimOverrides {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("mu_treated", self.mu_treated.map(|v| v.to_string()));
        push("mu_control", self.mu_control.map(|v| v.to_string()));
        push("slope_common", self.slope_common.map(|v| v.to_string()));
        push(
            "slope_control_pre",
            self.slope_control_pre.map(|v| v.to_string()),
        );
        push("effect", self.effect.map(|v| v.to_string()));
        push("noise_sd", self.noise_sd.map(|v| v.to_string()));
        push("n_per_group", self.n_per_group.map(|v| v.to_string()));
        push("t_min", self.t_min.map(|v| v.to_string()));
        push("t_max", self.t_max.map(|v| v.to_string()));
        out
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel
    Simulate {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[command(flatten)]
        sim: SimOverrides,
    },
    /// Build the candidate table and pick the MSE-minimizing window
    Select {
        /// Long-format panel CSV
        #[arg(
            long,
            required_unless_present = "estimates",
            conflicts_with = "estimates"
        )]
        input: Option<PathBuf>,
        /// Precomputed estimates with columns length,coefficient,se
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "twfe")]
        model: SelectModel,
        /// Calendar period of the target coefficient (event-study models)
        #[arg(long, allow_hyphen_values = true)]
        target: Option<i64>,
        #[arg(long)]
        max_length: Option<usize>,
        /// Drop windows whose estimation fails instead of aborting
        #[arg(long)]
        skip_failures: bool,
    },
    /// Fit one model on one window
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "twfe")]
        model: EstimateModel,
        /// Pre-trends window length; defaults to every available pre-period
        #[arg(long)]
        length: Option<usize>,
    },
    /// Write an event-study curve with confidence bands
    Plotdata {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "event_study")]
        model: PlotModel,
        #[arg(long)]
        length: Option<usize>,
        /// Calendar period whose MSE drives the `mse_optimal` window
        #[arg(long, allow_hyphen_values = true)]
        target: Option<i64>,
        #[arg(long)]
        max_length: Option<usize>,
        /// Add a true_value column from this simulation design
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[command(flatten)]
        sim: SimOverrides,
    },
    /// Monte Carlo comparison of window rules
    Mc {
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        #[arg(long, default_value_t = 500)]
        replications: usize,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "fixed(0),fixed(9),feasible_mse,oracle"
        )]
        rules: Vec<String>,
        /// Calendar period of the target coefficient (dynamic designs)
        #[arg(long, allow_hyphen_values = true, default_value_t = 5)]
        target: i64,
        #[arg(long)]
        max_length: Option<usize>,
        #[command(flatten)]
        sim: SimOverrides,
    },
}

struct Context {
    global: GlobalArgs,
    config_pairs: Vec<(String, String)>,
    manifest: Manifest,
}

impl Context {
    fn precision(&self) -> Precision {
        if self.global.full_precision {
            Precision::Full
        } else {
            Precision::Significant6
        }
    }

    fn se_type(&self) -> SeType {
        self.global.se.into()
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.global.output)?;
        Ok(&self.global.output)
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out_dir()?.join(name);
        self.manifest.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn schema(&self) -> CsvSchema {
        CsvSchema {
            unit: self.global.col_unit.clone(),
            time: self.global.col_time.clone(),
            treated: self.global.col_treated.clone(),
            outcome: self.global.col_outcome.clone(),
            t_star: self.t_star(),
        }
    }

    /// `--t-star`, else `t_star` from the config file, else -1.
    fn t_star(&self) -> i64 {
        self.global.t_star.unwrap_or_else(|| {
            self.config_pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "t_star")
                .and_then(|(_, v)| v.parse().ok())
                .unwrap_or(-1)
        })
    }

    fn load(&mut self, path: &Path) -> Result<PanelDataset> {
        let file = File::open(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", path.display())))?;
        let ds = load_long_csv(file, &self.schema())?;
        self.manifest.setting("input", path.display());
        self.manifest.setting("t_star", ds.t_star());
        Ok(ds)
    }

    /// Config file, then `--kind`, flag overrides, `--seed` and `--t-star`.
    fn sim_config(&mut self, kind: Option<KindArg>, sim: &SimOverrides) -> Result<SimConfig> {
        let mut pairs = self.config_pairs.clone();
        if let Some(k) = kind {
            pairs.push(("kind".into(), SimKind::from(k).label().into()));
        }
        pairs.extend(sim.pairs());
        if let Some(s) = self.global.seed {
            pairs.push(("seed".into(), s.to_string()));
        }
        if let Some(t) = self.global.t_star {
            pairs.push(("t_star".into(), t.to_string()));
        }
        let cfg = SimConfig::from_pairs(SimKind::Static, &pairs)?;
        self.manifest.config = cfg.to_pairs().into_iter().collect();
        self.manifest.seed = Some(cfg.seed);
        Ok(cfg)
    }

    fn has_sim_settings(&self, kind: Option<KindArg>, sim: &SimOverrides) -> bool {
        kind.is_some() || !self.config_pairs.is_empty() || !sim.pairs().is_empty()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_pairs = match &cli.global.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("cannot read {}: {e}", path.display()))
            })?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Select { .. } => "select",
        Command::Estimate { .. } => "estimate",
        Command::Plotdata { .. } => "plotdata",
        Command::Mc { .. } => "mc",
    };
    let mut ctx = Context {
        manifest: Manifest::new(name, std::env::args().collect()),
        global: cli.global,
        config_pairs,
    };
    ctx.manifest.setting("se", ctx.se_type().label());
    match cli.command {
        Command::Simulate { kind, sim } => cmd_simulate(&mut ctx, kind, &sim)?,
        Command::Select {
            input,
            estimates,
            model,
            target,
            max_length,
            skip_failures,
        } => match (input, estimates) {
            (_, Some(est)) => cmd_select_estimates(&mut ctx, &est)?,
            (Some(input), None) => {
                let policy = if skip_failures {
                    FailurePolicy::Skip
                } else {
                    FailurePolicy::Abort
                };
                cmd_select(&mut ctx, &input, model, target, max_length, policy)?
            }
            (None, None) => unreachable!("clap requires one of --input/--estimates"),
        },
        Command::Estimate {
            input,
            model,
            length,
        } => cmd_estimate(&mut ctx, &input, model, length)?,
        Command::Plotdata {
            input,
            model,
            length,
            target,
            max_length,
            kind,
            sim,
        } => cmd_plotdata(
            &mut ctx, &input, model, length, target, max_length, kind, &sim,
        )?,
        Command::Mc {
            kind,
            replications,
            rules,
            target,
            max_length,
            sim,
        } => cmd_mc(
            &mut ctx,
            kind,
            replications,
            &rules,
            target,
            max_length,
            &sim,
        )?,
    }
    let dir = ctx.out_dir()?.to_path_buf();
    ctx.manifest.write(&dir)
}

fn cmd_simulate(ctx: &mut Context, kind: Option<KindArg>, sim: &SimOverrides) -> Result<()> {
    let cfg = ctx.sim_config(kind, sim)?;
    let ds = simulate::gen(&cfg)?;
    let schema = ctx.schema();
    let mut sink = ctx.create("dataset.csv")?;
    write_long_csv(&ds, &mut sink, &schema)?;
    sink.flush()?;

    let precision = ctx.precision();
    let mut sink = ctx.create("group_means.csv")?;
    writeln!(sink, "period,treated_mean,control_mean")?;
    for (t, (treated, control)) in ds.group_means() {
        writeln!(
            sink,
            "{t},{},{}",
            precision.format(treated),
            precision.format(control)
        )?;
    }
    sink.flush()?;
    println!(
        "simulated {} panel: {} rows, seed {}",
        cfg.kind,
        ds.len(),
        cfg.seed
    );
    Ok(())
}

const SELECTED_HEADER: &str = "model,length,target,coefficient,se,n_obs,df,se_type";

fn record_row(rec: &EstimateRecord, precision: Precision) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        rec.model_kind.label(),
        rec.pre_length,
        rec.target,
        precision.format(rec.coefficient),
        precision.format(rec.se),
        rec.n_obs,
        rec.df,
        rec.se_type.label()
    )
}

fn selection_target(
    ds: &PanelDataset,
    model: SelectModel,
    target: Option<i64>,
) -> Result<(ModelKind, Target)> {
    match (model, target) {
        (SelectModel::Twfe, None) => Ok((ModelKind::Twfe, Target::Static)),
        (SelectModel::Twfe, Some(_)) => Err(Error::InvalidConfig(
            "--target applies to modified_event_study only".into(),
        )),
        (SelectModel::ModifiedEventStudy, Some(t)) => Ok((
            ModelKind::ModifiedEventStudy,
            Target::EventTime(ds.event_time(t)),
        )),
        (SelectModel::ModifiedEventStudy, None) => Err(Error::InvalidConfig(
            "modified_event_study selection needs --target <period>".into(),
        )),
    }
}

fn write_candidate_tables(ctx: &mut Context, candidates: &[selector::MseCandidate]) -> Result<()> {
    let precision = ctx.precision();
    let mut sink = ctx.create("candidates.csv")?;
    selector::write_candidates_csv(candidates, &mut sink, precision)?;
    sink.flush()?;
    let mut sink = ctx.create("candidates_diagnostics.csv")?;
    selector::write_diagnostics_csv(candidates, &mut sink, precision)?;
    sink.flush()?;
    Ok(())
}

fn max_length_for(ds: &PanelDataset, requested: Option<usize>) -> usize {
    requested.unwrap_or(ds.max_pre_length().max(0) as usize)
}

fn cmd_select(
    ctx: &mut Context,
    input: &Path,
    model: SelectModel,
    target: Option<i64>,
    max_length: Option<usize>,
    policy: FailurePolicy,
) -> Result<()> {
    let ds = ctx.load(input)?;
    let (kind, target) = selection_target(&ds, model, target)?;
    let max_length = max_length_for(&ds, max_length);
    let table = build_candidates(&ds, max_length, kind, target, ctx.se_type(), policy)?;
    for (ell, msg) in &table.skipped {
        eprintln!("warning: skipped pre-trends length {ell}: {msg}");
    }
    let result = select(&table.candidates, &table.estimates)?;
    write_candidate_tables(ctx, &result.candidates)?;

    let precision = ctx.precision();
    let mut sink = ctx.create("selected.csv")?;
    writeln!(sink, "{SELECTED_HEADER}")?;
    writeln!(sink, "{}", record_row(&result.selected, precision))?;
    sink.flush()?;

    ctx.manifest.setting("model", kind.label());
    ctx.manifest.setting("target", target);
    ctx.manifest.setting("max_length", max_length);
    if !table.skipped.is_empty() {
        let skipped: Vec<String> = table.skipped.iter().map(|(l, _)| l.to_string()).collect();
        ctx.manifest.setting("skipped_lengths", skipped.join(" "));
    }
    println!(
        "selected length {}: coefficient {} (se {})",
        result.optimal_length,
        precision.format(result.selected.coefficient),
        precision.format(result.selected.se)
    );
    Ok(())
}

fn cmd_select_estimates(ctx: &mut Context, path: &Path) -> Result<()> {
    let file = File::open(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", path.display())))?;
    let rows = read_estimates_csv(file)?;
    let candidates = candidates_from_estimates(&rows)?;
    let best = &candidates[selector::argmin_mse(&candidates)?];
    let mut ordered = candidates.clone();
    ordered.sort_by_key(|c| c.pre_length);
    write_candidate_tables(ctx, &ordered)?;

    let precision = ctx.precision();
    let mut sink = ctx.create("selected.csv")?;
    writeln!(sink, "{SELECTED_HEADER}")?;
    writeln!(
        sink,
        "external,{},,{},{},,,",
        best.pre_length,
        precision.format(best.coefficient),
        precision.format(best.se)
    )?;
    sink.flush()?;
    ctx.manifest.setting("estimates", path.display());
    println!(
        "selected length {}: coefficient {} (se {})",
        best.pre_length,
        precision.format(best.coefficient),
        precision.format(best.se)
    );
    Ok(())
}

fn cmd_estimate(
    ctx: &mut Context,
    input: &Path,
    model: EstimateModel,
    length: Option<usize>,
) -> Result<()> {
    let ds = ctx.load(input)?;
    let ell = max_length_for(&ds, length);
    let se = ctx.se_type();
    let precision = ctx.precision();
    ctx.manifest.setting("length", ell);
    match model {
        EstimateModel::Twfe => {
            let rec = estimate_twfe(&ds, ell, se)?;
            ctx.manifest.setting("model", rec.model_kind.label());
            let mut sink = ctx.create("estimate.csv")?;
            writeln!(sink, "{SELECTED_HEADER}")?;
            writeln!(sink, "{}", record_row(&rec, precision))?;
            sink.flush()?;
            println!(
                "twfe length {ell}: coefficient {} (se {})",
                precision.format(rec.coefficient),
                precision.format(rec.se)
            );
        }
        EstimateModel::EventStudy | EstimateModel::ModifiedEventStudy => {
            let curve = if model == EstimateModel::EventStudy {
                estimate_event_study(&ds.truncate_pre_window(ell)?, se)?
            } else {
                estimate_modified_event_study(&ds, ell, se)?
            };
            ctx.manifest.setting("model", curve.model_kind.label());
            write_curve(ctx, &curve, None)?;
            println!(
                "{} length {ell}: {} coefficients",
                curve.model_kind.label(),
                curve.points.len()
            );
        }
    }
    Ok(())
}

fn write_curve(
    ctx: &mut Context,
    curve: &EventStudyCurve,
    truth: Option<&dyn Fn(i64) -> Option<f64>>,
) -> Result<()> {
    let precision = ctx.precision();
    let mut sink = ctx.create("curve.csv")?;
    curve.write_csv(&mut sink, truth, precision)?;
    sink.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_plotdata(
    ctx: &mut Context,
    input: &Path,
    model: PlotModel,
    length: Option<usize>,
    target: Option<i64>,
    max_length: Option<usize>,
    kind: Option<KindArg>,
    sim: &SimOverrides,
) -> Result<()> {
    let ds = ctx.load(input)?;
    let se = ctx.se_type();
    let curve = match model {
        PlotModel::EventStudy => {
            let ell = max_length_for(&ds, length);
            estimate_event_study(&ds.truncate_pre_window(ell)?, se)?
        }
        PlotModel::ModifiedEventStudy => {
            estimate_modified_event_study(&ds, max_length_for(&ds, length), se)?
        }
        PlotModel::MseOptimal => {
            let (kind, target) = selection_target(&ds, SelectModel::ModifiedEventStudy, target)?;
            let max_length = max_length_for(&ds, max_length);
            let table = build_candidates(&ds, max_length, kind, target, se, FailurePolicy::Abort)?;
            let result = select(&table.candidates, &table.estimates)?;
            write_candidate_tables(ctx, &result.candidates)?;
            ctx.manifest.setting("target", target);
            ctx.manifest.setting("max_length", max_length);
            ctx.manifest
                .setting("selected_length", result.optimal_length);
            println!("selected length {}", result.optimal_length);
            estimate_modified_event_study(&ds, result.optimal_length, se)?
        }
    };
    ctx.manifest.setting("model", curve.model_kind.label());
    ctx.manifest.setting("length", curve.pre_length);

    if ctx.has_sim_settings(kind, sim) {
        let cfg = ctx.sim_config(kind, sim)?;
        if cfg.t_star != ds.t_star() {
            return Err(Error::InvalidConfig(format!(
                "simulation t_star {} differs from the data's t_star {}",
                cfg.t_star,
                ds.t_star()
            )));
        }
        let truth = move |t: i64| {
            if t <= cfg.t_star {
                Some(0.0)
            } else {
                true_effect(&cfg, cfg.kind, t).ok()
            }
        };
        write_curve(ctx, &curve, Some(&truth))?;
    } else {
        write_curve(ctx, &curve, None)?;
    }
    println!(
        "{} curve: {} points, length {}",
        curve.model_kind.label(),
        curve.points.len(),
        curve.pre_length
    );
    Ok(())
}

fn cmd_mc(
    ctx: &mut Context,
    kind: Option<KindArg>,
    replications: usize,
    rules: &[String],
    target: i64,
    max_length: Option<usize>,
    sim: &SimOverrides,
) -> Result<()> {
    let rules = rules
        .iter()
        .map(|r| r.parse::<Rule>())
        .collect::<Result<Vec<_>>>()?;
    let cfg = ctx.sim_config(kind, sim)?;
    let mut plan = McPlan::new(replications, rules);
    plan.target_period = target;
    plan.max_length = max_length;
    plan.se_type = ctx.se_type();
    let summary = monte_carlo(&cfg, &plan)?;

    let precision = ctx.precision();
    let mut sink = ctx.create("mc_summary.csv")?;
    summary.write_summary_csv(&mut sink, precision)?;
    sink.flush()?;
    let mut sink = ctx.create("mc_selection.csv")?;
    summary.write_selection_csv(&mut sink)?;
    sink.flush()?;
    let mut sink = ctx.create("mc_replications.csv")?;
    summary.write_replications_csv(&mut sink, precision)?;
    sink.flush()?;

    ctx.manifest.setting("replications", replications);
    let labels: Vec<String> = plan.rules.iter().map(|r| r.to_string()).collect();
    ctx.manifest.setting("rules", labels.join(","));
    if cfg.kind == SimKind::Dynamic {
        ctx.manifest.setting("target", target);
    }
    if let Some(m) = max_length {
        ctx.manifest.setting("max_length", m);
    }
    ctx.manifest
        .setting("seed_rule", "replication r uses seed ^ splitmix64(r)");
    if let Some(l) = summary.oracle_length {
        ctx.manifest.setting("oracle_length", l);
    }
    ctx.manifest.setting("failures", summary.failures);

    println!("truth {}", precision.format(summary.truth));
    for r in &summary.rules {
        println!(
            "{:<14} mean {:>10} sd {:>10} mse {:>10}",
            r.rule.to_string(),
            precision.format(r.mean),
            precision.format(r.sd),
            precision.format(r.mse)
        );
    }
    Ok(())
}

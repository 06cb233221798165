//! Acceptance gate. Each test prints one PASS/FAIL line; run with
//! `cargo test -p pretrend-core --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::{dummy_expansion_ols, random_panel, read_table, rel_close, rng};
use pretrend_core::selector::{argmin_mse, candidates_from_estimates};
use pretrend_core::simulate::SimKind;
use pretrend_core::*;
use rand::Rng;

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) {
    let within = elapsed <= limit;
    let status = if pass && within { "PASS" } else { "FAIL" };
    println!(
        "[{status}] criterion {id}: {name} | {detail} | runtime {:.3}s (limit {:.0}s)",
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(within, "criterion {id} exceeded runtime limit: {elapsed:?}");
}

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

/// Feeds a published table's (coefficient, se) columns through the selector
/// arithmetic and compares every derived cell.
fn table_check(id: u32, file: &str, tol: f64, want_length: usize, want_selected: (f64, f64)) {
    let start = Instant::now();
    let table = read_table(file);
    let triples: Vec<(usize, f64, f64)> = table.iter().map(|r| (r.0, r.4, r.5)).collect();
    let candidates = candidates_from_estimates(&triples).unwrap();
    let estimates: Vec<EstimateRecord> = triples.iter().map(|&(l, c, s)| record(l, c, s)).collect();
    let selection = select(&candidates, &estimates).unwrap();

    let mut worst = (0.0_f64, 0usize, "");
    for (row, c) in table.iter().zip(&candidates) {
        for (name, got, want) in [
            ("mse", c.mse, row.1),
            ("bias_squared", c.bias_sq, row.2),
            ("variance", c.variance, row.3),
        ] {
            let d = (got - want).abs();
            if d > worst.0 {
                worst = (d, c.pre_length, name);
            }
        }
    }
    let cells_ok = worst.0 <= tol;
    let selected = (selection.selected.coefficient, selection.selected.se);
    let pass = cells_ok && selection.optimal_length == want_length && selected == want_selected;
    report(
        id,
        &format!("selector arithmetic reproduces {file}"),
        pass,
        format!(
            "max cell deviation {:.3e} (tol {tol:e}) at length {} column {}; selected length {} (want {want_length}); selected {:?} (want {want_selected:?})",
            worst.0, worst.1, worst.2, selection.optimal_length, selected
        ),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_1_table_1() {
    table_check(1, "table1.csv", 0.01, 3, (95.449, 6.076));
}

#[test]
fn criterion_2_table_2() {
    table_check(2, "table2.csv", 0.05, 6, (50.943, 22.021));
}

#[test]
fn criterion_3_table_3() {
    table_check(3, "table3.csv", 5e-8, 3, (0.01086, 0.00484));
}

#[test]
fn criterion_4_oracle_equivalences() {
    let start = Instant::now();
    let mut r = rng(404);
    let mut worst = [0.0_f64; 4];
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..200 {
        let ds = random_panel(&mut r, 3, 30, 2, 15);

        // (a) within estimator vs dummy-variable expansion
        let units: BTreeMap<&str, usize> = ds
            .units()
            .iter()
            .enumerate()
            .map(|(i, (u, _))| (u.as_str(), i))
            .collect();
        let obs = ds.observations();
        let y: Vec<f64> = obs.iter().map(|o| o.outcome).collect();
        let d: Vec<f64> = obs
            .iter()
            .map(|o| f64::from(u8::from(o.treated_group && o.time > ds.t_star())))
            .collect();
        let u_idx: Vec<usize> = obs.iter().map(|o| units[o.unit_id.as_str()]).collect();
        let t_idx: Vec<usize> = obs.iter().map(|o| (o.time - ds.t_min()) as usize).collect();
        let design =
            DesignSpec::new(y.clone(), vec![("d".into(), d.clone())], &u_idx, &t_idx).unwrap();
        let within = fit(&design, SeType::Iid).unwrap().coefficients[0];
        let dummy = dummy_expansion_ols(&y, &[d], &u_idx, &t_idx)[0];
        worst[0] = worst[0].max(rel(within, dummy));

        // (b) conventional event study vs closed form
        for p in &estimate_event_study(&ds, SeType::Iid).unwrap().points {
            if p.event_time > 0 {
                let cf = closed_form_event_study(&ds, p.event_time).unwrap();
                worst[1] = worst[1].max(rel(p.coefficient, cf));
            }
        }

        // (c) modified event study vs closed form
        let ell = r.random_range(0..=ds.max_pre_length() as usize);
        for p in &estimate_modified_event_study(&ds, ell, SeType::Iid)
            .unwrap()
            .points
        {
            let cf = closed_form_modified(&ds, p.event_time, ell).unwrap();
            worst[2] = worst[2].max(rel(p.coefficient, cf));
        }

        // (d) two-period TWFE vs difference of mean changes
        let mut two = Vec::new();
        for o in obs {
            if o.time == ds.t_star() || o.time == ds.t_star() + 1 {
                two.push(o.clone());
            }
        }
        let two = PanelDataset::new(two, ds.t_star()).unwrap();
        let twfe = fit_two_period(&two);
        let att = att_2x2(&two).unwrap();
        worst[3] = worst[3].max((twfe - att).abs());
    }
    let pass = worst[0] <= 1e-8 && worst[1] <= 1e-8 && worst[2] <= 1e-8 && worst[3] <= 1e-12;
    report(
        4,
        "regression/closed-form equivalences on 200 random panels",
        pass,
        format!(
            "(a) {:.2e} (b) {:.2e} (c) {:.2e} rel, (d) {:.2e} abs",
            worst[0], worst[1], worst[2], worst[3]
        ),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

/// TWFE coefficient on a two-period panel; SEs may be unavailable when there
/// are only two units, so the raw fit is used.
fn fit_two_period(ds: &PanelDataset) -> f64 {
    match estimate_twfe(ds, 0, SeType::Iid) {
        Ok(rec) => rec.coefficient,
        Err(Error::SeUnavailable { .. }) => {
            let obs = ds.observations();
            let units: BTreeMap<&str, usize> = ds
                .units()
                .iter()
                .enumerate()
                .map(|(i, (u, _))| (u.as_str(), i))
                .collect();
            let design = DesignSpec::new(
                obs.iter().map(|o| o.outcome).collect(),
                vec![(
                    "d".into(),
                    obs.iter()
                        .map(|o| f64::from(u8::from(o.treated_group && o.time > ds.t_star())))
                        .collect(),
                )],
                &obs.iter()
                    .map(|o| units[o.unit_id.as_str()])
                    .collect::<Vec<_>>(),
                &obs.iter()
                    .map(|o| (o.time - ds.t_min()) as usize)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            fit(&design, SeType::Iid).unwrap().coefficients[0]
        }
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn criterion_5_noise_free_determinism() {
    let start = Instant::now();
    let static_cfg = SimConfig {
        noise_sd: 0.0,
        ..SimConfig::defaults(SimKind::Static)
    };
    let dynamic_cfg = SimConfig {
        noise_sd: 0.0,
        ..SimConfig::defaults(SimKind::Dynamic)
    };
    let st = gen_static(&static_cfg).unwrap();
    let dy = gen_dynamic(&dynamic_cfg).unwrap();
    let mut checks: Vec<(String, f64, f64)> = Vec::new();
    for (ell, want) in [(0, 99.0), (4, 97.0), (9, 94.5)] {
        let got = estimate_twfe(&st, ell, SeType::Iid).unwrap().coefficient;
        checks.push((format!("twfe ell={ell}"), got, want));
    }
    // calendar t = 5 is event time 6; t = 0 is event time 1
    checks.push((
        "eq6 t=5".into(),
        closed_form_event_study(&dy, 6).unwrap(),
        33.0,
    ));
    checks.push((
        "eq6 t=0".into(),
        closed_form_event_study(&dy, 1).unwrap(),
        3.0,
    ));
    checks.push((
        "eq8 ell=2 t=5".into(),
        closed_form_modified(&dy, 6, 2).unwrap(),
        36.0,
    ));
    let worst = checks
        .iter()
        .map(|(_, g, w)| (g - w).abs())
        .fold(0.0_f64, f64::max);
    let detail = checks
        .iter()
        .map(|(n, g, _)| format!("{n}={g}"))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        5,
        "noise-free analytic values",
        worst <= 1e-10,
        format!("{detail}; max deviation {worst:.1e}"),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_6_benchmark_scale() {
    let start = Instant::now();
    let cfg = SimConfig::defaults(SimKind::Static);
    let mc = monte_carlo(&cfg, &McPlan::new(500, vec![Rule::Fixed(0)])).unwrap();
    let r = mc.rule(Rule::Fixed(0)).unwrap();
    let mc_se = r.sd / (r.replications as f64).sqrt();
    let mean_ok = (r.mean - 99.0).abs() <= 3.0 * mc_se;
    let se_ok = (9.0..=12.5).contains(&r.mean_se);
    report(
        6,
        "static DGP, R=500, fixed(0): mean estimate and reported SE",
        mean_ok && se_ok && mc.failures == 0,
        format!(
            "mean {:.4} (99 ± {:.4}), mean SE {:.4} in [9, 12.5], failures {}",
            r.mean,
            3.0 * mc_se,
            r.mean_se,
            mc.failures
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_7_feasible_rule_mse() {
    let start = Instant::now();
    let cfg = SimConfig::defaults(SimKind::Static);
    let plan = McPlan::new(500, vec![Rule::Fixed(0), Rule::Fixed(9), Rule::FeasibleMse]);
    let mc = monte_carlo(&cfg, &plan).unwrap();
    let mse = |rule| mc.rule(rule).unwrap().mse;
    let (m0, m9, mf) = (
        mse(Rule::Fixed(0)),
        mse(Rule::Fixed(9)),
        mse(Rule::FeasibleMse),
    );
    let bound = 1.15 * m0.min(m9);
    report(
        7,
        "feasible-MSE rule vs fixed windows (static DGP, R=500)",
        mf <= bound,
        format!(
            "empirical MSE fixed(0) {m0:.3}, fixed(9) {m9:.3}, feasible_mse {mf:.3}; gate feasible <= {bound:.3}"
        ),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_8_oracle_selector() {
    let start = Instant::now();
    let mut r = rng(808);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let max_len = r.random_range(0..15usize);
        let gamma = r.random_range(-20.0..20.0);
        let ell_post = r.random_range(1..15usize);
        let variances: BTreeMap<usize, f64> = (0..=max_len)
            .map(|l| (l, r.random_range(0.0..50.0)))
            .collect();
        let spec = OracleSpec::new(gamma, ell_post, variances.clone()).unwrap();

        // independent enumeration
        let objective: Vec<(usize, f64)> = variances
            .iter()
            .map(|(&l, &v)| {
                let b = gamma * l as f64 / (l + ell_post) as f64;
                (l, b * b + v)
            })
            .collect();
        let min = objective.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let want = objective.iter().find(|x| x.1 == min).unwrap().0;
        if oracle_select(&spec).unwrap() != want {
            mismatches += 1;
        }
        for &(l, m) in &objective {
            if oracle_mse(&spec, l).unwrap() != m {
                mismatches += 1;
            }
        }
    }
    report(
        8,
        "oracle rule agrees with exhaustive enumeration on 1000 specs",
        mismatches == 0,
        format!("{mismatches} mismatches"),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_9_invariance_suite() {
    let start = Instant::now();
    let mut r = rng(909);
    let mut failures = Vec::new();
    for case in 0..100 {
        let ds = random_panel(&mut r, 4, 20, 4, 12);
        let shift = r.random_range(-1000.0..1000.0);
        let scale = r.random_range(0.1..10.0);
        let transform = |f: &dyn Fn(f64) -> f64| {
            let obs = ds
                .observations()
                .iter()
                .map(|o| Observation {
                    outcome: f(o.outcome),
                    ..o.clone()
                })
                .collect();
            PanelDataset::new(obs, ds.t_star()).unwrap()
        };
        let moved = transform(&|y| y + shift);
        let scaled = transform(&|y| y * scale);

        // fe_ols through the event-study design: coefficients and covariance
        let base = estimate_event_study(&ds, SeType::Iid).unwrap();
        let mv = estimate_event_study(&moved, SeType::Iid).unwrap();
        let sc = estimate_event_study(&scaled, SeType::Iid).unwrap();
        for ((b, m), s) in base.points.iter().zip(&mv.points).zip(&sc.points) {
            if (b.coefficient - m.coefficient).abs() > 1e-10 || (b.se - m.se).abs() > 1e-10 {
                failures.push(format!(
                    "case {case}: translation moved event {}",
                    b.event_time
                ));
            }
            if !rel_close(s.coefficient, scale * b.coefficient, 1e-9)
                || !rel_close(s.se * s.se, scale * scale * b.se * b.se, 1e-9)
            {
                failures.push(format!("case {case}: scale broke event {}", b.event_time));
            }
        }

        // selection under translation
        let max = ds.max_pre_length() as usize;
        let table = |d: &PanelDataset| {
            build_candidates(
                d,
                max,
                ModelKind::Twfe,
                Target::Static,
                SeType::Iid,
                FailurePolicy::Abort,
            )
            .unwrap()
        };
        let (a, b) = (table(&ds), table(&moved));
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            if (x.mse - y.mse).abs() > 1e-9 || (x.bias - y.bias).abs() > 1e-9 {
                failures.push(format!("case {case}: candidate {} moved", x.pre_length));
            }
        }
        if argmin_mse(&a.candidates).unwrap() != argmin_mse(&b.candidates).unwrap() {
            failures.push(format!("case {case}: selected length moved"));
        }
    }
    report(
        9,
        "translation/scale invariance on 100 random panels",
        failures.is_empty(),
        format!(
            "{} violations {:?}",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

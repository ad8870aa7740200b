use std::fmt::Write as _;

use kfp_core::densities::{battery, DensitySpec};
use kfp_core::entropy::ModelInfo;
use kfp_core::flow::{commutation_defect, evolve, Checkpoints, FlowDiagnostics, FlowTrace};
use kfp_core::geodesic::{
    distance_kappa_extrapolated, oracle_hminus1, oracle_w2_quantile, solve_geodesic, GeodesicSummary, KappaPoint,
};
use kfp_core::verify::{
    flow_path, verify_action_decay, verify_contraction, verify_entropy_chain, verify_entropy_slope_bound, verify_evi,
    verify_poincare, verify_talagrand_and_production_distance, FlowSettings, InequalityReport, Setup, Status,
};
use kfp_core::{build_grid, DensityField, EntropyModel, KfpError};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::Writer;

/// Overall verdict of a command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => crate::EXIT_PASS,
            Outcome::Fail => crate::EXIT_FAIL,
            Outcome::Inconclusive => crate::EXIT_INCONCLUSIVE,
        }
    }
}

#[derive(Serialize)]
struct GridInfo {
    half_width: f64,
    n: usize,
    dx: f64,
}

fn grid_info(setup: &Setup) -> Result<GridInfo, CliError> {
    let g = setup.grid()?;
    Ok(GridInfo { half_width: setup.half_width, n: setup.n, dx: g.dx() })
}

/// Largest differences of entropy and production between two traces at
/// their common checkpoint times.
fn trace_difference(a: &FlowTrace, b: &FlowTrace) -> (f64, f64) {
    let mut out = (0.0f64, 0.0f64);
    for da in &a.diagnostics {
        if let Some(db) = b.diagnostics.iter().find(|d| (d.t - da.t).abs() < 1e-9) {
            out.0 = out.0.max((da.entropy - db.entropy).abs());
            out.1 = out.1.max((da.production - db.production).abs());
        }
    }
    out
}

#[derive(Serialize)]
struct FlowBudget {
    /// Against the half-resolution grid; absent below the minimum grid size.
    grid_entropy: Option<f64>,
    grid_production: Option<f64>,
    /// Against a run with twice the time step.
    time_entropy: f64,
    time_production: f64,
    mass_drift: f64,
}

#[derive(Serialize)]
struct FlowSummary {
    potential: String,
    lambda: f64,
    model: ModelInfo,
    grid: GridInfo,
    settings: FlowSettings,
    initial: String,
    checkpoints: usize,
    final_state: FlowDiagnostics,
    entropy_monotone: bool,
    max_principle: bool,
    budget: FlowBudget,
}

pub fn cmd_flow(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let setup = cfg.setup()?;
    let grid = setup.grid()?;
    let fs = cfg.flow_settings();
    let rho0 = cfg.flow.initial.sample(&grid)?;
    let w0 = cfg.flow.flux.sample(&rho0)?;
    let cp = Checkpoints::Uniform(fs.checkpoints);
    let model = &setup.model;
    let trace = evolve(&rho0, Some(&w0), fs.t_final, fs.dt, fs.scheme, model, &cp)?;
    let doubled = evolve(&rho0, None, fs.t_final, 2.0 * fs.dt, fs.scheme, model, &cp)?;
    let (time_entropy, time_production) = trace_difference(&trace, &doubled);
    let (grid_entropy, grid_production) = match setup.coarse() {
        Some(c) => {
            let cr = cfg.flow.initial.sample(&c.grid()?)?;
            let ct = evolve(&cr, None, fs.t_final, fs.dt, fs.scheme, model, &cp)?;
            let (e, p) = trace_difference(&trace, &ct);
            (Some(e), Some(p))
        }
        None => (None, None),
    };
    let d = &trace.diagnostics;
    let m0 = d[0].mass;
    let summary = FlowSummary {
        potential: setup.potential.name(),
        lambda: setup.lambda(),
        model: model.info(),
        grid: grid_info(&setup)?,
        settings: fs.clone(),
        initial: cfg.flow.initial.name(),
        checkpoints: d.len(),
        final_state: d.last().expect("trace has the initial state").clone(),
        entropy_monotone: d.windows(2).all(|w| w[1].entropy <= w[0].entropy + 1e-12 * w[0].entropy.abs().max(1e-300)),
        max_principle: d.iter().all(|x| x.min_rho >= d[0].min_rho - 1e-12 && x.max_rho <= d[0].max_rho + 1e-12),
        budget: FlowBudget {
            grid_entropy,
            grid_production,
            time_entropy,
            time_production,
            mass_drift: d.iter().map(|x| (x.mass - m0).abs()).fold(0.0, f64::max),
        },
    };
    let out = Writer::new(cfg, "flow")?;
    let budget_line = serde_json::to_string(&summary.budget).expect("budget serializes");
    out.csv("trace.csv", &[("budget", budget_line)], &trace.to_csv())?;
    out.json("flow.json", "flow", &summary)?;
    println!(
        "flow: {} -> t={} entropy={:.6e} production={:.6e} mass drift {:.1e}",
        summary.initial,
        summary.final_state.t,
        summary.final_state.entropy,
        summary.final_state.production,
        summary.budget.mass_drift
    );
    println!("wrote {}", out.dir().display());
    Ok(Outcome::Pass)
}

fn scaled(spec: &DensitySpec, grid: &std::sync::Arc<kfp_core::GammaGrid>, mass: f64) -> Result<DensityField, CliError> {
    let d = spec.sample(grid)?;
    Ok(DensityField::new(grid, d.values().iter().map(|v| v * mass).collect())?)
}

#[derive(Serialize)]
struct Oracle {
    name: &'static str,
    distance: f64,
    relative_difference: f64,
}

#[derive(Serialize)]
struct DistanceSummary {
    potential: String,
    model: ModelInfo,
    grid: GridInfo,
    rho0: String,
    rho1: String,
    mass0: f64,
    mass1: f64,
    /// Extrapolated to `kappa = 0`.
    distance: f64,
    energy_uncertainty: f64,
    ladder: Vec<KappaPoint>,
    finest: GeodesicSummary,
    oracle: Option<Oracle>,
}

pub fn cmd_distance(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let setup = cfg.setup()?;
    let grid = setup.grid()?;
    let dc = &cfg.distance;
    let a = scaled(&dc.rho0, &grid, dc.mass0)?;
    let b = scaled(&dc.rho1, &grid, dc.mass1)?;
    let ds = cfg.distance_settings();
    let lad = distance_kappa_extrapolated(&a, &b, &setup.model, &ds.params, &ds.ladder)?;
    let unit = dc.mass0 == 1.0 && dc.mass1 == 1.0;
    let oracle = match setup.model.alpha() {
        Some(x) if x == 1.0 && unit => Some(("w2_quantile", oracle_w2_quantile(&a, &b)?)),
        Some(x) if x == 0.0 => Some(("hminus1", oracle_hminus1(&a, &b)?.distance)),
        _ => None,
    }
    .map(|(name, d)| Oracle { name, distance: d, relative_difference: relative(lad.distance, d) });
    let summary = DistanceSummary {
        potential: setup.potential.name(),
        model: setup.model.info(),
        grid: grid_info(&setup)?,
        rho0: dc.rho0.name(),
        rho1: dc.rho1.name(),
        mass0: dc.mass0,
        mass1: dc.mass1,
        distance: lad.distance,
        energy_uncertainty: lad.energy_uncertainty,
        ladder: lad.points.clone(),
        finest: lad.finest.summary(),
        oracle,
    };
    let out = Writer::new(cfg, "distance")?;
    let budget = format!(
        "{{\"energy_uncertainty\":{:e},\"gap\":{:e},\"kappa\":{:e}}}",
        lad.energy_uncertainty, lad.finest.gap, lad.finest.kappa
    );
    out.csv("path.csv", &[("budget", budget)], &lad.finest.path.to_csv())?;
    out.json("distance.json", "distance", &summary)?;
    print!("distance: W = {:.6} +- {:.1e} (energy)", summary.distance, summary.energy_uncertainty);
    if let Some(o) = &summary.oracle {
        print!(", {} oracle {:.6} ({:+.2e})", o.name, o.distance, o.relative_difference);
    }
    println!();
    println!("wrote {}", out.dir().display());
    let converged = lad.points.iter().all(|p| p.converged);
    if !converged {
        println!("geodesic solver did not certify every rung; see distance.json");
    }
    Ok(if converged { Outcome::Pass } else { Outcome::Inconclusive })
}

fn relative(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        value / reference - 1.0
    }
}

fn renamed(mut r: InequalityReport, name: &str) -> InequalityReport {
    r.name = name.into();
    r
}

/// Runs one named check; core errors become an inconclusive report.
fn run_check(cfg: &ExperimentConfig, setup: &Setup, check: &str) -> Vec<InequalityReport> {
    let fs = cfg.flow_settings();
    let ds = cfg.distance_settings();
    let v = &cfg.verify;
    let (rho0, rho1) = (&cfg.distance.rho0, &cfg.distance.rho1);
    let result: Result<Vec<InequalityReport>, KfpError> = match check {
        "entropy_chain" => verify_entropy_chain(setup, &cfg.flow.initial, &fs),
        "action_decay" => verify_action_decay(setup, &cfg.flow.initial, &cfg.flow.flux, &fs),
        "poincare" => verify_poincare(setup, &battery(v.seed, v.battery_size)).map(|r| vec![r]),
        "talagrand" => verify_talagrand_and_production_distance(setup, &cfg.flow.initial, &ds, &fs),
        "contraction" => {
            verify_contraction(setup, rho0, rho1, &v.contraction_times, &ds, &fs, v.contraction_tol).map(|r| vec![r])
        }
        "evi" => verify_evi(setup, rho0, rho1, &v.evi_times, v.delta_t, &ds, &fs),
        "slope" => slope_reports(cfg, setup, &fs),
        other => unreachable!("check {other} passed validation"),
    };
    result.unwrap_or_else(|e| {
        let mut r = InequalityReport::new(check, "", "-", 0.0, Vec::new());
        r.mark_inconclusive(format!("check aborted: {e}"));
        vec![r]
    })
}

fn slope_reports(cfg: &ExperimentConfig, setup: &Setup, fs: &FlowSettings) -> Result<Vec<InequalityReport>, KfpError> {
    let grid = setup.grid()?;
    let rho = cfg.flow.initial.sample(&grid)?;
    let path = flow_path(&rho, &setup.model, fs.t_final, cfg.verify.slope_slices, fs)?;
    let on_flow = renamed(verify_entropy_slope_bound(&path, &setup.model)?, "entropy_slope_flow");
    let a = cfg.distance.rho0.sample(&grid)?;
    let b = cfg.distance.rho1.sample(&grid)?;
    let geo = solve_geodesic(&a, &b, &setup.model, &cfg.geodesic_params())?;
    let mut on_geodesic = renamed(verify_entropy_slope_bound(&geo.path, &setup.model)?, "entropy_slope_geodesic");
    if !geo.converged {
        on_geodesic.mark_inconclusive("geodesic solver did not certify the path");
    }
    Ok(vec![on_flow, on_geodesic])
}

#[derive(Serialize)]
struct ReportLine<'a> {
    name: &'a str,
    status: Status,
    margin_min: f64,
    budget: kfp_core::verify::Budget,
    failures: usize,
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    potential: String,
    lambda: f64,
    model: ModelInfo,
    grid: GridInfo,
    outcome: &'static str,
    reports: Vec<ReportLine<'a>>,
}

const FOOTER: &str = "geodesic convexity of the entropy is implied by the EVI check and not tested separately";

pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let setup = cfg.setup()?;
    setup.grid()?;
    let reports: Vec<InequalityReport> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .verify
            .checks
            .iter()
            .map(|c| {
                let setup = &setup;
                s.spawn(move || run_check(cfg, setup, c))
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("check thread panicked")).collect()
    });
    let outcome = if reports.iter().any(|r| r.status == Status::Fail) {
        Outcome::Fail
    } else if reports.iter().any(|r| r.status == Status::Inconclusive) {
        Outcome::Inconclusive
    } else {
        Outcome::Pass
    };
    let out = Writer::new(cfg, "verify")?;
    let mut text = String::new();
    for r in &reports {
        out.json(&format!("{}.json", r.name), "verify", r)?;
        let _ = writeln!(text, "{}", r.to_table());
    }
    let _ = writeln!(text, "note: {FOOTER}");
    let summary = VerifySummary {
        potential: setup.potential.name(),
        lambda: setup.lambda(),
        model: setup.model.info(),
        grid: grid_info(&setup)?,
        outcome: match outcome {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Inconclusive => "inconclusive",
        },
        reports: reports
            .iter()
            .map(|r| ReportLine {
                name: &r.name,
                status: r.status,
                margin_min: r.margin_min,
                budget: r.budget,
                failures: r.failures().len(),
            })
            .collect(),
    };
    out.json("verify.json", "verify", &summary)?;
    out.text("verify.txt", &text)?;
    for r in &reports {
        let status = format!("{:?}", r.status).to_uppercase();
        println!("{status:<12} {:<28} margin_min {:>11.3e}  budget {:.3e}", r.name, r.margin_min, r.budget.total());
    }
    println!("{} -> {}", summary.outcome, out.dir().display());
    Ok(outcome)
}

#[derive(Serialize)]
struct StudyRow {
    n: usize,
    dx: f64,
    entropy: f64,
    production: f64,
    commutation_defect: f64,
    distance: Option<f64>,
}

#[derive(Serialize)]
struct StudySummary {
    potential: String,
    model: ModelInfo,
    t_final: f64,
    dt: f64,
    rows: Vec<StudyRow>,
    /// `log2` of successive difference ratios, per quantity.
    observed_orders: Vec<(String, Vec<f64>)>,
}

fn orders(values: &[f64]) -> Vec<f64> {
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    diffs.windows(2).map(|d| (d[0] / d[1]).log2()).collect()
}

pub fn cmd_grid_study(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let potential = cfg.potential()?;
    let model: EntropyModel = cfg.model()?;
    let fs = cfg.flow_settings();
    let mut sizes = cfg.grid_study.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut rows = Vec::new();
    let mut converged = true;
    for &n in &sizes {
        let grid = build_grid(potential.clone(), cfg.grid.half_width, n)?;
        let rho0 = cfg.flow.initial.sample(&grid)?;
        let trace = evolve(&rho0, None, fs.t_final, fs.dt, fs.scheme, &model, &Checkpoints::Uniform(1))?;
        let last = trace.diagnostics.last().expect("trace has the initial state");
        let distance = if cfg.grid_study.distance {
            let a = cfg.distance.rho0.sample(&grid)?;
            let b = cfg.distance.rho1.sample(&grid)?;
            let ds = cfg.distance_settings();
            let lad = distance_kappa_extrapolated(&a, &b, &model, &ds.params, &ds.ladder)?;
            converged &= lad.points.iter().all(|p| p.converged);
            Some(lad.distance)
        } else {
            None
        };
        rows.push(StudyRow {
            n,
            dx: grid.dx(),
            entropy: last.entropy,
            production: last.production,
            commutation_defect: commutation_defect(&rho0, fs.t_final, fs.dt, fs.scheme)?,
            distance,
        });
    }
    let mut observed_orders = vec![
        ("entropy".to_string(), orders(&rows.iter().map(|r| r.entropy).collect::<Vec<_>>())),
        ("production".to_string(), orders(&rows.iter().map(|r| r.production).collect::<Vec<_>>())),
        (
            "commutation_defect_ratio".to_string(),
            rows.windows(2).map(|w| w[0].commutation_defect / w[1].commutation_defect).collect(),
        ),
    ];
    if cfg.grid_study.distance {
        let d: Vec<f64> = rows.iter().filter_map(|r| r.distance).collect();
        observed_orders.push(("distance".to_string(), orders(&d)));
    }
    let summary = StudySummary {
        potential: potential.name(),
        model: model.info(),
        t_final: fs.t_final,
        dt: fs.dt,
        rows,
        observed_orders,
    };
    let mut csv = String::from("n,dx,entropy,production,commutation_defect,distance\n");
    let mut table = format!(
        "{:>6} {:>10} {:>18} {:>18} {:>14} {:>12}\n",
        "n", "dx", "entropy", "production", "commutation", "distance"
    );
    for r in &summary.rows {
        let d = r.distance.map(|d| format!("{d:.9e}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{:.9e},{:.12e},{:.12e},{:.12e},{d}",
            r.n, r.dx, r.entropy, r.production, r.commutation_defect
        );
        let _ = writeln!(
            table,
            "{:>6} {:>10.4e} {:>18.10e} {:>18.10e} {:>14.4e} {:>12}",
            r.n,
            r.dx,
            r.entropy,
            r.production,
            r.commutation_defect,
            r.distance.map(|d| format!("{d:.8}")).unwrap_or_else(|| "-".into())
        );
    }
    for (name, o) in &summary.observed_orders {
        let vals: Vec<String> = o.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(table, "{name}: {}", vals.join(" "));
    }
    let out = Writer::new(cfg, "grid-study")?;
    out.csv("grid_study.csv", &[("budget", format!("{{\"dt\":{:e},\"t_final\":{}}}", fs.dt, fs.t_final))], &csv)?;
    out.json("grid_study.json", "grid-study", &summary)?;
    out.text("grid_study.txt", &table)?;
    print!("{table}");
    println!("wrote {}", out.dir().display());
    Ok(if converged { Outcome::Pass } else { Outcome::Inconclusive })
}

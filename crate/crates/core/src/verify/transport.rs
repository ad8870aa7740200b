//! Checks that need the transport distance: Talagrand and production-distance
//! bounds, contraction and the evolution variational inequality.

use super::{budgeted, Budget, entropy_and_production, DistanceSettings, FlowSettings, InequalityReport, Series, Setup};
use crate::densities::DensitySpec;
use crate::entropy::{relative_entropy, EntropyModel};
use crate::error::{KfpError, Result};
use crate::flow::{distance_to_gamma_via_flow, evolve, Checkpoints};
use crate::geodesic::{distance_kappa_extrapolated, solve_geodesic_from, GeodesicParams, GeodesicResult, SpaceTimePath};
use crate::grid::DensityField;

/// Tail tolerance of the flow-length estimate.
const FLOW_LENGTH_TOL: f64 = 1e-7;

/// Fine ladder solve, extrapolated in the lift.
struct Ladder {
    energy: f64,
    energy_kappa: f64,
    uncertainty: f64,
    gap: f64,
    converged: bool,
    path: SpaceTimePath,
}

impl Ladder {
    fn shift(&self) -> f64 {
        self.energy - self.energy_kappa
    }
}

fn ladder(r0: &DensityField, r1: &DensityField, model: &EntropyModel, ds: &DistanceSettings) -> Result<Ladder> {
    let rungs = if ds.ladder.is_empty() { vec![ds.params.kappa] } else { ds.ladder.clone() };
    let l = distance_kappa_extrapolated(r0, r1, model, &ds.params, &rungs)?;
    Ok(Ladder {
        energy: l.distance * l.distance,
        energy_kappa: l.finest.energy(),
        uncertainty: l.energy_uncertainty,
        gap: l.finest.gap,
        converged: l.points.iter().all(|p| p.converged),
        path: l.finest.path,
    })
}

/// Single solve at the smallest lift.
fn at_kappa(
    r0: &DensityField,
    r1: &DensityField,
    model: &EntropyModel,
    ds: &DistanceSettings,
    warm: Option<&SpaceTimePath>,
) -> Result<GeodesicResult> {
    let kappa = ds.ladder.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = if kappa.is_finite() { kappa } else { ds.params.kappa };
    let params = GeodesicParams { kappa, ..ds.params.clone() };
    solve_geodesic_from(r0, r1, model, &params, warm)
}

/// Distance error implied by an energy error `de`.
fn distance_error(energy: f64, de: f64) -> f64 {
    let e = energy.max(0.0);
    e.sqrt() - (e - de.max(0.0)).max(0.0).sqrt()
}

/// Densities `S_t rho` at each requested time (in the given order).
fn flow_at(rho: &DensityField, model: &EntropyModel, times: &[f64], flow: &FlowSettings) -> Result<Vec<DensityField>> {
    for &t in times {
        let k = t / flow.dt;
        if !(t >= 0.0) || (k - k.round()).abs() > 1e-6 {
            return Err(KfpError::InvalidInput(format!("time {t} is not a multiple of dt = {}", flow.dt)));
        }
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let trace = evolve(rho, None, t_max, flow.dt, flow.scheme, model, &Checkpoints::Times(times.to_vec()))?;
    let steps: Vec<usize> = trace.diagnostics.iter().map(|d| (d.t / flow.dt).round() as usize).collect();
    times
        .iter()
        .map(|&t| {
            let k = (t / flow.dt).round() as usize;
            steps
                .iter()
                .position(|&s| s == k)
                .map(|p| trace.densities[p].clone())
                .ok_or_else(|| KfpError::Solver(format!("flow snapshot at t={t} missing")))
        })
        .collect()
}

/// `W_h^2(mu, gamma) <= 2 Psi / lambda` and `W_h(mu, gamma) <= sqrt(P) / lambda`,
/// with `W_h` the smaller of the geodesic value and the flow length.
pub fn verify_talagrand_and_production_distance(
    setup: &Setup,
    rho0: &DensitySpec,
    ds: &DistanceSettings,
    flow: &FlowSettings,
) -> Result<Vec<InequalityReport>> {
    let st_t = "W_h(mu, gamma)^2 <= (2 / lambda) Psi(rho)";
    let st_p = "W_h(mu, gamma) <= sqrt(P(rho)) / lambda";
    let lambda = setup.lambda();
    if !(lambda > 0.0) {
        let reason = "potential is not uniformly convex (lambda = 0)";
        return Ok(vec![
            InequalityReport::skipped("talagrand", st_t, reason),
            InequalityReport::skipped("production_distance", st_p, reason),
        ]);
    }
    flow.validate()?;
    let model = &setup.model;
    let t_max = 40.0 / lambda;
    let grid = setup.grid()?;
    let r = rho0.sample(&grid)?;
    let one = DensitySpec::Constant.sample(&grid)?;
    let (psi, p) = entropy_and_production(&r, model)?;
    let geo = ladder(&r, &one, model, ds)?;
    let fl = distance_to_gamma_via_flow(&r, model, flow.dt, FLOW_LENGTH_TOL, t_max)?;
    let w_geo = geo.energy.max(0.0).sqrt();
    let use_geodesic = w_geo <= fl.value;

    let mut coarse = None;
    if let Some(cs) = setup.coarse() {
        let cg = cs.grid()?;
        let cr = rho0.sample(&cg)?;
        let (cpsi, cp) = entropy_and_production(&cr, model)?;
        let cw = if use_geodesic {
            let c1 = DensitySpec::Constant.sample(&cg)?;
            (at_kappa(&cr, &c1, model, &ds.coarse(), None)?.energy() + geo.shift()).max(0.0).sqrt()
        } else {
            distance_to_gamma_via_flow(&cr, model, flow.dt, FLOW_LENGTH_TOL, t_max)?.value
        };
        coarse = Some((cw, cpsi, cp));
    }
    let (w, time_w, solver_w, solver_e) = if use_geodesic {
        (w_geo, None, distance_error(geo.energy, geo.uncertainty), geo.uncertainty)
    } else {
        let f2 = distance_to_gamma_via_flow(&r, model, 2.0 * flow.dt, FLOW_LENGTH_TOL, t_max)?;
        (fl.value, Some(f2.value), 0.0, 0.0)
    };
    let note = if use_geodesic {
        format!("distance from the geodesic solver ({w_geo:.6e}); flow length {:.6e}", fl.value)
    } else {
        format!("distance from the flow length ({:.6e}); geodesic {w_geo:.6e}", fl.value)
    };

    let tal: Series = vec![(0.0, w * w, 2.0 * psi / lambda)];
    let tal_c: Option<Series> = coarse.map(|(cw, cpsi, _)| vec![(0.0, cw * cw, 2.0 * cpsi / lambda)]);
    let tal_t: Option<Series> = time_w.map(|v| vec![(0.0, v * v, 2.0 * psi / lambda)]);
    let pd: Series = vec![(0.0, w, p.sqrt() / lambda)];
    let pd_c: Option<Series> = coarse.map(|(cw, _, cp)| vec![(0.0, cw, cp.sqrt() / lambda)]);
    let pd_t: Option<Series> = time_w.map(|v| vec![(0.0, v, p.sqrt() / lambda)]);
    let mut reports = vec![
        budgeted("talagrand", st_t, "-", 0.0, &tal, tal_c.as_ref(), tal_t.as_ref(), &[Budget { solver: solver_e, ..Default::default() }]).with_note(note.clone()),
        budgeted("production_distance", st_p, "-", 0.0, &pd, pd_c.as_ref(), pd_t.as_ref(), &[Budget { solver: solver_w, ..Default::default() }]).with_note(note),
    ];
    let trusted = if use_geodesic { geo.converged } else { !fl.tail_uncertain };
    if !trusted {
        for r in &mut reports {
            r.mark_inconclusive("distance estimate not certified");
        }
    }
    Ok(reports)
}

/// `W_h(S_t rho0, S_t rho1) <= e^{-lambda t} W_h(rho0, rho1)` at each time.
pub fn verify_contraction(
    setup: &Setup,
    rho0: &DensitySpec,
    rho1: &DensitySpec,
    times: &[f64],
    ds: &DistanceSettings,
    flow: &FlowSettings,
    rel_tol: f64,
) -> Result<InequalityReport> {
    let model = &setup.model;
    let lambda = setup.lambda();
    let mut all = vec![0.0];
    all.extend(times.iter().copied().filter(|&t| t > 0.0));
    let grid = setup.grid()?;
    let (a, b) = (rho0.sample(&grid)?, rho1.sample(&grid)?);
    let fa = flow_at(&a, model, &all, flow)?;
    let fb = flow_at(&b, model, &all, flow)?;
    let doubled = flow.doubled();
    let ta = flow_at(&a, model, &all, &doubled)?;
    let tb = flow_at(&b, model, &all, &doubled)?;
    let coarse = match setup.coarse() {
        Some(cs) => {
            let cg = cs.grid()?;
            let (ca, cb) = (rho0.sample(&cg)?, rho1.sample(&cg)?);
            Some((flow_at(&ca, model, &all, flow)?, flow_at(&cb, model, &all, flow)?))
        }
        None => None,
    };
    let cds = ds.coarse();

    let mut w = Vec::new();
    let mut grid_err = Vec::new();
    let mut time_err = Vec::new();
    let mut solver_err = Vec::new();
    let mut converged = true;
    let mut coarse_path: Option<SpaceTimePath> = None;
    for k in 0..all.len() {
        let l = ladder(&fa[k], &fb[k], model, ds)?;
        converged &= l.converged;
        let wk = l.energy_kappa.max(0.0).sqrt();
        let time = if k == 0 { 0.0 } else { (wk - at_kappa(&ta[k], &tb[k], model, ds, Some(&l.path))?.distance).abs() };
        let grid_term = match &coarse {
            Some((ca, cb)) => {
                let c = at_kappa(&ca[k], &cb[k], model, &cds, coarse_path.as_ref())?;
                let d = (wk - c.distance).abs();
                coarse_path = Some(c.path);
                d
            }
            None => 0.0,
        };
        w.push(l.energy.max(0.0).sqrt());
        grid_err.push(grid_term);
        time_err.push(time);
        solver_err.push(distance_error(l.energy, l.uncertainty));
    }
    let samples = (1..all.len())
        .map(|k| {
            let decay = (-lambda * all[k]).exp();
            let (lhs, rhs) = (w[k], decay * w[0]);
            super::Sample {
                x: all[k],
                lhs,
                rhs,
                budget: super::Budget {
                    grid: grid_err[k] + decay * grid_err[0],
                    time: time_err[k],
                    solver: solver_err[k] + decay * solver_err[0],
                    fixed: super::ROUNDING * (lhs.abs() + rhs.abs()),
                },
            }
        })
        .collect();
    let mut report = InequalityReport::new(
        "contraction",
        "W_h(S_t rho0, S_t rho1) <= e^{-lambda t} W_h(rho0, rho1)",
        "t",
        rel_tol,
        samples,
    )
    .with_note(format!("W_h at t = 0: {:.6e}", w[0]));
    if coarse.is_none() {
        report.notes.push("grid term unavailable: grid too coarse to halve".into());
    }
    if !converged {
        report.mark_inconclusive("geodesic solver did not certify every distance");
    }
    Ok(report)
}

/// Evolution variational inequality
/// `1/2 d+/dt W^2(S_t mu, sigma) + lambda/2 W^2(S_t mu, sigma) + Psi(S_t mu) <= Psi(sigma)`
/// by forward differences with step `delta_t`, plus the regularisation bounds
/// `Psi(S_t mu) <= W^2(mu, gamma) / (2t)` and `P(S_t mu) <= W^2(mu, gamma) / t^2`.
pub fn verify_evi(
    setup: &Setup,
    mu: &DensitySpec,
    sigma: &DensitySpec,
    t_samples: &[f64],
    delta_t: f64,
    ds: &DistanceSettings,
    flow: &FlowSettings,
) -> Result<Vec<InequalityReport>> {
    if !(delta_t > 0.0) {
        return Err(KfpError::InvalidInput(format!("delta_t must be positive, got {delta_t}")));
    }
    flow.validate()?;
    let model = &setup.model;
    let lambda = setup.lambda();
    let ts: Vec<f64> = t_samples.iter().copied().filter(|&t| t >= 0.0).collect();
    let fine_times: Vec<f64> = ts.iter().flat_map(|&t| [t, t + delta_t, t + 2.0 * delta_t]).collect();
    let pair_times: Vec<f64> = ts.iter().flat_map(|&t| [t, t + delta_t]).collect();

    let grid = setup.grid()?;
    let m = mu.sample(&grid)?;
    let s = sigma.sample(&grid)?;
    let psi_s = relative_entropy(&s, model)?;
    let fm = flow_at(&m, model, &fine_times, flow)?;
    let tm = flow_at(&m, model, &pair_times, &flow.doubled())?;
    let coarse = match setup.coarse() {
        Some(cs) => {
            let cg = cs.grid()?;
            let cm = mu.sample(&cg)?;
            let csig = sigma.sample(&cg)?;
            let cpsi = relative_entropy(&csig, model)?;
            let cone = DensitySpec::Constant.sample(&cg)?;
            let cflow = flow_at(&cm, model, &pair_times, flow)?;
            Some((cm, csig, cpsi, cone, cflow))
        }
        None => None,
    };
    let cds = ds.coarse();

    let (mut fine, mut time, mut crs) = (Series::new(), Series::new(), Series::new());
    let mut extra = Vec::new();
    let mut converged = true;
    let mut coarse_path: Option<SpaceTimePath> = None;
    for (k, &t) in ts.iter().enumerate() {
        let l = ladder(&fm[3 * k], &s, model, ds)?;
        converged &= l.converged;
        let e1 = at_kappa(&fm[3 * k + 1], &s, model, ds, Some(&l.path))?;
        let e2 = at_kappa(&fm[3 * k + 2], &s, model, ds, Some(&e1.path))?;
        converged &= e1.converged && e2.converged;
        let d1 = (e1.energy() - l.energy_kappa) / delta_t;
        let d2 = (e2.energy() - l.energy_kappa) / (2.0 * delta_t);
        let (psi_t, _) = entropy_and_production(&fm[3 * k], model)?;
        let lhs = 0.5 * d1 + 0.5 * lambda * l.energy + psi_t;
        fine.push((t, lhs, psi_s));

        let p0 = at_kappa(&tm[2 * k], &s, model, ds, Some(&l.path))?;
        let p1 = at_kappa(&tm[2 * k + 1], &s, model, ds, Some(&p0.path))?;
        let psi_2 = relative_entropy(&tm[2 * k], model)?;
        let lhs_2 = 0.5 * (p1.energy() - p0.energy()) / delta_t + 0.5 * lambda * (p0.energy() + l.shift()) + psi_2;
        time.push((t, lhs_2, psi_s));

        if let Some((_, csig, cpsi, _, cflow)) = &coarse {
            let c0 = at_kappa(&cflow[2 * k], csig, model, &cds, coarse_path.as_ref())?;
            let c1 = at_kappa(&cflow[2 * k + 1], csig, model, &cds, Some(&c0.path))?;
            let cpsi_t = relative_entropy(&cflow[2 * k], model)?;
            let lhs_c = 0.5 * (c1.energy() - c0.energy()) / delta_t + 0.5 * lambda * (c0.energy() + l.shift()) + cpsi_t;
            crs.push((t, lhs_c, *cpsi));
            coarse_path = Some(c0.path);
        }
        extra.push(Budget {
            time: 0.5 * (d2 - d1).abs(),
            solver: (l.gap + e1.gap) / delta_t + 0.5 * lambda * l.uncertainty,
            ..Default::default()
        });
    }
    let evi = budgeted(
        "evi",
        "1/2 d+/dt W_h^2(S_t mu, sigma) + lambda/2 W_h^2(S_t mu, sigma) + Psi(S_t mu) <= Psi(sigma)",
        "t",
        0.0,
        &fine,
        coarse.as_ref().map(|_| &crs),
        Some(&time),
        &extra,
    )
    .with_note(format!("forward difference step {delta_t}"));

    // Regularisation from the distance to equilibrium.
    let one = DensitySpec::Constant.sample(&grid)?;
    let g = ladder(&m, &one, model, ds)?;
    converged &= g.converged;
    let cw2 = match &coarse {
        Some((cm, _, _, cone, _)) => Some(at_kappa(cm, cone, model, &cds, None)?.energy() + g.shift()),
        None => None,
    };
    let positive: Vec<usize> = (0..ts.len()).filter(|&k| ts[k] > 0.0).collect();
    let reg = |name: &str, statement: &str, which: fn(f64, f64, f64, f64) -> (f64, f64), scale: fn(f64) -> f64| -> Result<InequalityReport> {
        let mut f = Series::new();
        let mut c = Series::new();
        let mut tt = Series::new();
        let mut sv = Vec::new();
        for &k in &positive {
            let t = ts[k];
            let (psi, p) = entropy_and_production(&fm[3 * k], model)?;
            let (l, r) = which(t, psi, p, g.energy);
            f.push((t, l, r));
            let (psi2, p2) = entropy_and_production(&tm[2 * k], model)?;
            let (l2, r2) = which(t, psi2, p2, g.energy);
            tt.push((t, l2, r2));
            if let (Some((_, _, _, _, cflow)), Some(cw2)) = (&coarse, cw2) {
                let (cpsi, cp) = entropy_and_production(&cflow[2 * k], model)?;
                let (lc, rc) = which(t, cpsi, cp, cw2);
                c.push((t, lc, rc));
            }
            sv.push(Budget { solver: g.uncertainty * scale(t), ..Default::default() });
        }
        Ok(budgeted(name, statement, "t", 0.0, &f, cw2.map(|_| &c), Some(&tt), &sv))
    };
    let reg_entropy = reg(
        "regularization_entropy",
        "Psi(S_t mu) <= W_h^2(mu, gamma) / (2t)",
        |t, psi, _p, w2| (psi, w2 / (2.0 * t)),
        |t| 1.0 / (2.0 * t),
    )?;
    let reg_production = reg(
        "regularization_production",
        "P(S_t mu) <= W_h^2(mu, gamma) / t^2",
        |t, _psi, p, w2| (p, w2 / (t * t)),
        |t| 1.0 / (t * t),
    )?;
    let mut reports = vec![evi, reg_entropy, reg_production];
    if !converged {
        for r in &mut reports {
            r.mark_inconclusive("geodesic solver did not certify every distance");
        }
    }
    Ok(reports)
}

//! Dynamic (Benamou-Brenier type) computation of the weighted transport
//! distance: minimise the space-time action over discrete solutions of the
//! continuity equation between two lifted densities.

mod oracles;
mod prox;
mod spacetime;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::entropy::EntropyModel;
use crate::error::{KfpError, Result};
use crate::grid::{DensityField, GammaGrid};

pub use oracles::{oracle_hminus1, oracle_w2_quantile, HMinusOne, QUANTILE_SAMPLES};
pub use prox::prox_action;
pub use spacetime::SpaceTime;

/// Fewest time steps accepted by the solver.
pub const MIN_TIME_SLICES: usize = 8;

/// Solver controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicParams {
    /// Number of time steps `N_s`.
    pub time_slices: usize,
    /// Lift added to both endpoint densities.
    pub kappa: f64,
    /// Relative energy change between checks below which the gap is evaluated.
    pub tol: f64,
    /// Required gap relative to the energy.
    pub gap_tol: f64,
    /// Absolute gap accepted regardless of the energy, for endpoints that
    /// differ only by round-off.
    pub gap_abs: f64,
    pub max_iter: usize,
    pub check_every: usize,
    /// Ratio of dual to primal step size.
    pub step_ratio: f64,
}

impl Default for GeodesicParams {
    fn default() -> Self {
        Self {
            time_slices: 16,
            kappa: 1e-3,
            tol: 1e-6,
            gap_tol: 1e-5,
            gap_abs: 1e-12,
            max_iter: 20_000,
            check_every: 25,
            step_ratio: 3.0,
        }
    }
}

/// Discrete path: densities on `N + 1` time nodes, fluxes on `N` half steps.
#[derive(Clone, Debug)]
pub struct SpaceTimePath {
    grid: Arc<GammaGrid>,
    time_slices: usize,
    rho: Vec<f64>,
    flux: Vec<f64>,
    slice_actions: Vec<f64>,
    kappa: f64,
    residual: f64,
}

impl SpaceTimePath {
    /// Path from explicit slices: `rho` holds `N + 1` node slices, `flux`
    /// holds `N` face slices, both slice-major.
    pub fn from_slices(grid: &Arc<GammaGrid>, rho: Vec<f64>, flux: Vec<f64>, model: &EntropyModel) -> Result<Self> {
        let (n, m) = (grid.len(), grid.n_faces());
        if rho.len() % n != 0 || rho.len() / n < 3 || flux.len() != (rho.len() / n - 1) * m {
            return Err(KfpError::InvalidInput(format!(
                "path slices do not fit the grid: {} density and {} flux values for n={n}",
                rho.len(),
                flux.len()
            )));
        }
        if let Some(k) = rho.iter().chain(&flux).position(|v| !v.is_finite()) {
            return Err(KfpError::NonFinite { context: "path slices".into(), index: k });
        }
        let ns = rho.len() / n - 1;
        let st = SpaceTime::new(grid, ns);
        let slice_actions = st.slice_actions(&rho, &flux, model);
        let residual = st.continuity_residual(&rho, &flux);
        Ok(Self { grid: grid.clone(), time_slices: ns, rho, flux, slice_actions, kappa: 0.0, residual })
    }

    pub fn grid(&self) -> &Arc<GammaGrid> {
        &self.grid
    }

    pub fn time_slices(&self) -> usize {
        self.time_slices
    }

    pub fn ds(&self) -> f64 {
        1.0 / self.time_slices as f64
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Density slice `j` (`0..=N`), including the lift.
    pub fn density(&self, j: usize) -> &[f64] {
        let n = self.grid.len();
        &self.rho[j * n..(j + 1) * n]
    }

    /// Flux on half step `j + 1/2` (`0..N`).
    pub fn flux(&self, j: usize) -> &[f64] {
        let m = self.grid.n_faces();
        &self.flux[j * m..(j + 1) * m]
    }

    pub fn density_field(&self, j: usize) -> DensityField {
        DensityField::new(&self.grid, self.density(j).to_vec()).expect("finite path")
    }

    pub fn slice_actions(&self) -> &[f64] {
        &self.slice_actions
    }

    pub fn energy(&self) -> f64 {
        self.slice_actions.iter().sum::<f64>() * self.ds()
    }

    /// `max_j sum_i |continuity defect|`.
    pub fn continuity_residual(&self) -> f64 {
        self.residual
    }

    /// Long-format CSV with columns `kind,s,x,value` (`kind` is `rho` or `flux`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,s,x,value\n");
        let ds = self.ds();
        for j in 0..=self.time_slices {
            for (x, v) in self.grid.nodes().iter().zip(self.density(j)) {
                let _ = writeln!(out, "rho,{:.6},{x:.6},{v:.12e}", j as f64 * ds);
            }
        }
        for j in 0..self.time_slices {
            for (x, v) in self.grid.faces().iter().zip(self.flux(j)) {
                let _ = writeln!(out, "flux,{:.6},{x:.6},{v:.12e}", (j as f64 + 0.5) * ds);
            }
        }
        out
    }
}

/// `(max_j Phi_j - min_j Phi_j) / mean_j Phi_j`, zero for a resting path.
pub fn constant_speed_check(path: &SpaceTimePath) -> f64 {
    let a = path.slice_actions();
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    if !(mean > 0.0) {
        return 0.0;
    }
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = a.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / mean
}

#[derive(Clone, Debug)]
pub struct GeodesicResult {
    /// `sqrt` of the path energy.
    pub distance: f64,
    pub path: SpaceTimePath,
    pub kappa: f64,
    pub iterations: usize,
    /// Energy minus a certified lower bound on the discrete minimum.
    pub gap: f64,
    pub lower_bound: f64,
    pub converged: bool,
    pub deviation: f64,
}

impl GeodesicResult {
    pub fn energy(&self) -> f64 {
        self.distance * self.distance
    }

    pub fn summary(&self) -> GeodesicSummary {
        GeodesicSummary {
            distance: self.distance,
            energy: self.energy(),
            kappa: self.kappa,
            iterations: self.iterations,
            gap: self.gap,
            lower_bound: self.lower_bound,
            converged: self.converged,
            deviation: self.deviation,
            continuity_residual: self.path.continuity_residual(),
        }
    }
}

/// Serializable digest of a solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicSummary {
    pub distance: f64,
    pub energy: f64,
    pub kappa: f64,
    pub iterations: usize,
    pub gap: f64,
    pub lower_bound: f64,
    pub converged: bool,
    pub deviation: f64,
    pub continuity_residual: f64,
}

fn check_endpoints(rho0: &DensityField, rho1: &DensityField) -> Result<()> {
    rho0.grid().ensure_same(rho1.grid())?;
    for (name, r) in [("rho0", rho0), ("rho1", rho1)] {
        if r.min() < 0.0 {
            return Err(KfpError::InvalidInput(format!("{name} has negative values")));
        }
    }
    let (m0, m1) = (rho0.mass(), rho1.mass());
    if (m0 - m1).abs() > 1e-9 * m0.abs().max(m1.abs()).max(1.0) {
        return Err(KfpError::InvalidInput(format!("endpoint masses differ: {m0} vs {m1}")));
    }
    Ok(())
}

/// Minimises the discrete action between `rho0 + kappa` and `rho1 + kappa`.
pub fn solve_geodesic(
    rho0: &DensityField,
    rho1: &DensityField,
    model: &EntropyModel,
    params: &GeodesicParams,
) -> Result<GeodesicResult> {
    solve_geodesic_from(rho0, rho1, model, params, None)
}

/// As [`solve_geodesic`], optionally warm-started from an earlier path on the
/// same grid and time discretisation.
pub fn solve_geodesic_from(
    rho0: &DensityField,
    rho1: &DensityField,
    model: &EntropyModel,
    params: &GeodesicParams,
    init: Option<&SpaceTimePath>,
) -> Result<GeodesicResult> {
    check_endpoints(rho0, rho1)?;
    if params.time_slices < MIN_TIME_SLICES {
        return Err(KfpError::InvalidInput(format!(
            "need at least {MIN_TIME_SLICES} time slices, got {}",
            params.time_slices
        )));
    }
    if !(params.kappa >= 0.0) {
        return Err(KfpError::InvalidInput(format!("kappa must be >= 0, got {}", params.kappa)));
    }
    let grid = rho0.grid().clone();
    let ns = params.time_slices;
    let n = grid.len();
    let kappa = params.kappa;
    let a: Vec<f64> = rho0.values().iter().map(|v| v + kappa).collect();
    let b: Vec<f64> = rho1.values().iter().map(|v| v + kappa).collect();
    let mut st = SpaceTime::new(&grid, ns);
    let nc = st.n_cells();

    let mut rho = vec![0.0; st.rho_len()];
    let mut w = vec![0.0; nc];
    match init {
        Some(p) if p.grid.same_as(&grid) && p.time_slices == ns => {
            // Spread the endpoint change linearly in time before projecting.
            for j in 0..=ns {
                let s = j as f64 / ns as f64;
                for i in 0..n {
                    let da = a[i] - p.rho[i];
                    let db = b[i] - p.rho[ns * n + i];
                    rho[j * n + i] = p.rho[j * n + i] + (1.0 - s) * da + s * db;
                }
            }
            w.copy_from_slice(&p.flux);
        }
        _ => {
            for j in 0..=ns {
                let s = j as f64 / ns as f64;
                for i in 0..n {
                    rho[j * n + i] = (1.0 - s) * a[i] + s * b[i];
                }
            }
        }
    }
    let identical = a.iter().zip(&b).all(|(x, y)| x == y);
    if identical {
        for j in 0..=ns {
            rho[j * n..(j + 1) * n].copy_from_slice(&a);
        }
        w.iter_mut().for_each(|v| *v = 0.0);
    } else {
        st.project(&mut rho, &mut w, &a, &b);
    }

    let norm = st.interpolation_norm_sq().max(1.0).sqrt();
    let sigma = 0.99 * params.step_ratio.sqrt() / norm;
    let tau = 0.99 / (params.step_ratio.sqrt() * norm);
    let t_prox = 1.0 / sigma;

    let mut cells = vec![0.0; nc];
    let mut ya = vec![0.0; nc];
    let mut yb = vec![0.0; nc];
    let mut rho_bar = rho.clone();
    let mut w_bar = w.clone();
    let mut adj = vec![0.0; st.rho_len()];
    let mut prev_energy = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut lower_bound = f64::NEG_INFINITY;
    let mut energy = st.energy(&rho, &w, model);
    if identical {
        converged = true;
        lower_bound = 0.0;
        energy = 0.0;
    }

    while !converged && iterations < params.max_iter {
        // Dual step on the action.
        st.interpolate(&rho_bar, &mut cells);
        for c in 0..nc {
            let ra = ya[c] + sigma * cells[c];
            let rb = yb[c] + sigma * w_bar[c];
            let (pa, pb) = prox_action(ra * t_prox, rb * t_prox, t_prox, model);
            ya[c] = ra - sigma * pa;
            yb[c] = rb - sigma * pb;
        }
        // Primal step and projection.
        st.interpolate_adjoint(&ya, &mut adj);
        let rho_old = rho.clone();
        let w_old = w.clone();
        for k in 0..rho.len() {
            rho[k] -= tau * adj[k];
        }
        for c in 0..nc {
            w[c] -= tau * yb[c];
        }
        st.project(&mut rho, &mut w, &a, &b);
        for k in 0..rho.len() {
            rho_bar[k] = 2.0 * rho[k] - rho_old[k];
        }
        for c in 0..nc {
            w_bar[c] = 2.0 * w[c] - w_old[c];
        }
        iterations += 1;
        if iterations % params.check_every == 0 || iterations == params.max_iter {
            energy = st.energy(&rho, &w, model);
            let rel = (energy - prev_energy).abs() / energy.max(f64::MIN_POSITIVE);
            prev_energy = energy;
            if energy.is_finite() && (rel < params.tol || iterations == params.max_iter) {
                lower_bound = lower_bound.max(certified_lower_bound(&mut st, &ya, &yb, &rho, model));
                if energy - lower_bound <= params.gap_tol * energy + params.gap_abs {
                    converged = true;
                }
            }
        }
    }
    energy = if converged && identical { energy } else { st.energy(&rho, &w, model) };
    if !energy.is_finite() {
        return Err(KfpError::Solver(format!(
            "geodesic iterate has infinite action after {iterations} iterations"
        )));
    }
    let slice_actions = st.slice_actions(&rho, &w, model);
    let residual = st.continuity_residual(&rho, &w);
    let path = SpaceTimePath { grid, time_slices: ns, rho, flux: w, slice_actions, kappa, residual };
    let deviation = constant_speed_check(&path);
    let lb = lower_bound.min(energy);
    Ok(GeodesicResult {
        distance: energy.max(0.0).sqrt(),
        path,
        kappa,
        iterations,
        gap: (energy - lb).max(0.0),
        lower_bound: lb,
        converged,
        deviation,
    })
}

/// Multiplier fitted to the dual iterate by least squares, turned into a
/// certified lower bound with the current densities as tangent point.
fn certified_lower_bound(st: &mut SpaceTime, ya: &[f64], yb: &[f64], rho: &[f64], model: &EntropyModel) -> f64 {
    let (n, ns) = (st.n_nodes(), st.ns);
    let mut adj = vec![0.0; st.rho_len()];
    st.interpolate_adjoint(ya, &mut adj);
    let mut rhs = vec![0.0; n * ns];
    st.residual_interior(&adj, yb, &mut rhs);
    let mut phi = vec![0.0; n * ns];
    st.solve_normal(&rhs, &mut phi);
    let tangent: Vec<f64> = rho.iter().map(|v| v.max(0.0)).collect();
    st.dual_lower_bound(&phi, &tangent, model)
}

/// One rung of the lift ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaPoint {
    pub kappa: f64,
    pub distance: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Distance extrapolated to zero lift.
#[derive(Clone, Debug)]
pub struct KappaLadder {
    pub distance: f64,
    /// Squared distance bound contributed by the solver gaps and the extrapolation.
    pub energy_uncertainty: f64,
    pub points: Vec<KappaPoint>,
    /// Solve at the smallest lift.
    pub finest: GeodesicResult,
}

/// Default lift ladder.
pub const KAPPA_LADDER: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Solves for each lift (largest first, warm-started) and extrapolates the
/// squared distance linearly in `kappa` from the two smallest lifts.
pub fn distance_kappa_extrapolated(
    rho0: &DensityField,
    rho1: &DensityField,
    model: &EntropyModel,
    params: &GeodesicParams,
    ladder: &[f64],
) -> Result<KappaLadder> {
    if ladder.is_empty() {
        return Err(KfpError::InvalidInput("empty kappa ladder".into()));
    }
    let mut kappas = ladder.to_vec();
    kappas.sort_by(|a, b| b.total_cmp(a));
    let mut points = Vec::new();
    let mut prev: Option<GeodesicResult> = None;
    for &k in &kappas {
        let p = GeodesicParams { kappa: k, ..params.clone() };
        let res = solve_geodesic_from(rho0, rho1, model, &p, prev.as_ref().map(|r| &r.path))?;
        points.push(KappaPoint {
            kappa: k,
            distance: res.distance,
            gap: res.gap,
            iterations: res.iterations,
            converged: res.converged,
        });
        prev = Some(res);
    }
    let finest = prev.expect("non-empty ladder");
    let (energy, extrapolation) = if points.len() >= 2 {
        let p1 = &points[points.len() - 2];
        let p2 = &points[points.len() - 1];
        let (e1, e2) = (p1.distance * p1.distance, p2.distance * p2.distance);
        let slope = (e2 - e1) / (p2.kappa - p1.kappa);
        let e0 = e2 - slope * p2.kappa;
        (e0, (e0 - e2).abs())
    } else {
        (finest.energy(), 0.0)
    };
    let gap = points.iter().rev().take(2).map(|p| p.gap).fold(0.0, f64::max);
    Ok(KappaLadder { distance: energy.max(0.0).sqrt(), energy_uncertainty: gap + extrapolation, points, finest })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::potentials::Potential;

    #[test]
    fn identical_endpoints_give_zero() {
        let grid = build_grid(Potential::harmonic(), 6.0, 64).unwrap();
        let r = DensityField::from_fn(&grid, |x| 1.0 + 0.2 * x.sin()).unwrap().normalized().unwrap();
        let m = EntropyModel::power(0.5).unwrap();
        let res = solve_geodesic(&r, &r, &m, &GeodesicParams::default()).unwrap();
        assert_eq!(res.distance, 0.0);
        assert_eq!(res.gap, 0.0);
        assert_eq!(constant_speed_check(&res.path), 0.0);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let grid = build_grid(Potential::harmonic(), 6.0, 64).unwrap();
        let a = DensityField::constant(&grid, 1.0);
        let b = DensityField::constant(&grid, 1.1);
        let m = EntropyModel::power(1.0).unwrap();
        assert!(solve_geodesic(&a, &b, &m, &GeodesicParams::default()).is_err());
    }
}

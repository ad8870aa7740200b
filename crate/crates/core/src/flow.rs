//! Time stepping of the Kolmogorov-Fokker-Planck semigroup on densities and of
//! the companion semigroup on face fluxes.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::{action_on_grid, production_on_grid};
use crate::entropy::{relative_entropy, EntropyModel};
use crate::error::{KfpError, Result};
use crate::grid::{DensityField, GammaGrid, VectorField};
use crate::linalg::solve_tridiagonal;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    #[default]
    ImplicitEuler,
    CrankNicolson,
}

/// Default step `min(1e-3, dx)`.
pub fn default_dt(grid: &GammaGrid) -> f64 {
    grid.dx().min(1e-3)
}

struct Tridiagonal {
    /// Spatial operator `L`, stored as `lower`, `center`, `upper` couplings.
    lower: Vec<f64>,
    center: Vec<f64>,
    upper: Vec<f64>,
    /// System matrix `I - theta dt L`.
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiagonal {
    fn new(lower: Vec<f64>, center: Vec<f64>, upper: Vec<f64>, theta_dt: f64) -> Self {
        let sub = lower.iter().map(|c| -theta_dt * c).collect();
        let sup = upper.iter().map(|c| -theta_dt * c).collect();
        let diag = center.iter().map(|c| 1.0 - theta_dt * c).collect();
        Self { lower, center, upper, sub, diag, sup }
    }

    /// `out = x + s L x`.
    fn explicit(&self, x: &[f64], s: f64, out: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let mut lx = self.center[i] * x[i];
            if i > 0 {
                lx += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                lx += self.upper[i] * x[i + 1];
            }
            out[i] = x[i] + s * lx;
        }
    }
}

/// Reusable stepper for a fixed grid, step and scheme.
pub struct KfpSolver {
    grid: Arc<GammaGrid>,
    dt: f64,
    scheme: TimeScheme,
    density: Tridiagonal,
    vector: Tridiagonal,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl KfpSolver {
    pub fn new(grid: &Arc<GammaGrid>, dt: f64, scheme: TimeScheme) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(KfpError::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let theta_dt = match scheme {
            TimeScheme::ImplicitEuler => dt,
            TimeScheme::CrankNicolson => 0.5 * dt,
        };
        let n = grid.len();
        let m = grid.n_faces();
        let (lower, upper) = grid.laplacian_coefficients();
        let center: Vec<f64> = (0..n).map(|i| -(lower[i] + upper[i])).collect();
        let density = Tridiagonal::new(lower, center, upper, theta_dt);

        // Face operator: weighted Laplacian with the node weights as dual
        // weights, zero flux beyond the boundary faces, minus V'' on the diagonal.
        let dx2 = grid.dx() * grid.dx();
        let gn = grid.node_weights();
        let gf = grid.face_weights();
        let mut vl = vec![0.0; m];
        let mut vu = vec![0.0; m];
        let mut vc = vec![0.0; m];
        for f in 0..m {
            let left = gn[f] / (gf[f] * dx2);
            let right = gn[f + 1] / (gf[f] * dx2);
            if f > 0 {
                vl[f] = left;
            }
            if f + 1 < m {
                vu[f] = right;
            }
            let curv = grid.potential().hess(grid.faces()[f]);
            if !curv.is_finite() {
                return Err(KfpError::Potential(format!("V'' undefined at x={}", grid.faces()[f])));
            }
            vc[f] = -(left + right) - curv;
        }
        let vector = Tridiagonal::new(vl, vc, vu, theta_dt);
        Ok(Self { grid: grid.clone(), dt, scheme, density, vector, rhs: vec![0.0; n], scratch: vec![0.0; n] })
    }

    pub fn grid(&self) -> &Arc<GammaGrid> {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> TimeScheme {
        self.scheme
    }

    fn advance(op: &Tridiagonal, scheme: TimeScheme, dt: f64, x: &mut [f64], rhs: &mut [f64], scratch: &mut [f64]) -> bool {
        let n = x.len();
        match scheme {
            TimeScheme::ImplicitEuler => rhs[..n].copy_from_slice(x),
            TimeScheme::CrankNicolson => op.explicit(x, 0.5 * dt, &mut rhs[..n]),
        }
        solve_tridiagonal(&op.sub, &op.diag, &op.sup, &rhs[..n], x, &mut scratch[..n])
    }

    /// One step of the density semigroup, in place.
    pub fn step_density(&mut self, rho: &mut [f64]) -> Result<()> {
        if !Self::advance(&self.density, self.scheme, self.dt, rho, &mut self.rhs, &mut self.scratch) {
            return Err(KfpError::Solver("singular density system".into()));
        }
        Ok(())
    }

    /// One step of the flux semigroup, in place.
    pub fn step_vector(&mut self, w: &mut [f64]) -> Result<()> {
        if !Self::advance(&self.vector, self.scheme, self.dt, w, &mut self.rhs, &mut self.scratch) {
            return Err(KfpError::Solver("singular flux system".into()));
        }
        Ok(())
    }

    pub fn step_density_field(&mut self, rho: &mut DensityField) -> Result<()> {
        self.grid.ensure_same(rho.grid())?;
        self.step_density(rho.values_mut())
    }

    pub fn step_vector_field(&mut self, w: &mut VectorField) -> Result<()> {
        self.grid.ensure_same(w.grid())?;
        self.step_vector(w.values_mut())
    }
}

/// Where snapshots are taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoints {
    /// `count` equally spaced times in `(0, T]`.
    Uniform(usize),
    /// `count` geometrically spaced times from `first` to `T`.
    Geometric { count: usize, first: f64 },
    Times(Vec<f64>),
}

impl Checkpoints {
    /// Step indices (deduplicated, ascending, always containing 0).
    pub fn steps(&self, t_final: f64, dt: f64, total: usize) -> Vec<usize> {
        let to_step = |t: f64| ((t / dt).round() as usize).min(total);
        let mut steps = vec![0];
        match self {
            Checkpoints::Uniform(count) => {
                let c = (*count).max(1);
                steps.extend((1..=c).map(|k| to_step(t_final * k as f64 / c as f64)));
            }
            Checkpoints::Geometric { count, first } => {
                let c = (*count).max(2);
                let first = first.max(dt).min(t_final);
                let ratio = (t_final / first).powf(1.0 / (c - 1) as f64);
                steps.extend((0..c).map(|k| to_step(first * ratio.powi(k as i32))));
            }
            Checkpoints::Times(ts) => steps.extend(ts.iter().map(|&t| to_step(t))),
        }
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// Scalar diagnostics at one checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub entropy: f64,
    pub production: f64,
    /// `Phi(rho_t, w_t)` when a flux is evolved alongside.
    pub action: Option<f64>,
    pub min_rho: f64,
    pub max_rho: f64,
}

/// Snapshots of an evolution.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub densities: Vec<DensityField>,
    pub fluxes: Option<Vec<VectorField>>,
    pub diagnostics: Vec<FlowDiagnostics>,
    pub dt: f64,
    pub scheme: TimeScheme,
}

impl FlowTrace {
    pub fn times(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.t).collect()
    }

    pub fn final_density(&self) -> &DensityField {
        self.densities.last().expect("trace holds the initial density")
    }

    /// Columns `t,mass,entropy,production,action,min_rho,max_rho`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mass,entropy,production,action,min_rho,max_rho\n");
        for d in &self.diagnostics {
            let action = d.action.map(|a| format!("{a:.12e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:.9},{:.15e},{:.12e},{:.12e},{},{:.12e},{:.12e}",
                d.t, d.mass, d.entropy, d.production, action, d.min_rho, d.max_rho
            );
        }
        out
    }
}

fn diagnostics(t: f64, rho: &DensityField, w: Option<&[f64]>, model: &EntropyModel) -> Result<FlowDiagnostics> {
    let grid = rho.grid();
    Ok(FlowDiagnostics {
        t,
        mass: rho.mass(),
        entropy: relative_entropy(rho, model)?,
        production: production_on_grid(grid, rho.values(), model),
        action: w.map(|w| action_on_grid(grid, rho.values(), w, model)),
        min_rho: rho.min(),
        max_rho: rho.max(),
    })
}

fn check_finite(values: &[f64], step: usize, what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(KfpError::Solver(format!("non-finite {what} after step {step}")));
    }
    Ok(())
}

/// Evolves `rho0` (and optionally a flux `w0`) up to `t_final`.
pub fn evolve(
    rho0: &DensityField,
    w0: Option<&VectorField>,
    t_final: f64,
    dt: f64,
    scheme: TimeScheme,
    model: &EntropyModel,
    checkpoints: &Checkpoints,
) -> Result<FlowTrace> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(KfpError::InvalidInput(format!("final time must be >= 0, got {t_final}")));
    }
    if let Some(w) = w0 {
        rho0.grid().ensure_same(w.grid())?;
    }
    let grid = rho0.grid().clone();
    let mut solver = KfpSolver::new(&grid, dt, scheme)?;
    let total = (t_final / dt).round() as usize;
    let steps = checkpoints.steps(t_final, dt, total);
    let mut rho = rho0.clone();
    let mut w = w0.map(|w| w.values().to_vec());

    let mut densities = Vec::with_capacity(steps.len());
    let mut fluxes = w0.map(|_| Vec::with_capacity(steps.len()));
    let mut diags = Vec::with_capacity(steps.len());
    let mut record = |k: usize, rho: &DensityField, w: &Option<Vec<f64>>| -> Result<()> {
        diags.push(diagnostics(k as f64 * dt, rho, w.as_deref(), model)?);
        densities.push(rho.clone());
        if let (Some(fl), Some(w)) = (fluxes.as_mut(), w.as_ref()) {
            fl.push(VectorField::new(&grid, w.clone())?);
        }
        Ok(())
    };
    let mut next = 0;
    for k in 0..=total {
        if k > 0 {
            solver.step_density(rho.values_mut())?;
            check_finite(rho.values(), k, "density")?;
            if let Some(w) = w.as_mut() {
                solver.step_vector(w)?;
                check_finite(w, k, "flux")?;
            }
        }
        if next < steps.len() && steps[next] == k {
            record(k, &rho, &w)?;
            next += 1;
        }
    }
    Ok(FlowTrace { densities, fluxes, diagnostics: diags, dt, scheme })
}

/// `|| D(S_t rho0) - R_t(D rho0) ||` in the face-weighted norm.
pub fn commutation_defect(rho0: &DensityField, t: f64, dt: f64, scheme: TimeScheme) -> Result<f64> {
    let grid = rho0.grid().clone();
    let mut solver = KfpSolver::new(&grid, dt, scheme)?;
    let steps = (t / dt).round() as usize;
    let mut rho = rho0.values().to_vec();
    let mut w = rho0.gradient().into_values();
    for _ in 0..steps {
        solver.step_density(&mut rho)?;
        solver.step_vector(&mut w)?;
    }
    let mut d = vec![0.0; grid.n_faces()];
    grid.grad_into(&rho, &mut d);
    Ok(grid
        .face_weights()
        .iter()
        .zip(d.iter().zip(&w))
        .map(|(g, (a, b))| g * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Length of the flow curve from `rho0` to equilibrium.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowLength {
    /// `int_0^T sqrt(P(rho_t)) dt` plus the tail bound.
    pub value: f64,
    pub integral: f64,
    pub tail_bound: f64,
    pub t_final: f64,
    /// Set when `lambda = 0` and the tail could not be bounded.
    pub tail_uncertain: bool,
}

/// Integrates `sqrt(P)` along the flow until `sqrt(P(rho_T)) / lambda < tol`
/// or `t_max`, by the trapezoid rule.
pub fn distance_to_gamma_via_flow(
    rho0: &DensityField,
    model: &EntropyModel,
    dt: f64,
    tol: f64,
    t_max: f64,
) -> Result<FlowLength> {
    let grid = rho0.grid().clone();
    let lambda = grid.lambda();
    let mut solver = KfpSolver::new(&grid, dt, TimeScheme::ImplicitEuler)?;
    let mut rho = rho0.values().to_vec();
    let mut prev = production_on_grid(&grid, &rho, model).sqrt();
    let mut integral = 0.0;
    let mut t = 0.0;
    let mut k = 0usize;
    loop {
        let tail = if lambda > 0.0 { prev / lambda } else { f64::INFINITY };
        if tail < tol || t >= t_max - 0.5 * dt {
            let tail_uncertain = !(lambda > 0.0);
            let tail_bound = if tail_uncertain { 0.0 } else { tail };
            return Ok(FlowLength { value: integral + tail_bound, integral, tail_bound, t_final: t, tail_uncertain });
        }
        solver.step_density(&mut rho)?;
        k += 1;
        check_finite(&rho, k, "density")?;
        let cur = production_on_grid(&grid, &rho, model).sqrt();
        integral += 0.5 * dt * (prev + cur);
        prev = cur;
        t = k as f64 * dt;
    }
}

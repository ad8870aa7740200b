//! Inequality harness. Each check evaluates both sides of an estimate along
//! computed flows or geodesics and attaches a tolerance budget that is
//! measured, not assumed: a grid term from one refinement pair, a time term
//! from one time-step pair and the solver's certified gap.

mod flow_checks;
mod transport;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::production_on_grid;
use crate::densities::random_flux;
use crate::entropy::{relative_entropy, EntropyModel};
use crate::error::{KfpError, Result};
use crate::flow::TimeScheme;
use crate::geodesic::{GeodesicParams, KAPPA_LADDER, MIN_TIME_SLICES};
use crate::grid::{build_grid, DensityField, GammaGrid, VectorField, MIN_NODES};
use crate::potentials::Potential;

pub use flow_checks::{
    flow_path, verify_action_decay, verify_entropy_chain, verify_entropy_slope_bound, verify_poincare,
};
pub use transport::{verify_contraction, verify_evi, verify_talagrand_and_production_distance};

/// Relative allowance for floating-point rounding on every sample.
pub const ROUNDING: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// A solver did not certify its result.
    Inconclusive,
    /// Preconditions not met (for instance `lambda = 0`).
    Skipped,
}

/// Absolute tolerance split by origin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub grid: f64,
    pub time: f64,
    pub solver: f64,
    /// Rounding allowance, or the pinned tolerance of an equality check.
    pub fixed: f64,
}

impl Budget {
    pub fn total(&self) -> f64 {
        self.grid + self.time + self.solver + self.fixed
    }

    fn max(self, o: Budget) -> Budget {
        Budget {
            grid: self.grid.max(o.grid),
            time: self.time.max(o.time),
            solver: self.solver.max(o.solver),
            fixed: self.fixed.max(o.fixed),
        }
    }
}

/// One evaluation of `lhs <= rhs`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sample {
    /// Time, density index or slice, depending on the report.
    pub x: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub budget: Budget,
}

impl Sample {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// `rhs + rel |rhs| + budget - lhs`; the sample passes iff this is `>= 0`.
    pub fn slack(&self, rel_tol: f64) -> f64 {
        let s = self.rhs + rel_tol * self.rhs.abs() + self.budget.total() - self.lhs;
        if s.is_nan() {
            f64::NEG_INFINITY
        } else {
            s
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub statement: String,
    pub x_label: String,
    pub rel_tol: f64,
    pub samples: Vec<Sample>,
    /// `min (rhs - lhs)` without any tolerance.
    pub margin_min: f64,
    pub pass: bool,
    pub status: Status,
    /// Component-wise maximum over the samples.
    pub budget: Budget,
    pub notes: Vec<String>,
}

impl InequalityReport {
    pub fn new(name: &str, statement: &str, x_label: &str, rel_tol: f64, samples: Vec<Sample>) -> Self {
        let margin_min = samples.iter().map(Sample::margin).fold(f64::INFINITY, f64::min);
        let pass = samples.iter().all(|s| s.slack(rel_tol) >= 0.0);
        let budget = samples.iter().fold(Budget::default(), |b, s| b.max(s.budget));
        Self {
            name: name.into(),
            statement: statement.into(),
            x_label: x_label.into(),
            rel_tol,
            margin_min: if samples.is_empty() { 0.0 } else { margin_min },
            pass,
            status: if pass { Status::Pass } else { Status::Fail },
            samples,
            budget,
            notes: Vec::new(),
        }
    }

    /// `|value / reference - 1| <= tol` at each point, as a report with
    /// `lhs = |value / reference - 1|` and `rhs = 0`.
    pub fn equality(name: &str, statement: &str, x_label: &str, tol: f64, points: &[(f64, f64, f64)]) -> Self {
        let samples = points
            .iter()
            .map(|&(x, value, reference)| Sample {
                x,
                lhs: relative_deviation(value, reference),
                rhs: 0.0,
                budget: Budget { fixed: tol, ..Budget::default() },
            })
            .collect();
        Self::new(name, statement, x_label, 0.0, samples)
    }

    pub fn skipped(name: &str, statement: &str, reason: &str) -> Self {
        let mut r = Self::new(name, statement, "-", 0.0, Vec::new());
        r.status = Status::Skipped;
        r.notes.push(reason.into());
        r
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// Marks the report inconclusive unless it was skipped.
    pub fn mark_inconclusive(&mut self, reason: impl Into<String>) {
        if self.status != Status::Skipped {
            self.status = Status::Inconclusive;
        }
        self.notes.push(reason.into());
    }

    pub fn lhs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.lhs).collect()
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.rhs).collect()
    }

    pub fn failures(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.slack(self.rel_tol) < 0.0).collect()
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let status = format!("{:?}", self.status).to_uppercase();
        let _ = writeln!(out, "{} [{}]  {}", self.name, status, self.statement);
        let _ = writeln!(
            out,
            "{:>10} {:>16} {:>16} {:>12} {:>11} {:>11} {:>11} {:>11}",
            self.x_label, "lhs", "rhs", "margin", "grid", "time", "solver", "fixed"
        );
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:>10.4} {:>16.9e} {:>16.9e} {:>12.3e} {:>11.3e} {:>11.3e} {:>11.3e} {:>11.3e}",
                s.x,
                s.lhs,
                s.rhs,
                s.margin(),
                s.budget.grid,
                s.budget.time,
                s.budget.solver,
                s.budget.fixed
            );
        }
        if self.rel_tol > 0.0 {
            let _ = writeln!(out, "  relative tolerance {}", self.rel_tol);
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        out
    }
}

fn relative_deviation(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else if reference == 0.0 {
        f64::INFINITY
    } else {
        (value / reference - 1.0).abs()
    }
}

/// Potential, model and spatial grid of a check.
#[derive(Clone, Debug)]
pub struct Setup {
    pub potential: Potential,
    pub model: EntropyModel,
    pub half_width: f64,
    pub n: usize,
}

impl Setup {
    pub fn new(potential: Potential, model: EntropyModel, half_width: f64, n: usize) -> Self {
        Self { potential, model, half_width, n }
    }

    pub fn grid(&self) -> Result<Arc<GammaGrid>> {
        build_grid(self.potential.clone(), self.half_width, self.n)
    }

    /// The same setup on `n / 2` nodes, if that grid is admissible.
    pub fn coarse(&self) -> Option<Setup> {
        (self.n / 2 >= MIN_NODES).then(|| Setup { n: self.n / 2, ..self.clone() })
    }

    pub fn lambda(&self) -> f64 {
        self.potential.lambda()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowSettings {
    pub t_final: f64,
    pub dt: f64,
    pub scheme: TimeScheme,
    pub checkpoints: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self { t_final: 2.0, dt: 1e-3, scheme: TimeScheme::ImplicitEuler, checkpoints: 20 }
    }
}

impl FlowSettings {
    fn doubled(&self) -> Self {
        Self { dt: 2.0 * self.dt, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(KfpError::InvalidInput(format!(
                "flow needs dt > 0 and a finite T >= 0, got dt={} T={}",
                self.dt, self.t_final
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceSettings {
    pub params: GeodesicParams,
    pub ladder: Vec<f64>,
}

impl Default for DistanceSettings {
    fn default() -> Self {
        Self { params: GeodesicParams::default(), ladder: KAPPA_LADDER.to_vec() }
    }
}

impl DistanceSettings {
    /// Halved time resolution, paired with the spatial refinement.
    fn coarse(&self) -> Self {
        let mut c = self.clone();
        c.params.time_slices = (self.params.time_slices / 2).max(MIN_TIME_SLICES);
        c
    }
}

/// Initial flux of the action-decay check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FluxSpec {
    Zero,
    /// `w0 = D rho0`.
    DensityGradient,
    Random { seed: u64, modes: usize, amplitude: f64 },
}

impl FluxSpec {
    pub fn sample(&self, rho0: &DensityField) -> Result<VectorField> {
        let grid = rho0.grid();
        match self {
            FluxSpec::Zero => Ok(VectorField::zeros(grid)),
            FluxSpec::DensityGradient => Ok(rho0.gradient()),
            FluxSpec::Random { seed, modes, amplitude } => random_flux(grid, *seed, *modes, *amplitude),
        }
    }
}

/// `(Psi, P)` of a density.
pub(crate) fn entropy_and_production(rho: &DensityField, model: &EntropyModel) -> Result<(f64, f64)> {
    Ok((relative_entropy(rho, model)?, production_on_grid(rho.grid(), rho.values(), model)))
}

/// `(x, lhs, rhs)` triples of one discretisation.
pub(crate) type Series = Vec<(f64, f64, f64)>;

/// Combines the fine evaluation with its refinement and time-step partners
/// (matched by index) and per-sample extra terms.
pub(crate) fn budgeted(
    name: &str,
    statement: &str,
    x_label: &str,
    rel_tol: f64,
    fine: &Series,
    coarse: Option<&Series>,
    time: Option<&Series>,
    extra: &[Budget],
) -> InequalityReport {
    let diff = |other: Option<&Series>, k: usize| -> f64 {
        match other.and_then(|o| o.get(k)) {
            Some(&(_, l, r)) => (fine[k].1 - l).abs() + (fine[k].2 - r).abs(),
            None => 0.0,
        }
    };
    let samples = (0..fine.len())
        .map(|k| {
            let (x, lhs, rhs) = fine[k];
            let e = extra.get(k).copied().unwrap_or_default();
            Sample {
                x,
                lhs,
                rhs,
                budget: Budget {
                    grid: diff(coarse, k) + e.grid,
                    time: diff(time, k) + e.time,
                    solver: e.solver,
                    fixed: ROUNDING * (lhs.abs() + rhs.abs()) + e.fixed,
                },
            }
        })
        .collect();
    let mut report = InequalityReport::new(name, statement, x_label, rel_tol, samples);
    if coarse.is_none() {
        report.notes.push("grid term unavailable: grid too coarse to halve".into());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pass_logic() {
        let s = |lhs: f64, rhs: f64, tol: f64| Sample { x: 0.0, lhs, rhs, budget: Budget { grid: tol, ..Default::default() } };
        let r = InequalityReport::new("a", "", "t", 0.0, vec![s(1.0, 1.0, 0.0), s(1.05, 1.0, 0.06)]);
        assert!(r.pass);
        assert!((r.margin_min + 0.05).abs() < 1e-12);
        let r = InequalityReport::new("b", "", "t", 0.01, vec![s(1.02, 1.0, 0.0)]);
        assert!(!r.pass);
        assert_eq!(r.failures().len(), 1);
        let e = InequalityReport::equality("c", "", "t", 0.02, &[(0.0, 1.01, 1.0), (0.0, 0.0, 0.0)]);
        assert!(e.pass);
        let e = InequalityReport::equality("d", "", "t", 0.02, &[(0.0, 1.03, 1.0)]);
        assert!(!e.pass);
        let nan = InequalityReport::new("e", "", "t", 0.0, vec![s(f64::NAN, 1.0, 0.0)]);
        assert!(!nan.pass);
    }
}

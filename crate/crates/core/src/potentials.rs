//! Convex confining potentials `V` defining the reference measure `e^{-V}`.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::grid::GammaGrid;

/// Built-in potential shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    /// `x^2 / 2`.
    Harmonic,
    /// `x^2 / 2 + c x^4` with `c >= 0`.
    QuarticBlend { c: f64 },
    /// `sqrt(x^2 + eps^2)`.
    SoftAbs { eps: f64 },
    /// `|x|`. Kinked; meant as input to the Yosida regularisation.
    Abs,
    /// Moreau-Yosida regularisation along the curvature bound `lambda`.
    Yosida { inner: Box<Potential>, n: f64 },
}

/// A potential with its convexity modulus and an additive constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    /// Lower bound on `V''`.
    pub lambda: f64,
    /// Additive constant (e.g. `log Z` after normalisation).
    #[serde(default)]
    pub shift: f64,
}

impl Potential {
    pub fn harmonic() -> Self {
        Self { kind: PotentialKind::Harmonic, lambda: 1.0, shift: 0.0 }
    }

    pub fn quartic_blend(c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(KfpError::Potential(format!("quartic coefficient must be >= 0, got {c}")));
        }
        Ok(Self { kind: PotentialKind::QuarticBlend { c }, lambda: 1.0, shift: 0.0 })
    }

    pub fn soft_abs(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(KfpError::Potential(format!("soft_abs eps must be > 0, got {eps}")));
        }
        Ok(Self { kind: PotentialKind::SoftAbs { eps }, lambda: 0.0, shift: 0.0 })
    }

    pub fn abs() -> Self {
        Self { kind: PotentialKind::Abs, lambda: 0.0, shift: 0.0 }
    }

    /// `V_n(x) = lambda x^2/2 + inf_y { n/2 (x-y)^2 + V(y) - lambda y^2/2 }`.
    ///
    /// `V - lambda x^2/2` has to be convex; violations surface as errors at
    /// evaluation time.
    pub fn yosida(inner: Potential, n: f64, lambda: f64) -> Result<Self> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(KfpError::Potential(format!("yosida parameter must be > 0, got {n}")));
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(KfpError::Potential(format!("yosida lambda must be >= 0, got {lambda}")));
        }
        let pot = Self { kind: PotentialKind::Yosida { inner: Box::new(inner), n }, lambda, shift: 0.0 };
        for x in [-1.0, 0.0, 1.0] {
            pot.try_eval(x)?;
        }
        Ok(pot)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    /// Overrides the declared convexity modulus.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Whether `V''` is defined everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self.kind, PotentialKind::Abs)
    }

    pub fn name(&self) -> String {
        match &self.kind {
            PotentialKind::Harmonic => "harmonic".into(),
            PotentialKind::QuarticBlend { c } => format!("quartic_blend(c={c})"),
            PotentialKind::SoftAbs { eps } => format!("soft_abs(eps={eps})"),
            PotentialKind::Abs => "abs".into(),
            PotentialKind::Yosida { inner, n } => format!("yosida({}, n={n})", inner.name()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.try_eval(x).map(|v| v.0).unwrap_or(f64::NAN)
    }

    pub fn grad(&self, x: f64) -> f64 {
        self.try_eval(x).map(|v| v.1).unwrap_or(f64::NAN)
    }

    pub fn hess(&self, x: f64) -> f64 {
        self.try_eval(x).map(|v| v.2).unwrap_or(f64::NAN)
    }

    /// Value, derivative and second derivative at `x`.
    pub fn try_eval(&self, x: f64) -> Result<(f64, f64, f64)> {
        let (v, d, dd) = match &self.kind {
            PotentialKind::Harmonic => (0.5 * x * x, x, 1.0),
            PotentialKind::QuarticBlend { c } => {
                (0.5 * x * x + c * x.powi(4), x + 4.0 * c * x.powi(3), 1.0 + 12.0 * c * x * x)
            }
            PotentialKind::SoftAbs { eps } => {
                let r = (x * x + eps * eps).sqrt();
                (r, x / r, eps * eps / (r * r * r))
            }
            PotentialKind::Abs => (x.abs(), sign(x), 0.0),
            PotentialKind::Yosida { inner, n } => yosida_eval(inner, *n, self.lambda, x)?,
        };
        Ok((v + self.shift, d, dd))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const YOSIDA_CANDIDATES: usize = 65;
const YOSIDA_TOL: f64 = 1e-12;

fn yosida_eval(inner: &Potential, n: f64, lambda: f64, x: f64) -> Result<(f64, f64, f64)> {
    let y = yosida_argmin(inner, n, lambda, x)?;
    let (vy, _, hy) = inner.try_eval(y)?;
    let value = 0.5 * lambda * x * x + 0.5 * n * (x - y) * (x - y) + vy - 0.5 * lambda * y * y;
    let grad = lambda * x + n * (x - y);
    let hess = if inner.is_smooth() {
        let k = hy - lambda;
        lambda + n * k / (n + k)
    } else {
        let h = 1e-5;
        let gp = lambda * (x + h) + n * (x + h - yosida_argmin(inner, n, lambda, x + h)?);
        let gm = lambda * (x - h) + n * (x - h - yosida_argmin(inner, n, lambda, x - h)?);
        (gp - gm) / (2.0 * h)
    };
    Ok((value, grad, hess))
}

/// Minimiser of the inner objective: a candidate lattice (also used to detect
/// non-convexity) followed by bisection on the monotone derivative.
fn yosida_argmin(inner: &Potential, n: f64, lambda: f64, x: f64) -> Result<f64> {
    let q = |y: f64| -> Result<f64> {
        let v = inner.try_eval(y)?.0;
        Ok(0.5 * n * (x - y) * (x - y) + v - 0.5 * lambda * y * y)
    };
    let dq = |y: f64| -> Result<f64> { Ok(n * (y - x) + inner.try_eval(y)?.1 - lambda * y) };
    let slope = dq(x)?;
    if !slope.is_finite() {
        return Err(KfpError::Potential(format!("non-finite inner slope at x={x}")));
    }
    let width = slope.abs() / n * 1.05 + 0.1;
    let step = 2.0 * width / (YOSIDA_CANDIDATES - 1) as f64;
    let mut vals = Vec::with_capacity(YOSIDA_CANDIDATES);
    for k in 0..YOSIDA_CANDIDATES {
        vals.push(q(x - width + k as f64 * step)?);
    }
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for k in 1..YOSIDA_CANDIDATES - 1 {
        let second = vals[k + 1] - 2.0 * vals[k] + vals[k - 1];
        if second < -1e-9 * scale - 1e-12 {
            return Err(KfpError::Potential(format!(
                "non-convex inner objective near y={:.6} (x={x}); declared lambda={lambda} is too large",
                x - width + k as f64 * step
            )));
        }
    }
    let best = (0..YOSIDA_CANDIDATES)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(YOSIDA_CANDIDATES / 2);
    let mut lo = x - width + best.saturating_sub(1) as f64 * step;
    let mut hi = x - width + (best + 1).min(YOSIDA_CANDIDATES - 1) as f64 * step;
    if dq(lo)? > 0.0 {
        lo = x - width;
    }
    if dq(hi)? < 0.0 {
        hi = x + width;
    }
    while hi - lo > YOSIDA_TOL * (1.0 + x.abs()) {
        let mid = 0.5 * (lo + hi);
        if dq(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Certificate `V(x) >= A|x| - B` on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearBound {
    pub a: f64,
    pub b: f64,
}

const LINEAR_BOUND_LATTICE: usize = 20;

/// Largest `A` in `{0.05, 0.10, ..., 1.0}` not exceeding the outward slope of
/// `V` at both ends of the domain, together with the smallest admissible `B`.
/// Convexity then extends the grid certificate beyond the truncation.
pub fn certify_linear_bound(potential: &Potential, grid: &GammaGrid) -> Result<LinearBound> {
    let l = grid.half_width();
    let edge = potential.grad(l).min(-potential.grad(-l));
    let mut a = 0.0;
    for k in (1..=LINEAR_BOUND_LATTICE).rev() {
        let cand = k as f64 / LINEAR_BOUND_LATTICE as f64;
        if cand <= edge {
            a = cand;
            break;
        }
    }
    if a == 0.0 {
        return Err(KfpError::Potential(format!(
            "no positive linear lower bound for {} (outward slope {edge:.3e}); potential is not coercive on the domain",
            potential.name()
        )));
    }
    let min = grid
        .nodes()
        .iter()
        .map(|&x| potential.eval(x) - a * x.abs())
        .fold(f64::INFINITY, f64::min);
    Ok(LinearBound { a, b: (-min).max(0.0) })
}

/// Checks `V(x_i) >= A|x_i| - B` at every node.
pub fn check_linear_bound(potential: &Potential, grid: &GammaGrid, bound: LinearBound) -> bool {
    grid.nodes().iter().all(|&x| potential.eval(x) >= bound.a * x.abs() - bound.b - 1e-12)
}

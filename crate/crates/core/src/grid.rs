//! Uniform grid on `[-L, L]` carrying the normalised reference measure
//! `gamma = e^{-V} dx / Z`, with densities on cell centres and fluxes on the
//! interior cell faces.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{KfpError, Result};
use crate::potentials::Potential;

static NEXT_GRID_ID: AtomicU64 = AtomicU64::new(1);

/// Smallest admissible node count.
pub const MIN_NODES: usize = 16;

/// Discretised reference measure.
///
/// Node `i` sits at `x_i = -L + (i + 1/2) dx` with `dx = 2L/n`. Face `f`
/// (`0 <= f < n-1`) sits at `x_{f+1/2} = -L + (f+1) dx` between nodes `f` and
/// `f+1`; the two boundary faces carry zero flux and are not stored.
#[derive(Debug)]
pub struct GammaGrid {
    id: u64,
    potential: Potential,
    half_width: f64,
    dx: f64,
    nodes: Vec<f64>,
    faces: Vec<f64>,
    node_weights: Vec<f64>,
    face_weights: Vec<f64>,
    log_z: f64,
}

/// Builds the grid; weights at nodes and faces use the same discrete
/// normaliser so that node weights sum to one.
pub fn build_grid(potential: Potential, half_width: f64, n: usize) -> Result<Arc<GammaGrid>> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(KfpError::InvalidGrid(format!("half-width must be positive, got {half_width}")));
    }
    if n < MIN_NODES {
        return Err(KfpError::InvalidGrid(format!("need at least {MIN_NODES} nodes, got {n}")));
    }
    let dx = 2.0 * half_width / n as f64;
    let nodes: Vec<f64> = (0..n).map(|i| -half_width + (i as f64 + 0.5) * dx).collect();
    let faces: Vec<f64> = (1..n).map(|f| -half_width + f as f64 * dx).collect();
    let eval = |x: f64| -> Result<f64> {
        let v = potential.try_eval(x)?.0;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(KfpError::InvalidGrid(format!("potential {} is not finite at x={x}", potential.name())))
        }
    };
    let vn: Vec<f64> = nodes.iter().map(|&x| eval(x)).collect::<Result<_>>()?;
    let vf: Vec<f64> = faces.iter().map(|&x| eval(x)).collect::<Result<_>>()?;
    let vmin = vn.iter().chain(vf.iter()).copied().fold(f64::INFINITY, f64::min);

    let tol = 1e-6;
    for i in 1..n - 1 {
        let second = (vn[i + 1] - 2.0 * vn[i] + vn[i - 1]) / (dx * dx);
        if second < potential.lambda() - tol * (1.0 + second.abs()) {
            return Err(KfpError::InvalidGrid(format!(
                "potential {} has curvature {second:.4e} < lambda={} near x={:.4}",
                potential.name(),
                potential.lambda(),
                nodes[i]
            )));
        }
    }

    let raw_n: Vec<f64> = vn.iter().map(|v| (-(v - vmin)).exp() * dx).collect();
    let raw_f: Vec<f64> = vf.iter().map(|v| (-(v - vmin)).exp() * dx).collect();
    let tiny = f64::MIN_POSITIVE * 1e10;
    if let Some(i) = raw_n.iter().position(|&w| !(w > tiny)) {
        return Err(KfpError::InvalidGrid(format!(
            "reference weight underflows at x={:.4}; reduce the half-width L={half_width}",
            nodes[i]
        )));
    }
    if let Some(f) = raw_f.iter().position(|&w| !(w > tiny)) {
        return Err(KfpError::InvalidGrid(format!(
            "reference weight underflows at x={:.4}; reduce the half-width L={half_width}",
            faces[f]
        )));
    }
    let total: f64 = raw_n.iter().sum();
    let node_weights = raw_n.iter().map(|w| w / total).collect();
    let face_weights = raw_f.iter().map(|w| w / total).collect();
    let log_z = -vmin + total.ln();
    Ok(Arc::new(GammaGrid {
        id: NEXT_GRID_ID.fetch_add(1, Ordering::Relaxed),
        potential,
        half_width,
        dx,
        nodes,
        faces,
        node_weights,
        face_weights,
        log_z,
    }))
}

impl GammaGrid {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn label(&self) -> String {
        format!("{}[L={}, n={}]#{}", self.potential.name(), self.half_width, self.len(), self.id)
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn lambda(&self) -> f64 {
        self.potential.lambda()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of interior faces (`len() - 1`).
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    /// `gamma`-mass of each node cell; sums to one.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// `e^{-V(x_f)} dx / Z` at the interior faces.
    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    /// Discrete log-normaliser: `log sum_i e^{-V(x_i)} dx`.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// Density of `gamma` with respect to Lebesgue measure at `x`.
    pub fn gamma_density(&self, x: f64) -> f64 {
        (-(self.potential.eval(x)) - self.log_z).exp()
    }

    /// `sum_i g_i f_i`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.node_weights.iter().zip(f).map(|(g, v)| g * v).sum()
    }

    /// `sum_f g_f w_f v_f`.
    pub fn face_integrate(&self, w: &[f64]) -> f64 {
        self.face_weights.iter().zip(w).map(|(g, v)| g * v).sum()
    }

    /// Forward difference onto interior faces.
    pub fn grad_into(&self, rho: &[f64], out: &mut [f64]) {
        let inv = 1.0 / self.dx;
        for f in 0..self.n_faces() {
            out[f] = (rho[f + 1] - rho[f]) * inv;
        }
    }

    /// Weighted divergence, the negative `gamma`-adjoint of `grad_into`.
    pub fn div_into(&self, w: &[f64], out: &mut [f64]) {
        let n = self.len();
        let gf = &self.face_weights;
        for i in 0..n {
            let right = if i + 1 < n { gf[i] * w[i] } else { 0.0 };
            let left = if i > 0 { gf[i - 1] * w[i - 1] } else { 0.0 };
            out[i] = (right - left) / (self.node_weights[i] * self.dx);
        }
    }

    /// Coefficients of the weighted Laplacian: row `i` reads
    /// `lower[i] (rho_{i-1} - rho_i) + upper[i] (rho_{i+1} - rho_i)`.
    pub fn laplacian_coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let dx2 = self.dx * self.dx;
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let g = self.node_weights[i];
            if i > 0 {
                lower[i] = self.face_weights[i - 1] / (g * dx2);
            }
            if i + 1 < n {
                upper[i] = self.face_weights[i] / (g * dx2);
            }
        }
        (lower, upper)
    }

    pub fn laplacian_into(&self, rho: &[f64], out: &mut [f64]) {
        let n = self.len();
        let dx2 = self.dx * self.dx;
        let gf = &self.face_weights;
        for i in 0..n {
            let right = if i + 1 < n { gf[i] * (rho[i + 1] - rho[i]) } else { 0.0 };
            let left = if i > 0 { gf[i - 1] * (rho[i] - rho[i - 1]) } else { 0.0 };
            out[i] = (right - left) / (self.node_weights[i] * dx2);
        }
    }

    pub fn same_as(&self, other: &GammaGrid) -> bool {
        self.id == other.id
    }

    pub fn ensure_same(&self, other: &GammaGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(KfpError::GridMismatch { left: self.label(), right: other.label() })
        }
    }
}

impl fmt::Display for GammaGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn check_values(values: &[f64], expected: usize, context: &str) -> Result<()> {
    if values.len() != expected {
        return Err(KfpError::InvalidInput(format!(
            "{context}: expected {expected} values, got {}",
            values.len()
        )));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(KfpError::NonFinite { context: context.to_string(), index });
    }
    Ok(())
}

/// Node-valued density relative to `gamma`.
#[derive(Clone, Debug)]
pub struct DensityField {
    grid: Arc<GammaGrid>,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: &Arc<GammaGrid>, values: Vec<f64>) -> Result<Self> {
        check_values(&values, grid.len(), "density")?;
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Arc<GammaGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().iter().map(|&x| f(x)).collect())
    }

    pub fn constant(grid: &Arc<GammaGrid>, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn grid(&self) -> &Arc<GammaGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `gamma`-mass `sum_i g_i rho_i`.
    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rescales to unit `gamma`-mass.
    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) || !m.is_finite() {
            return Err(KfpError::InvalidInput(format!("cannot normalise density with mass {m}")));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(self)
    }

    pub fn gradient(&self) -> VectorField {
        let mut out = vec![0.0; self.grid.n_faces()];
        self.grid.grad_into(&self.values, &mut out);
        VectorField { grid: self.grid.clone(), values: out }
    }

    pub fn laplacian(&self) -> DensityField {
        let mut out = vec![0.0; self.grid.len()];
        self.grid.laplacian_into(&self.values, &mut out);
        DensityField { grid: self.grid.clone(), values: out }
    }
}

/// Face-valued vector field (flux or gradient).
#[derive(Clone, Debug)]
pub struct VectorField {
    grid: Arc<GammaGrid>,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: &Arc<GammaGrid>, values: Vec<f64>) -> Result<Self> {
        check_values(&values, grid.n_faces(), "vector field")?;
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Arc<GammaGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.faces().iter().map(|&x| f(x)).collect())
    }

    pub fn zeros(grid: &Arc<GammaGrid>) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.n_faces()] }
    }

    pub fn grid(&self) -> &Arc<GammaGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn divergence(&self) -> DensityField {
        let mut out = vec![0.0; self.grid.len()];
        self.grid.div_into(&self.values, &mut out);
        DensityField { grid: self.grid.clone(), values: out }
    }

    /// `sum_f g_f |w_f|^2`.
    pub fn norm_squared(&self) -> f64 {
        self.grid.face_weights().iter().zip(&self.values).map(|(g, w)| g * w * w).sum()
    }
}

/// `<a, b>` in `L^2(gamma)` on nodes.
pub fn inner_product(a: &DensityField, b: &DensityField) -> Result<f64> {
    a.grid.ensure_same(&b.grid)?;
    Ok(a.grid.node_weights().iter().zip(a.values.iter().zip(&b.values)).map(|(g, (x, y))| g * x * y).sum())
}

/// `<v, w>` in `L^2(gamma)` on faces.
pub fn face_inner_product(v: &VectorField, w: &VectorField) -> Result<f64> {
    v.grid.ensure_same(&w.grid)?;
    Ok(v.grid.face_weights().iter().zip(v.values.iter().zip(&w.values)).map(|(g, (x, y))| g * x * y).sum())
}

/// `|<grad rho, w> + <rho, div w>|` relative to `|grad rho| |w| + |rho| |div w|`.
pub fn sbp_residual(rho: &DensityField, w: &VectorField) -> Result<f64> {
    rho.grid.ensure_same(&w.grid)?;
    let grad = rho.gradient();
    let div = w.divergence();
    let a = face_inner_product(&grad, w)?;
    let b = inner_product(rho, &div)?;
    let scale = (grad.norm_squared() * w.norm_squared()).sqrt()
        + (inner_product(rho, rho)? * inner_product(&div, &div)?).sqrt();
    Ok(if scale > 0.0 { (a + b).abs() / scale } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(n: usize) -> Arc<GammaGrid> {
        build_grid(Potential::harmonic(), 8.0, n).unwrap()
    }

    #[test]
    fn weights_are_normalised() {
        let g = harmonic(512);
        assert!((g.integrate(&vec![1.0; 512]) - 1.0).abs() < 1e-12);
        // Discrete normaliser agrees with sqrt(2 pi) to quadrature accuracy.
        assert!((g.log_z() - (2.0 * std::f64::consts::PI).sqrt().ln()).abs() < 1e-10);
        let lap = build_grid(Potential::abs(), 12.0, 512).unwrap();
        assert!((lap.integrate(&vec![1.0; 512]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moments_of_harmonic_reference() {
        let g = harmonic(512);
        let m1 = g.integrate(g.nodes());
        let x2: Vec<f64> = g.nodes().iter().map(|x| x * x).collect();
        assert!(m1.abs() < 1e-14);
        assert!((g.integrate(&x2) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(build_grid(Potential::harmonic(), 8.0, 8), Err(KfpError::InvalidGrid(_))));
        assert!(matches!(build_grid(Potential::harmonic(), 0.0, 64), Err(KfpError::InvalidGrid(_))));
        assert!(matches!(build_grid(Potential::harmonic(), 60.0, 64), Err(KfpError::InvalidGrid(_))));
        let overstated = Potential::soft_abs(1.0).unwrap().with_lambda(0.5);
        assert!(matches!(build_grid(overstated, 8.0, 64), Err(KfpError::InvalidGrid(_))));
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = harmonic(64);
        let c = DensityField::constant(&g, 3.0);
        assert!(c.gradient().values().iter().all(|v| v.abs() < 1e-15));
        assert!(c.laplacian().values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_has_zero_mean() {
        let g = harmonic(128);
        let w = VectorField::from_fn(&g, |x| (x * 0.7).sin() + 0.3).unwrap();
        let d = w.divergence();
        assert!(d.mass().abs() < 1e-14);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = harmonic(64);
        let b = harmonic(64);
        let r = DensityField::constant(&a, 1.0);
        let s = DensityField::constant(&b, 1.0);
        match inner_product(&r, &s) {
            Err(KfpError::GridMismatch { left, right }) => assert_ne!(left, right),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let g = harmonic(32);
        let mut v = vec![1.0; 32];
        v[5] = f64::NAN;
        assert!(matches!(DensityField::new(&g, v), Err(KfpError::NonFinite { index: 5, .. })));
    }

    #[test]
    fn laplacian_is_div_grad() {
        let g = harmonic(96);
        let r = DensityField::from_fn(&g, |x| (0.4 * x).cos() + 0.1 * x).unwrap();
        let a = r.laplacian();
        let b = r.gradient().divergence();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }
}

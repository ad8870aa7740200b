//! Mobilities `h`, their entropy densities `psi` (with `psi'' = 1/h`,
//! `psi(1) = psi'(1) = 0`) and the derived functionals.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::grid::DensityField;

/// Below this density values are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Distance to `alpha = 1` below which the logarithmic limit is used.
pub const LOG_SWITCH: f64 = 1e-6;

/// A concave, nonnegative mobility.
pub trait Mobility {
    fn h(&self, r: f64) -> f64;
    fn dh(&self, r: f64) -> f64;
    fn d2h(&self, r: f64) -> f64;
}

/// Entropy density with its first two derivatives.
pub trait EntropyDensity {
    fn psi(&self, x: f64) -> f64;
    fn dpsi(&self, x: f64) -> f64;
    fn d2psi(&self, x: f64) -> f64;
}

/// Mobility together with its entropy density.
#[derive(Clone, Debug)]
pub struct EntropyModel {
    kind: ModelKind,
}

#[derive(Clone, Debug)]
enum ModelKind {
    Power { alpha: f64 },
    Tabulated(Arc<TabulatedMobility>),
}

/// Serializable description of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub beta_fallback: bool,
}

impl EntropyModel {
    /// `h(r) = r^alpha`, `alpha` in `[0, 1]`.
    pub fn power(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(KfpError::Model(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { kind: ModelKind::Power { alpha } })
    }

    /// Piecewise-linear mobility through the given `(r, h)` knots.
    pub fn tabulated(knots: Vec<(f64, f64)>) -> Result<Self> {
        Ok(Self { kind: ModelKind::Tabulated(Arc::new(TabulatedMobility::new(knots)?)) })
    }

    pub fn alpha(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::Power { alpha } => Some(*alpha),
            ModelKind::Tabulated(_) => None,
        }
    }

    fn is_log(&self) -> bool {
        matches!(self.kind, ModelKind::Power { alpha } if (1.0 - alpha).abs() < LOG_SWITCH)
    }

    /// `(1 - alpha) / (1 + alpha)` for the power family, zero otherwise.
    pub fn beta(&self) -> f64 {
        match &self.kind {
            ModelKind::Power { alpha } => (1.0 - alpha) / (1.0 + alpha),
            ModelKind::Tabulated(_) => 0.0,
        }
    }

    /// Exponent used by the refined production estimates together with a flag
    /// telling whether it fell back to zero (`alpha = 0`, tabulated models).
    pub fn effective_beta(&self) -> (f64, bool) {
        match &self.kind {
            ModelKind::Power { alpha } if *alpha > 0.0 => (self.beta(), false),
            _ => (0.0, true),
        }
    }

    pub fn info(&self) -> ModelInfo {
        let (beta, beta_fallback) = self.effective_beta();
        ModelInfo { name: self.name(), alpha: self.alpha(), beta, beta_fallback }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ModelKind::Power { alpha } => format!("power(alpha={alpha})"),
            ModelKind::Tabulated(t) => format!("tabulated({} knots)", t.knots.len()),
        }
    }

    /// `1 / h`.
    pub fn g(&self, r: f64) -> f64 {
        1.0 / self.h(r)
    }

    /// `lim h(r)/r` as `r -> infinity`.
    pub fn recession_slope(&self) -> f64 {
        match &self.kind {
            ModelKind::Power { alpha } => {
                if self.is_log() || *alpha == 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ModelKind::Tabulated(t) => t.slopes.last().copied().unwrap_or(0.0),
        }
    }

    /// Production integrand antiderivative `f` with `f' = sqrt(g)`, `f(0) = 0`.
    pub fn f(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match &self.kind {
            ModelKind::Power { alpha } => {
                let p = 1.0 - 0.5 * alpha;
                r.powf(p) / p
            }
            ModelKind::Tabulated(t) => t.f(r),
        }
    }

    /// `r psi'(r) - psi(r)`.
    pub fn lpsi(&self, r: f64) -> f64 {
        if r <= DENSITY_FLOOR {
            return -self.psi(0.0);
        }
        r * self.dpsi(r) - self.psi(r)
    }

    /// `psi_a(x) = psi(x) - psi(a) - psi'(a)(x - a)`.
    pub fn psi_shifted(&self, x: f64, a: f64) -> f64 {
        self.psi(x) - self.psi(a) - self.dpsi(a) * (x - a)
    }
}

impl Mobility for EntropyModel {
    fn h(&self, r: f64) -> f64 {
        match &self.kind {
            ModelKind::Power { alpha } => {
                if r <= 0.0 {
                    if *alpha == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    r.powf(*alpha)
                }
            }
            ModelKind::Tabulated(t) => t.h(r),
        }
    }

    fn dh(&self, r: f64) -> f64 {
        match &self.kind {
            ModelKind::Power { alpha } => {
                if *alpha == 0.0 {
                    0.0
                } else if *alpha == 1.0 {
                    1.0
                } else if r <= 0.0 {
                    f64::INFINITY
                } else {
                    alpha * r.powf(alpha - 1.0)
                }
            }
            ModelKind::Tabulated(t) => t.dh(r),
        }
    }

    fn d2h(&self, r: f64) -> f64 {
        match &self.kind {
            ModelKind::Power { alpha } => {
                if *alpha == 0.0 || *alpha == 1.0 {
                    0.0
                } else if r <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    alpha * (alpha - 1.0) * r.powf(alpha - 2.0)
                }
            }
            ModelKind::Tabulated(_) => 0.0,
        }
    }
}

impl EntropyDensity for EntropyModel {
    fn psi(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::INFINITY;
        }
        match &self.kind {
            ModelKind::Power { alpha } => psi_alpha(x, *alpha),
            ModelKind::Tabulated(t) => t.psi(x),
        }
    }

    fn dpsi(&self, x: f64) -> f64 {
        match &self.kind {
            ModelKind::Power { alpha } => {
                if (1.0 - alpha).abs() < LOG_SWITCH {
                    x.ln()
                } else {
                    (x.max(0.0).powf(1.0 - alpha) - 1.0) / (1.0 - alpha)
                }
            }
            ModelKind::Tabulated(t) => t.dpsi(x),
        }
    }

    fn d2psi(&self, x: f64) -> f64 {
        self.g(x)
    }
}

/// Closed-form `psi_alpha`, switching to `x ln x - (x - 1)` next to `alpha = 1`.
pub fn psi_alpha(x: f64, alpha: f64) -> f64 {
    if x < 0.0 {
        return f64::INFINITY;
    }
    if (1.0 - alpha).abs() < LOG_SWITCH {
        if x == 0.0 {
            1.0
        } else {
            x * x.ln() - (x - 1.0)
        }
    } else {
        let p = 2.0 - alpha;
        (x.powf(p) - p * x + (1.0 - alpha)) / (p * (1.0 - alpha))
    }
}

/// `x ln(x/a) - (x - a)`.
pub fn log_relative_entropy(x: f64, a: f64) -> f64 {
    if x <= 0.0 {
        a
    } else {
        x * (x / a).ln() - (x - a)
    }
}

/// `(psi_a(x), a g(a) E_a(x))` with `E_a` the logarithmic entropy about `a`.
/// The first dominates the second for `x >= a`, the reverse holds below `a`.
pub fn entropy_comparison(model: &EntropyModel, x: f64, a: f64) -> (f64, f64) {
    (model.psi_shifted(x, a), a * model.g(a) * log_relative_entropy(x, a))
}

/// Left-hand side of the refined convexity condition
/// `(1 - beta) h h'' + 2 beta (h')^2 <= 0`.
pub fn refined_convexity_lhs(mobility: &dyn Mobility, beta: f64, r: f64) -> f64 {
    let (h, dh, d2h) = (mobility.h(r), mobility.dh(r), mobility.d2h(r));
    (1.0 - beta) * h * d2h + 2.0 * beta * dh * dh
}

fn density_values(rho: &DensityField) -> Result<Vec<f64>> {
    rho.values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < -DENSITY_FLOOR {
                Err(KfpError::InvalidInput(format!("negative density {v:.3e} at node {i}")))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

/// `sum_i g_i psi_a(rho_i)` for a given `a > 0`.
pub fn shifted_entropy(rho: &DensityField, a: f64, model: &EntropyModel) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(KfpError::InvalidInput(format!("entropy shift must be positive, got {a}")));
    }
    let vals = density_values(rho)?;
    let (pa, dpa) = (model.psi(a), model.dpsi(a));
    let w = rho.grid().node_weights();
    Ok(vals.iter().zip(w).map(|(&x, g)| g * (model.psi(x) - pa - dpa * (x - a))).sum())
}

/// Relative entropy with respect to the mean: `a` is the `gamma`-mass of `rho`.
pub fn relative_entropy(rho: &DensityField, model: &EntropyModel) -> Result<f64> {
    let a = rho.mass();
    if !(a > 0.0) {
        return Err(KfpError::InvalidInput(format!("density has non-positive mass {a}")));
    }
    shifted_entropy(rho, a, model)
}

/// `(f(r), r psi'(r) - psi(r))`.
pub fn f_and_lpsi(model: &EntropyModel, r: f64) -> (f64, f64) {
    (model.f(r), model.lpsi(r))
}

/// Outcome of the displacement-convexity screening of `psi`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McCannReport {
    pub samples: usize,
    /// Sample points where `x psi' - psi >= 0` fails.
    pub first_failures: Vec<f64>,
    /// Sample points where `x^2 psi'' - x psi' + psi >= 0` fails.
    pub second_failures: Vec<f64>,
}

impl McCannReport {
    pub fn pass(&self) -> bool {
        self.first_failures.is_empty() && self.second_failures.is_empty()
    }

    /// Number of samples failing some condition.
    pub fn failing_samples(&self) -> usize {
        let mut all: Vec<u64> =
            self.first_failures.iter().chain(&self.second_failures).map(|x| x.to_bits()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }
}

/// Checks both displacement-convexity conditions at the sample points, for the
/// representative of `psi` modulo affine functions that vanishes at zero.
pub fn mccann_check(density: &dyn EntropyDensity, samples: &[f64]) -> McCannReport {
    let p0 = density.psi(0.0);
    let mut first_failures = Vec::new();
    let mut second_failures = Vec::new();
    for &x in samples {
        if !(x > 0.0) {
            continue;
        }
        let psi = density.psi(x) - p0;
        let d1 = density.dpsi(x);
        let d2 = density.d2psi(x);
        let tol = 1e-12 * (psi.abs() + (x * d1).abs() + (x * x * d2).abs() + 1e-300);
        if x * d1 - psi < -tol {
            first_failures.push(x);
        }
        if x * x * d2 - x * d1 + psi < -tol {
            second_failures.push(x);
        }
    }
    McCannReport { samples: samples.len(), first_failures, second_failures }
}

/// `-psi`, used to exercise failure paths.
pub struct Negated<'a>(pub &'a dyn EntropyDensity);

impl EntropyDensity for Negated<'_> {
    fn psi(&self, x: f64) -> f64 {
        -self.0.psi(x)
    }
    fn dpsi(&self, x: f64) -> f64 {
        -self.0.dpsi(x)
    }
    fn d2psi(&self, x: f64) -> f64 {
        -self.0.d2psi(x)
    }
}

/// Concave piecewise-linear mobility, extended linearly to the origin and
/// beyond the last knot. All integrals are exact on each segment.
#[derive(Debug)]
pub struct TabulatedMobility {
    knots: Vec<(f64, f64)>,
    /// Slope of segment `k` on `[r_k, r_{k+1}]`; the last entry extends past the table.
    slopes: Vec<f64>,
    /// Unnormalised `psi'` and `psi` at the knots, and `f` at the knots.
    dpsi_k: Vec<f64>,
    psi_k: Vec<f64>,
    f_k: Vec<f64>,
    dpsi_one: f64,
    psi_one: f64,
}

impl TabulatedMobility {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(KfpError::Model("tabulated mobility needs at least two knots".into()));
        }
        for (k, &(r, h)) in knots.iter().enumerate() {
            if !(r > 0.0) || !(h > 0.0) || !r.is_finite() || !h.is_finite() {
                return Err(KfpError::Model(format!("knot {k} must have positive finite (r, h)")));
            }
            if k > 0 && !(r > knots[k - 1].0) {
                return Err(KfpError::Model("knot abscissae must increase".into()));
            }
        }
        let mut slopes: Vec<f64> =
            knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
        slopes.push(*slopes.last().unwrap());
        let origin_slope = knots[0].1 / knots[0].0;
        let mut prev = origin_slope;
        for &s in &slopes {
            if s > prev * (1.0 + 1e-12) + 1e-15 {
                return Err(KfpError::Model("tabulated mobility is not concave".into()));
            }
            prev = s;
        }
        if *slopes.last().unwrap() < 0.0 {
            return Err(KfpError::Model("tabulated mobility must be nondecreasing at the end".into()));
        }
        let m = knots.len();
        let mut dpsi_k = vec![0.0; m];
        let mut psi_k = vec![0.0; m];
        let mut f_k = vec![0.0; m];
        f_k[0] = 2.0 * knots[0].0 / knots[0].1.sqrt();
        for k in 0..m - 1 {
            let (r0, h0) = knots[k];
            let r1 = knots[k + 1].0;
            let (g, hh, ff) = segment_integrals(r0, h0, slopes[k], r1);
            dpsi_k[k + 1] = dpsi_k[k] + g;
            psi_k[k + 1] = psi_k[k] + dpsi_k[k] * (r1 - r0) + hh;
            f_k[k + 1] = f_k[k] + ff;
        }
        let mut t = Self { knots, slopes, dpsi_k, psi_k, f_k, dpsi_one: 0.0, psi_one: 0.0 };
        let (p, dp) = t.raw(1.0);
        t.psi_one = p;
        t.dpsi_one = dp;
        Ok(t)
    }

    fn segment(&self, r: f64) -> Option<usize> {
        if r < self.knots[0].0 {
            None
        } else {
            Some(self.knots.partition_point(|&(rk, _)| rk <= r) - 1)
        }
    }

    /// Unnormalised `(psi, psi')` anchored at the first knot.
    fn raw(&self, r: f64) -> (f64, f64) {
        match self.segment(r) {
            Some(k) => {
                let (rk, hk) = self.knots[k];
                let (g, hh, _) = segment_integrals(rk, hk, self.slopes[k], r);
                (self.psi_k[k] + self.dpsi_k[k] * (r - rk) + hh, self.dpsi_k[k] + g)
            }
            None => {
                let (r0, h0) = self.knots[0];
                let c = h0 / r0;
                if r <= 0.0 {
                    // Limit of the origin segment as r -> 0.
                    return (r0 / c - self.dpsi_k[0] * r0, f64::NEG_INFINITY);
                }
                let g = (r / r0).ln() / c;
                let hh = (r * (r / r0).ln() - r + r0) / c;
                (self.dpsi_k[0] * (r - r0) + hh, g)
            }
        }
    }

    pub fn h(&self, r: f64) -> f64 {
        match self.segment(r) {
            Some(k) => self.knots[k].1 + self.slopes[k] * (r - self.knots[k].0),
            None => (self.knots[0].1 / self.knots[0].0 * r).max(0.0),
        }
    }

    pub fn dh(&self, r: f64) -> f64 {
        match self.segment(r) {
            Some(k) => self.slopes[k],
            None => self.knots[0].1 / self.knots[0].0,
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        let (p, _) = self.raw(x);
        p - self.psi_one - self.dpsi_one * (x - 1.0)
    }

    pub fn dpsi(&self, x: f64) -> f64 {
        self.raw(x).1 - self.dpsi_one
    }

    pub fn f(&self, r: f64) -> f64 {
        match self.segment(r) {
            Some(k) => {
                let (rk, hk) = self.knots[k];
                self.f_k[k] + segment_integrals(rk, hk, self.slopes[k], r).2
            }
            None => {
                let c = self.knots[0].1 / self.knots[0].0;
                2.0 * (r.max(0.0) / c).sqrt()
            }
        }
    }
}

/// Integrals over `[r0, r]` of `1/h`, `int_{r0}^t 1/h`, and `h^{-1/2}` for
/// `h(t) = h0 + s (t - r0)`.
fn segment_integrals(r0: f64, h0: f64, s: f64, r: f64) -> (f64, f64, f64) {
    let d = r - r0;
    if s.abs() * d.abs() < 1e-9 * h0 {
        // Series in the relative slope.
        let e = s / h0;
        let g = d / h0 * (1.0 - 0.5 * e * d + e * e * d * d / 3.0);
        let hh = d * d / (2.0 * h0) * (1.0 - e * d / 3.0 + e * e * d * d / 6.0);
        let ff = d / h0.sqrt() * (1.0 - 0.25 * e * d);
        return (g, hh, ff);
    }
    let h = h0 + s * d;
    let g = (h / h0).ln() / s;
    let hh = (h * (h / h0).ln() - h + h0) / (s * s);
    let ff = 2.0 * (h.sqrt() - h0.sqrt()) / s;
    (g, hh, ff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn psi_alpha_reference_values() {
        assert!((psi_alpha(1.0, 0.5)).abs() < 1e-15);
        assert!((psi_alpha(0.0, 0.5) - 1.0 / 1.5).abs() < 1e-15);
        assert!((psi_alpha(2.0, 0.999) - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-3);
        assert!((psi_alpha(3.0, 1.0 - 1e-7) - (3.0 * 3f64.ln() - 2.0)).abs() < 1e-14);
        assert!((psi_alpha(3.0, 0.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn psi_shifted_matches_double_integral() {
        for &alpha in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            let m = EntropyModel::power(alpha).unwrap();
            for &(x, a) in &[(0.3, 1.0), (2.5, 0.7), (0.05, 1.3), (4.0, 4.0)] {
                let quad = simpson(&|r: f64| (x - r) * m.g(r), a, x, 2000);
                assert!((m.psi_shifted(x, a) - quad).abs() < 1e-8, "alpha={alpha} x={x} a={a}");
            }
        }
    }

    #[test]
    fn f_derivative_is_sqrt_g() {
        let m = EntropyModel::power(0.5).unwrap();
        let r = 1.7;
        let h = 1e-6;
        assert!(((m.f(r + h) - m.f(r - h)) / (2.0 * h) - m.g(r).sqrt()).abs() < 1e-7);
    }

    #[test]
    fn refined_condition_is_an_equality_for_powers() {
        for &alpha in &[0.1, 0.5, 0.9, 1.0] {
            let m = EntropyModel::power(alpha).unwrap();
            for &r in &[0.01, 0.5, 3.0] {
                assert!(refined_convexity_lhs(&m, m.beta(), r).abs() < 1e-12 * (1.0 + 1.0 / r));
            }
        }
    }

    #[test]
    fn mccann_representatives() {
        let samples: Vec<f64> = (1..=50).map(|k| k as f64 * 0.2).collect();
        for &alpha in &[0.0, 0.5, 1.0] {
            let m = EntropyModel::power(alpha).unwrap();
            assert!(mccann_check(&m, &samples).pass(), "alpha={alpha}");
            let neg = Negated(&m);
            assert_eq!(mccann_check(&neg, &samples).failing_samples(), samples.len());
        }
    }

    #[test]
    fn relative_entropy_of_tilted_gaussian() {
        let grid = crate::grid::build_grid(crate::potentials::Potential::harmonic(), 8.0, 512).unwrap();
        let a = 0.7;
        let rho = DensityField::from_fn(&grid, |x| (a * x - 0.5 * a * a).exp()).unwrap();
        let m = EntropyModel::power(1.0).unwrap();
        let psi = relative_entropy(&rho, &m).unwrap();
        assert!((psi - 0.5 * a * a).abs() < 1e-4);
        let neg = DensityField::from_fn(&grid, |x| if x > 7.0 { -1.0 } else { 1.0 }).unwrap();
        assert!(relative_entropy(&neg, &m).is_err());
    }

    #[test]
    fn tabulated_matches_power_sampled_densely() {
        let alpha = 0.5;
        let knots: Vec<(f64, f64)> = (0..7000)
            .map(|k| {
                let r = 1e-6 * (1.0025f64).powi(k);
                (r, r.powf(alpha))
            })
            .collect();
        let t = EntropyModel::tabulated(knots).unwrap();
        let p = EntropyModel::power(alpha).unwrap();
        for &x in &[0.1, 0.6, 1.0, 2.0, 5.0] {
            assert!((t.psi(x) - p.psi(x)).abs() < 1e-5, "x={x}");
            assert!((t.dpsi(x) - p.dpsi(x)).abs() < 1e-5, "x={x}");
            assert!((t.f(x) - p.f(x)).abs() < 1e-4, "x={x}");
        }
        assert!(t.psi(1.0).abs() < 1e-14 && t.dpsi(1.0).abs() < 1e-14);
    }

    #[test]
    fn tabulated_rejects_convex_tables() {
        assert!(EntropyModel::tabulated(vec![(1.0, 1.0), (2.0, 4.0)]).is_err());
        assert!(EntropyModel::tabulated(vec![(1.0, 1.0)]).is_err());
        assert!(EntropyModel::power(1.5).is_err());
    }

    proptest! {
        #[test]
        fn log_entropy_comparison(alpha in 0.0f64..=1.0, a in 0.05f64..5.0, t in 0.0f64..1.0) {
            let m = EntropyModel::power(alpha).unwrap();
            let above = a * (1.0 + 10.0 * t);
            let (p, q) = entropy_comparison(&m, above, a);
            prop_assert!(p >= q - 1e-10 * (1.0 + q.abs()));
            let below = a * t;
            let (p, q) = entropy_comparison(&m, below, a);
            prop_assert!(p <= q + 1e-10 * (1.0 + q.abs()));
        }

        #[test]
        fn entropy_is_nonnegative(alpha in 0.0f64..=1.0, x in 0.0f64..20.0) {
            let m = EntropyModel::power(alpha).unwrap();
            prop_assert!(m.psi(x) >= -1e-14);
        }
    }
}

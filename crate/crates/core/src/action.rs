//! Action density `phi(rho, w) = w^2 / h(rho)`, the grid action functional,
//! entropy production and the convexity screening of `phi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{EntropyModel, Mobility, DENSITY_FLOOR};
use crate::error::{KfpError, Result};
use crate::grid::{DensityField, GammaGrid, VectorField};

/// `w^2 / h(rho)` with `phi(0, 0) = 0` and `phi(0, w) = +inf` when `h(0) = 0`.
pub fn action_density(rho: f64, w: f64, model: &EntropyModel) -> f64 {
    let r = if rho < DENSITY_FLOOR { 0.0 } else { rho };
    if w == 0.0 {
        return if rho < -DENSITY_FLOOR { f64::INFINITY } else { 0.0 };
    }
    if rho < -DENSITY_FLOOR {
        return f64::INFINITY;
    }
    let h = model.h(r);
    if h <= 0.0 {
        f64::INFINITY
    } else {
        w * w / h
    }
}

/// Recession function `phi^inf(rho, w) = w^2 / h^inf(rho)`, `h^inf(r) = r * lim h(s)/s`.
pub fn recession_density(rho: f64, w: f64, model: &EntropyModel) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    let hr = model.recession_slope() * rho.max(0.0);
    if hr <= DENSITY_FLOOR * model.recession_slope() || hr <= 0.0 {
        f64::INFINITY
    } else {
        w * w / hr
    }
}

/// Face average of a node field.
pub fn face_average_into(rho: &[f64], out: &mut [f64]) {
    for f in 0..out.len() {
        out[f] = 0.5 * (rho[f] + rho[f + 1]);
    }
}

/// `sum_f g_f phi(rho_bar_f, w_f)` on raw slices.
pub fn action_on_grid(grid: &GammaGrid, rho: &[f64], w: &[f64], model: &EntropyModel) -> f64 {
    grid.face_weights()
        .iter()
        .enumerate()
        .map(|(f, g)| {
            let phi = action_density(0.5 * (rho[f] + rho[f + 1]), w[f], model);
            if phi == 0.0 {
                0.0
            } else {
                g * phi
            }
        })
        .sum()
}

/// Discrete action `Phi(rho, w)`; may be `+inf`.
pub fn action_functional(rho: &DensityField, w: &VectorField, model: &EntropyModel) -> Result<f64> {
    rho.grid().ensure_same(w.grid())?;
    Ok(action_on_grid(rho.grid(), rho.values(), w.values(), model))
}

/// Entropy production, reported in the `f`-form `sum_f g_f |D f(rho)|^2`
/// together with the direct form `sum_f g_f |D rho|^2 / h(rho_bar)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyProduction {
    pub value: f64,
    pub direct: f64,
    pub discrepancy: f64,
    pub warning: Option<String>,
}

/// `f`-form of the entropy production on raw slices.
pub fn production_on_grid(grid: &GammaGrid, rho: &[f64], model: &EntropyModel) -> f64 {
    let inv = 1.0 / grid.dx();
    let mut prev = model.f(rho[0]);
    let mut total = 0.0;
    for (f, g) in grid.face_weights().iter().enumerate() {
        let next = model.f(rho[f + 1]);
        let d = (next - prev) * inv;
        total += g * d * d;
        prev = next;
    }
    total
}

pub fn entropy_production(rho: &DensityField, model: &EntropyModel) -> Result<EntropyProduction> {
    if let Some(i) = rho.values().iter().position(|&v| v < -DENSITY_FLOOR) {
        return Err(KfpError::InvalidInput(format!("negative density at node {i}")));
    }
    let grid = rho.grid();
    let value = production_on_grid(grid, rho.values(), model);
    let grad = rho.gradient();
    let direct = action_on_grid(grid, rho.values(), grad.values(), model);
    let discrepancy = (direct - value).abs();
    let limit = 10.0 * grid.dx() * grid.dx() * value.max(f64::MIN_POSITIVE);
    let warning = (discrepancy > limit || !direct.is_finite()).then(|| {
        format!("direct and f-form production differ by {discrepancy:.3e} (direct {direct:.6e}, f-form {value:.6e})")
    });
    Ok(EntropyProduction { value, direct, discrepancy, warning })
}

/// One sample of the convexity screening: base point `(rho, w)` and direction `(x, y)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConvexitySample {
    pub rho: f64,
    pub w: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub checked: usize,
    /// Samples with `Q < 0`.
    pub convexity_failures: usize,
    /// Samples with `Q < 2 beta phi(rho, y)`.
    pub refined_failures: usize,
    /// Minimum of `(Q - 2 beta phi(rho, y)) / scale` over the samples.
    pub worst_relative_margin: f64,
}

impl ConvexityReport {
    pub fn pass(&self) -> bool {
        self.convexity_failures == 0 && self.refined_failures == 0
    }
}

/// Evaluates `Q = g'' w^2 x^2 + 4 g' w x y + 2 g y^2` (the Hessian of `phi`
/// at `(rho, w)` in direction `(x, y)`) against `0` and `2 beta g y^2`.
pub fn convexity_certificate(mobility: &dyn Mobility, beta: f64, samples: &[ConvexitySample]) -> ConvexityReport {
    let mut convexity_failures = 0;
    let mut refined_failures = 0;
    let mut worst = f64::INFINITY;
    for s in samples {
        let (h, dh, d2h) = (mobility.h(s.rho), mobility.dh(s.rho), mobility.d2h(s.rho));
        let g = 1.0 / h;
        let g1 = -dh / (h * h);
        let g2 = (2.0 * dh * dh - h * d2h) / (h * h * h);
        let t1 = g2 * s.w * s.w * s.x * s.x;
        let t2 = 4.0 * g1 * s.w * s.x * s.y;
        let t3 = 2.0 * g * s.y * s.y;
        let q = t1 + t2 + t3;
        let scale = t1.abs() + t2.abs() + t3.abs() + f64::MIN_POSITIVE;
        let tol = 1e-10 * scale;
        if q < -tol {
            convexity_failures += 1;
        }
        let margin = q - beta * t3;
        if margin < -tol {
            refined_failures += 1;
        }
        worst = worst.min(margin / scale);
    }
    ConvexityReport { checked: samples.len(), convexity_failures, refined_failures, worst_relative_margin: worst }
}

/// Random screening samples: `rho` log-uniform on `[1e-3, 1e3]`, the rest uniform on `[-2, 2]`.
pub fn random_convexity_samples(seed: u64, count: usize) -> Vec<ConvexitySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| ConvexitySample {
            rho: 10f64.powf(rng.gen_range(-3.0..3.0)),
            w: rng.gen_range(-2.0..2.0),
            x: rng.gen_range(-2.0..2.0),
            y: rng.gen_range(-2.0..2.0),
        })
        .collect()
}

/// Convex `zeta: [0, inf) -> [0, inf)` with `zeta(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Zeta {
    /// `s^p`, `p >= 1`.
    Power(f64),
}

impl Zeta {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Zeta::Power(p) => s.powf(*p),
        }
    }

    fn superlinear(&self) -> bool {
        match self {
            Zeta::Power(p) => *p > 1.0,
        }
    }
}

/// `sum_f g_f zeta(|w_f| / h(rho_bar_f)) h(rho_bar_f)`.
pub fn moment_functional(rho: &DensityField, w: &VectorField, zeta: Zeta, model: &EntropyModel) -> Result<f64> {
    rho.grid().ensure_same(w.grid())?;
    let r = rho.values();
    let mut total = 0.0;
    for (f, (&g, &wf)) in rho.grid().face_weights().iter().zip(w.values()).enumerate() {
        if wf == 0.0 {
            continue;
        }
        let h = model.h((0.5 * (r[f] + r[f + 1])).max(0.0));
        let term = if h <= 0.0 {
            if zeta.superlinear() {
                f64::INFINITY
            } else {
                wf.abs()
            }
        } else {
            zeta.eval(wf.abs() / h) * h
        };
        total += g * term;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::potentials::Potential;
    use proptest::prelude::*;

    struct Square;
    impl Mobility for Square {
        fn h(&self, r: f64) -> f64 {
            r * r
        }
        fn dh(&self, r: f64) -> f64 {
            2.0 * r
        }
        fn d2h(&self, _: f64) -> f64 {
            2.0
        }
    }

    #[test]
    fn action_density_conventions() {
        let m = EntropyModel::power(0.5).unwrap();
        assert_eq!(action_density(0.0, 0.0, &m), 0.0);
        assert!(action_density(0.0, 1.0, &m).is_infinite());
        assert!((action_density(4.0, 2.0, &m) - 2.0).abs() < 1e-15);
        let m0 = EntropyModel::power(0.0).unwrap();
        assert!((action_density(0.0, 3.0, &m0) - 9.0).abs() < 1e-15);
        let m1 = EntropyModel::power(1.0).unwrap();
        assert!((recession_density(2.0, 2.0, &m1) - 2.0).abs() < 1e-15);
        assert!(recession_density(2.0, 2.0, &m).is_infinite());
        assert_eq!(recession_density(2.0, 0.0, &m), 0.0);
    }

    #[test]
    fn production_of_tilted_gaussian() {
        let grid = build_grid(Potential::harmonic(), 8.0, 512).unwrap();
        let a = 0.8;
        let rho = DensityField::from_fn(&grid, |x| (a * x - 0.5 * a * a).exp()).unwrap();
        let m = EntropyModel::power(1.0).unwrap();
        let p = entropy_production(&rho, &m).unwrap();
        assert!((p.value - a * a).abs() < 2e-3, "{}", p.value);
        assert!((p.direct - a * a).abs() < 2e-3, "{}", p.direct);
    }

    #[test]
    fn production_of_constant_vanishes() {
        let grid = build_grid(Potential::harmonic(), 8.0, 64).unwrap();
        for &alpha in &[0.0, 0.5, 1.0] {
            let m = EntropyModel::power(alpha).unwrap();
            let p = entropy_production(&DensityField::constant(&grid, 1.0), &m).unwrap();
            assert_eq!(p.value, 0.0);
            assert_eq!(p.direct, 0.0);
        }
    }

    #[test]
    fn convexity_screening() {
        let samples = random_convexity_samples(7, 10_000);
        for &alpha in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            let m = EntropyModel::power(alpha).unwrap();
            let report = convexity_certificate(&m, m.effective_beta().0, &samples);
            assert!(report.pass(), "alpha={alpha}: {report:?}");
        }
        let bad = convexity_certificate(&Square, 0.0, &samples);
        assert!(bad.convexity_failures > 0);
    }

    #[test]
    fn moment_functional_quadratic_is_action() {
        let grid = build_grid(Potential::harmonic(), 6.0, 128).unwrap();
        let m = EntropyModel::power(0.5).unwrap();
        let rho = DensityField::from_fn(&grid, |x| 1.0 + 0.5 * (x * 0.3).sin()).unwrap();
        let w = VectorField::from_fn(&grid, |x| (x * 0.2).cos()).unwrap();
        let a = moment_functional(&rho, &w, Zeta::Power(2.0), &m).unwrap();
        let b = action_functional(&rho, &w, &m).unwrap();
        assert!((a - b).abs() < 1e-12 * b);
    }

    proptest! {
        #[test]
        fn action_is_jointly_convex(
            alpha in 0.0f64..=1.0,
            r0 in 0.01f64..5.0, r1 in 0.01f64..5.0,
            w0 in -3.0f64..3.0, w1 in -3.0f64..3.0,
            t in 0.0f64..1.0,
        ) {
            let m = EntropyModel::power(alpha).unwrap();
            let mid = action_density((1.0 - t) * r0 + t * r1, (1.0 - t) * w0 + t * w1, &m);
            let chord = (1.0 - t) * action_density(r0, w0, &m) + t * action_density(r1, w1, &m);
            prop_assert!(mid <= chord * (1.0 + 1e-12) + 1e-14);
        }

        #[test]
        fn action_is_homogeneous_for_log(r in 0.01f64..5.0, w in -3.0f64..3.0, s in 0.1f64..10.0) {
            let m = EntropyModel::power(1.0).unwrap();
            let a = action_density(s * r, s * w, &m);
            prop_assert!((a - s * action_density(r, w, &m)).abs() <= 1e-12 * (1.0 + a));
        }
    }
}

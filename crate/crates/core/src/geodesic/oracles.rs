//! Closed-form reference distances for the two extreme mobilities.

use crate::error::{KfpError, Result};
use crate::grid::DensityField;

/// Result of the weighted `H^{-1}` computation.
#[derive(Clone, Debug)]
pub struct HMinusOne {
    pub distance: f64,
    /// Potential `u` with `Delta_gamma u = rho1 - rho0`, `<u, 1> = 0`.
    pub potential: Vec<f64>,
    /// Optimal flux `-D u` on faces.
    pub flux: Vec<f64>,
}

/// Weighted `H^{-1}` distance, which is the `h = 1` transport distance.
///
/// The Neumann problem is integrated as a flux balance from both ends towards
/// the heaviest node, so no tridiagonal solve is needed and tail weights do
/// not amplify rounding.
pub fn oracle_hminus1(rho0: &DensityField, rho1: &DensityField) -> Result<HMinusOne> {
    rho0.grid().ensure_same(rho1.grid())?;
    let grid = rho0.grid();
    let n = grid.len();
    let gn = grid.node_weights();
    let gf = grid.face_weights();
    let dx = grid.dx();
    let diff: Vec<f64> = (0..n).map(|i| gn[i] * (rho1.values()[i] - rho0.values()[i])).collect();
    let total: f64 = diff.iter().sum();
    let scale: f64 = diff.iter().map(|d| d.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    if total.abs() > 1e-9 * scale.max(1.0) {
        return Err(KfpError::InvalidInput(format!(
            "H^-1 problem is singular beyond the gauge: mass difference {total:.3e}"
        )));
    }
    // g_f (u_{f+1} - u_f) = dx * (mass of rho1 - rho0 left of f), summed from the lighter side.
    let pivot = (0..n).max_by(|&a, &b| gn[a].total_cmp(&gn[b])).unwrap_or(0);
    let mut q = vec![0.0; n - 1];
    let mut acc = 0.0;
    for f in 0..pivot {
        acc += diff[f];
        q[f] = acc;
    }
    acc = 0.0;
    for f in (pivot..n - 1).rev() {
        acc -= diff[f + 1];
        q[f] = acc;
    }
    let du: Vec<f64> = (0..n - 1).map(|f| dx * q[f] / gf[f]).collect();
    let mut u = vec![0.0; n];
    for f in pivot..n - 1 {
        u[f + 1] = u[f] + dx * du[f];
    }
    for f in (0..pivot).rev() {
        u[f] = u[f + 1] - dx * du[f];
    }
    let mean = grid.integrate(&u);
    u.iter_mut().for_each(|v| *v -= mean);
    let energy: f64 = (0..n - 1).map(|f| gf[f] * du[f] * du[f]).sum();
    Ok(HMinusOne { distance: energy.sqrt(), potential: u, flux: du.iter().map(|d| -d).collect() })
}

/// Number of quantile samples in the classical Wasserstein oracle.
pub const QUANTILE_SAMPLES: usize = 10_000;

/// Classical quadratic Wasserstein distance of `rho0 gamma` and `rho1 gamma`
/// through their quantile functions; the node masses are spread uniformly over
/// the node cells so the CDFs are piecewise linear.
pub fn oracle_w2_quantile(rho0: &DensityField, rho1: &DensityField) -> Result<f64> {
    rho0.grid().ensure_same(rho1.grid())?;
    for (name, r) in [("rho0", rho0), ("rho1", rho1)] {
        let m = r.mass();
        if (m - 1.0).abs() > 1e-9 {
            return Err(KfpError::InvalidInput(format!("{name} must have unit mass, got {m}")));
        }
        if r.min() < 0.0 {
            return Err(KfpError::InvalidInput(format!("{name} has negative values")));
        }
    }
    let q0 = quantiles(rho0);
    let q1 = quantiles(rho1);
    let s: f64 = q0.iter().zip(&q1).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / QUANTILE_SAMPLES as f64).sqrt())
}

fn quantiles(rho: &DensityField) -> Vec<f64> {
    let grid = rho.grid();
    let dx = grid.dx();
    let left = -grid.half_width();
    let masses: Vec<f64> = grid.node_weights().iter().zip(rho.values()).map(|(g, r)| g * r).collect();
    let mut cdf = Vec::with_capacity(masses.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &masses {
        acc += m;
        cdf.push(acc);
    }
    let total = acc;
    let mut out = Vec::with_capacity(QUANTILE_SAMPLES);
    let mut cell = 0;
    for k in 0..QUANTILE_SAMPLES {
        let q = (k as f64 + 0.5) / QUANTILE_SAMPLES as f64 * total;
        while cell + 1 < masses.len() && cdf[cell + 1] < q {
            cell += 1;
        }
        let frac = if masses[cell] > 0.0 { ((q - cdf[cell]) / masses[cell]).clamp(0.0, 1.0) } else { 0.5 };
        out.push(left + (cell as f64 + frac) * dx);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::potentials::Potential;

    #[test]
    fn hminus1_is_linear_in_perturbation() {
        let grid = build_grid(Potential::harmonic(), 8.0, 256).unwrap();
        let base = DensityField::constant(&grid, 1.0);
        let d1 = oracle_hminus1(&base, &DensityField::from_fn(&grid, |x| 1.0 + 1e-3 * x).unwrap()).unwrap();
        let d2 = oracle_hminus1(&base, &DensityField::from_fn(&grid, |x| 1.0 + 2e-3 * x).unwrap()).unwrap();
        assert!((d2.distance - 2.0 * d1.distance).abs() < 1e-8 * d1.distance.max(1e-300) + 1e-14);
        // Delta_gamma x = -x for the harmonic weight, so u = -eps x up to O(dx^2).
        assert!((d1.distance - 1e-3).abs() < 1e-5);
    }

    #[test]
    fn hminus1_potential_solves_the_equation() {
        let grid = build_grid(Potential::harmonic(), 6.0, 128).unwrap();
        let r0 = DensityField::from_fn(&grid, |x| 1.0 + 0.3 * (x * 0.8).sin()).unwrap().normalized().unwrap();
        let r1 = DensityField::from_fn(&grid, |x| 1.0 + 0.2 * (x * 0.5).cos()).unwrap().normalized().unwrap();
        let h = oracle_hminus1(&r0, &r1).unwrap();
        let u = DensityField::new(&grid, h.potential.clone()).unwrap();
        let lap = u.laplacian();
        for i in 0..grid.len() {
            let target = r1.values()[i] - r0.values()[i];
            assert!((lap.values()[i] - target).abs() < 1e-7 * (1.0 + target.abs()));
        }
        assert!(h.distance > 0.0);
    }

    #[test]
    fn quantile_oracle_on_gaussians() {
        let grid = build_grid(Potential::harmonic(), 8.0, 1024).unwrap();
        let gauss = |m: f64, s: f64| {
            DensityField::from_fn(&grid, |x| {
                (-(x - m).powi(2) / (2.0 * s * s) + 0.5 * x * x).exp() / s
            })
            .unwrap()
            .normalized()
            .unwrap()
        };
        let a = gauss(0.0, 1.0);
        assert!(oracle_w2_quantile(&a, &a).unwrap() < 1e-12);
        assert!((oracle_w2_quantile(&a, &gauss(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-3);
        assert!((oracle_w2_quantile(&a, &gauss(0.0, 1.1)).unwrap() - 0.1).abs() < 2e-3);
        let half = DensityField::constant(&grid, 0.5);
        assert!(oracle_w2_quantile(&a, &half).is_err());
    }
}

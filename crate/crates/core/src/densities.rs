//! Named density families, sampled as unit-mass densities relative to `gamma`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::grid::{DensityField, GammaGrid, VectorField};

/// Length scale of the random band-limited families.
const RANDOM_SCALE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DensitySpec {
    Constant,
    /// `exp(a x)`; for the harmonic potential `rho gamma = N(a, 1)`.
    Tilted { a: f64 },
    /// Lebesgue Gaussian `N(mean, std^2)` divided by `gamma`.
    Gaussian { mean: f64, std: f64 },
    /// `1 + height * exp(-(x - center)^2 / (2 width^2))`.
    Bump { center: f64, width: f64, height: f64 },
    /// `exp(amplitude * sum_k (a_k cos + b_k sin)(k pi x / 3) / k)` with
    /// coefficients uniform in `[-1, 1]`.
    RandomSmooth { seed: u64, modes: usize, amplitude: f64 },
}

impl DensitySpec {
    pub fn name(&self) -> String {
        match self {
            DensitySpec::Constant => "constant".into(),
            DensitySpec::Tilted { a } => format!("tilted(a={a})"),
            DensitySpec::Gaussian { mean, std } => format!("gaussian(mean={mean},std={std})"),
            DensitySpec::Bump { center, width, height } => format!("bump(c={center},w={width},h={height})"),
            DensitySpec::RandomSmooth { seed, modes, amplitude } => {
                format!("random(seed={seed},modes={modes},amp={amplitude})")
            }
        }
    }

    /// Log of the unnormalised density at each node.
    fn log_values(&self, grid: &GammaGrid) -> Result<Vec<f64>> {
        let xs = grid.nodes();
        Ok(match self {
            DensitySpec::Constant => vec![0.0; xs.len()],
            DensitySpec::Tilted { a } => {
                finite(*a, "a")?;
                xs.iter().map(|x| a * x).collect()
            }
            DensitySpec::Gaussian { mean, std } => {
                finite(*mean, "mean")?;
                if !(*std > 0.0) || !std.is_finite() {
                    return Err(KfpError::InvalidInput(format!("gaussian std must be positive, got {std}")));
                }
                let pot = grid.potential();
                xs.iter().map(|&x| -(x - mean).powi(2) / (2.0 * std * std) - std.ln() + pot.eval(x)).collect()
            }
            DensitySpec::Bump { center, width, height } => {
                finite(*center, "center")?;
                if !(*width > 0.0) || !(*height > -1.0) || !height.is_finite() {
                    return Err(KfpError::InvalidInput(format!(
                        "bump needs width > 0 and height > -1, got width={width} height={height}"
                    )));
                }
                xs.iter()
                    .map(|&x| (1.0 + height * (-(x - center).powi(2) / (2.0 * width * width)).exp()).ln())
                    .collect()
            }
            DensitySpec::RandomSmooth { seed, modes, amplitude } => {
                finite(*amplitude, "amplitude")?;
                let c = random_coefficients(*seed, *modes);
                xs.iter().map(|&x| amplitude * fourier(&c, x)).collect()
            }
        })
    }

    /// Unit-mass density on `grid`.
    pub fn sample(&self, grid: &Arc<GammaGrid>) -> Result<DensityField> {
        let logs = self.log_values(grid)?;
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let vals: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        DensityField::new(grid, vals)?.normalized()
    }
}

fn finite(v: f64, name: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(KfpError::InvalidInput(format!("{name} must be finite, got {v}")))
    }
}

fn random_coefficients(seed: u64, modes: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..modes).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn fourier(coeffs: &[(f64, f64)], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let k = (k + 1) as f64;
            let arg = k * PI * x / RANDOM_SCALE;
            (a * arg.cos() + b * arg.sin()) / k
        })
        .sum()
}

/// Random band-limited flux `amplitude * sum_k (...)` on the faces, damped
/// by `exp(-x^2/8)` so the action stays moderate in the tails.
pub fn random_flux(grid: &Arc<GammaGrid>, seed: u64, modes: usize, amplitude: f64) -> Result<VectorField> {
    finite(amplitude, "amplitude")?;
    let c = random_coefficients(seed ^ 0x5eed_f1u64, modes);
    VectorField::from_fn(grid, |x| amplitude * fourier(&c, x) * (-x * x / 8.0).exp())
}

/// Deterministic mixed battery: random band-limited densities, tilted
/// exponentials and bumps, in a fixed rotation.
pub fn battery(seed: u64, count: usize) -> Vec<DensitySpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| match k % 3 {
            0 => DensitySpec::RandomSmooth {
                seed: rng.gen(),
                modes: rng.gen_range(2..=6),
                amplitude: rng.gen_range(0.2..1.0),
            },
            1 => DensitySpec::Tilted { a: rng.gen_range(-1.0..1.0) },
            _ => DensitySpec::Bump {
                center: rng.gen_range(-1.5..1.5),
                width: rng.gen_range(0.3..1.5),
                height: rng.gen_range(-0.8..3.0),
            },
        })
        .collect()
}

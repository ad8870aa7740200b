//! Experiment configuration: one TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use kfp_core::densities::DensitySpec;
use kfp_core::flow::TimeScheme;
use kfp_core::geodesic::{GeodesicParams, KAPPA_LADDER, MIN_TIME_SLICES};
use kfp_core::grid::MIN_NODES;
use kfp_core::verify::{DistanceSettings, FlowSettings, FluxSpec, Setup};
use kfp_core::{EntropyModel, Potential};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Environment variable overriding `output`.
pub const OUTPUT_ENV: &str = "KFP_LAB_OUTPUT";

/// Names accepted in `verify.checks`.
pub const CHECKS: [&str; 7] = ["entropy_chain", "action_decay", "poincare", "talagrand", "contraction", "evi", "slope"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    pub potential: PotentialConfig,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub flow: FlowConfig,
    pub geodesic: GeodesicConfig,
    pub distance: DistanceConfig,
    pub verify: VerifyConfig,
    pub grid_study: GridStudyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("kfp-out"),
            potential: PotentialConfig::default(),
            model: ModelConfig::default(),
            grid: GridConfig::default(),
            flow: FlowConfig::default(),
            geodesic: GeodesicConfig::default(),
            distance: DistanceConfig::default(),
            verify: VerifyConfig::default(),
            grid_study: GridStudyConfig::default(),
        }
    }
}

/// `name` is one of `harmonic`, `quartic_blend` (uses `c`), `soft_abs`
/// (uses `eps`) or `yosida_abs` (uses `yosida_n` and `lambda`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub name: String,
    pub c: f64,
    pub eps: f64,
    pub yosida_n: f64,
    pub lambda: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self { name: "harmonic".into(), c: 0.1, eps: 0.5, yosida_n: 50.0, lambda: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Mobility exponent, `h(rho) = rho^alpha`.
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 8.0, n: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub t_final: f64,
    pub dt: f64,
    pub scheme: TimeScheme,
    pub checkpoints: usize,
    pub initial: DensitySpec,
    pub flux: FluxSpec,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t_final: 2.0,
            dt: 1e-3,
            scheme: TimeScheme::ImplicitEuler,
            checkpoints: 20,
            initial: DensitySpec::Tilted { a: 0.5 },
            flux: FluxSpec::Random { seed: 5, modes: 4, amplitude: 0.5 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicConfig {
    pub time_slices: usize,
    pub kappa_ladder: Vec<f64>,
    pub tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        let p = GeodesicParams::default();
        Self {
            time_slices: p.time_slices,
            kappa_ladder: KAPPA_LADDER.to_vec(),
            tol: p.tol,
            gap_tol: p.gap_tol,
            max_iter: p.max_iter,
        }
    }
}

/// Endpoints of `distance`, also the pair used by `contraction`, `evi` and
/// the geodesic slope check. `mass0` and `mass1` rescale the unit-mass samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    pub rho0: DensitySpec,
    pub rho1: DensitySpec,
    pub mass0: f64,
    pub mass1: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            rho0: DensitySpec::Gaussian { mean: -0.5, std: 1.0 },
            rho1: DensitySpec::Gaussian { mean: 0.5, std: 1.0 },
            mass0: 1.0,
            mass1: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub checks: Vec<String>,
    pub battery_size: usize,
    pub seed: u64,
    pub contraction_times: Vec<f64>,
    /// Relative allowance of the contraction check.
    pub contraction_tol: f64,
    pub evi_times: Vec<f64>,
    pub delta_t: f64,
    /// Slices of the flow path used by the slope check.
    pub slope_slices: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            checks: CHECKS.iter().map(|s| s.to_string()).collect(),
            battery_size: 100,
            seed: 11,
            contraction_times: vec![0.1, 0.5, 1.0],
            contraction_tol: 0.03,
            evi_times: (0..10).map(|k| 0.1 * k as f64).collect(),
            delta_t: 1e-2,
            slope_slices: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridStudyConfig {
    pub sizes: Vec<usize>,
    /// Also solve the `distance` pair on every grid.
    pub distance: bool,
}

impl Default for GridStudyConfig {
    fn default() -> Self {
        Self { sizes: vec![64, 128, 256, 512], distance: false }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

/// `t` is an integer multiple of `step` up to rounding.
fn multiple_of(t: f64, step: f64) -> bool {
    let q = t / step;
    (q - q.round()).abs() < 1e-6
}

impl ExperimentConfig {
    /// Reads `path`, applies the overrides in order and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces `output` with the environment override when set.
    pub fn with_env_output(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|d| !d.is_empty()) {
            self.output = PathBuf::from(dir);
        }
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let a = self.model.alpha;
        if !(0.0..=1.0).contains(&a) {
            return Err(invalid("model.alpha", format!("must lie in [0, 1], got {a}")));
        }
        self.potential()?;
        positive("grid.half_width", self.grid.half_width)?;
        if self.grid.n < MIN_NODES {
            return Err(invalid("grid.n", format!("must be at least {MIN_NODES}, got {}", self.grid.n)));
        }
        positive("flow.dt", self.flow.dt)?;
        positive("flow.t_final", self.flow.t_final)?;
        if !multiple_of(self.flow.t_final, self.flow.dt) {
            return Err(invalid("flow.t_final", format!("must be a multiple of flow.dt = {}", self.flow.dt)));
        }
        if self.flow.checkpoints == 0 {
            return Err(invalid("flow.checkpoints", "must be at least 1"));
        }
        let g = &self.geodesic;
        if g.time_slices < MIN_TIME_SLICES {
            return Err(invalid("geodesic.time_slices", format!("must be at least {MIN_TIME_SLICES}, got {}", g.time_slices)));
        }
        if g.kappa_ladder.is_empty() {
            return Err(invalid("geodesic.kappa_ladder", "must not be empty"));
        }
        for &k in &g.kappa_ladder {
            positive("geodesic.kappa_ladder", k)?;
        }
        positive("geodesic.tol", g.tol)?;
        positive("geodesic.gap_tol", g.gap_tol)?;
        if g.max_iter == 0 {
            return Err(invalid("geodesic.max_iter", "must be at least 1"));
        }
        positive("distance.mass0", self.distance.mass0)?;
        positive("distance.mass1", self.distance.mass1)?;

        let v = &self.verify;
        for c in &v.checks {
            if !CHECKS.contains(&c.as_str()) {
                return Err(invalid("verify.checks", format!("unknown check {c:?}; known: {}", CHECKS.join(", "))));
            }
        }
        if v.battery_size == 0 {
            return Err(invalid("verify.battery_size", "must be at least 1"));
        }
        let coarse_dt = 2.0 * self.flow.dt;
        positive("verify.delta_t", v.delta_t)?;
        if !multiple_of(v.delta_t, coarse_dt) {
            return Err(invalid("verify.delta_t", format!("must be a multiple of 2 * flow.dt = {coarse_dt}")));
        }
        for (key, times) in [("verify.contraction_times", &v.contraction_times), ("verify.evi_times", &v.evi_times)] {
            if times.is_empty() {
                return Err(invalid(key, "must not be empty"));
            }
            if let Some(t) = times.iter().find(|&&t| !(t >= 0.0) || !multiple_of(t, coarse_dt)) {
                return Err(invalid(key, format!("{t} is not a nonnegative multiple of 2 * flow.dt = {coarse_dt}")));
            }
        }
        if !(v.contraction_tol >= 0.0) {
            return Err(invalid("verify.contraction_tol", format!("must be >= 0, got {}", v.contraction_tol)));
        }
        if v.slope_slices < 2 || !multiple_of(self.flow.t_final / (2 * v.slope_slices) as f64, self.flow.dt) {
            return Err(invalid(
                "verify.slope_slices",
                format!("need >= 2 slices whose half steps are multiples of flow.dt, got {}", v.slope_slices),
            ));
        }
        if self.grid_study.sizes.is_empty() {
            return Err(invalid("grid_study.sizes", "must not be empty"));
        }
        if let Some(&n) = self.grid_study.sizes.iter().find(|&&n| n < MIN_NODES) {
            return Err(invalid("grid_study.sizes", format!("{n} is below the minimum of {MIN_NODES} nodes")));
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<Potential, CliError> {
        let p = &self.potential;
        let built = match p.name.as_str() {
            "harmonic" => Ok(Potential::harmonic()),
            "quartic_blend" => Potential::quartic_blend(p.c),
            "soft_abs" => Potential::soft_abs(p.eps),
            "yosida_abs" => Potential::yosida(Potential::abs(), p.yosida_n, p.lambda),
            other => {
                return Err(invalid(
                    "potential.name",
                    format!("unknown potential {other:?}; known: harmonic, quartic_blend, soft_abs, yosida_abs"),
                ))
            }
        };
        built.map_err(|e| invalid("potential", e))
    }

    pub fn model(&self) -> Result<EntropyModel, CliError> {
        EntropyModel::power(self.model.alpha).map_err(|e| invalid("model.alpha", e))
    }

    pub fn setup(&self) -> Result<Setup, CliError> {
        Ok(Setup::new(self.potential()?, self.model()?, self.grid.half_width, self.grid.n))
    }

    pub fn flow_settings(&self) -> FlowSettings {
        FlowSettings {
            t_final: self.flow.t_final,
            dt: self.flow.dt,
            scheme: self.flow.scheme,
            checkpoints: self.flow.checkpoints,
        }
    }

    pub fn geodesic_params(&self) -> GeodesicParams {
        let g = &self.geodesic;
        GeodesicParams {
            time_slices: g.time_slices,
            kappa: g.kappa_ladder.iter().copied().fold(f64::INFINITY, f64::min),
            tol: g.tol,
            gap_tol: g.gap_tol,
            max_iter: g.max_iter,
            ..GeodesicParams::default()
        }
    }

    pub fn distance_settings(&self) -> DistanceSettings {
        DistanceSettings { params: self.geodesic_params(), ladder: self.geodesic.kappa_ladder.clone() }
    }

    /// SHA-256 of the canonical JSON form, without the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `section.key=value`; the value is read as a TOML value, or as a string
/// when it does not parse.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {spec:?} is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override {spec:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("split yields a key");
    let mut cur = table;
    for (depth, k) in parents.iter().enumerate() {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override {spec:?}: {} is not a section", keys[..=depth].join(".")))
        })?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line to stderr
//! (uncaptured) and the test fails if any criterion does.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use kfp_core::densities::{battery, random_flux, DensitySpec};
use kfp_core::flow::{commutation_defect, evolve, Checkpoints, KfpSolver, TimeScheme};
use kfp_core::geodesic::{distance_kappa_extrapolated, oracle_hminus1, oracle_w2_quantile, GeodesicParams, KAPPA_LADDER};
use kfp_core::grid::{inner_product, sbp_residual};
use kfp_core::verify::*;
use kfp_core::{build_grid, DensityField, EntropyModel, GammaGrid, Potential};

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    start: Instant,
    failures: Vec<String>,
    checks: usize,
}

impl Criterion {
    fn new(id: usize, name: &'static str, limit_secs: u64) -> Self {
        Self { id, name, limit: Duration::from_secs(limit_secs), start: Instant::now(), failures: Vec::new(), checks: 0 }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn within(&mut self, label: &str, value: f64, reference: f64, tol: f64) {
        let rel = (value / reference - 1.0).abs();
        self.check(rel <= tol, || format!("{label}: {value:.6e} vs {reference:.6e} (rel {rel:.2e} > {tol})"));
    }

    fn report(&mut self, r: &InequalityReport) {
        self.check(r.status == Status::Pass, || format!("{} is {:?}\n{}", r.name, r.status, r.to_table()));
    }

    fn finish(mut self) -> bool {
        let elapsed = self.start.elapsed();
        let limit = self.limit;
        self.check(elapsed <= limit, || format!("runtime {elapsed:.1?} over {limit:?}"));
        let ok = self.failures.is_empty();
        let line = format!(
            "{} {}. {} ({} checks, {:.1?}, limit {:?})\n",
            if ok { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.checks,
            elapsed,
            self.limit
        );
        let mut err = std::io::stderr().lock();
        let _ = err.write_all(line.as_bytes());
        for f in &self.failures {
            let _ = writeln!(err, "    {f}");
        }
        ok
    }
}

fn model(alpha: f64) -> EntropyModel {
    EntropyModel::power(alpha).unwrap()
}

fn harmonic(alpha: f64, half_width: f64, n: usize) -> Setup {
    Setup::new(Potential::harmonic(), model(alpha), half_width, n)
}

fn tilted(a: f64) -> DensitySpec {
    DensitySpec::Tilted { a }
}

fn random(seed: u64) -> DensitySpec {
    DensitySpec::RandomSmooth { seed, modes: 4, amplitude: 0.6 }
}

fn find<'a>(reports: &'a [InequalityReport], name: &str) -> &'a InequalityReport {
    reports.iter().find(|r| r.name == name).unwrap_or_else(|| panic!("no report {name}"))
}

fn ou_exactness() -> bool {
    let mut c = Criterion::new(1, "Ornstein-Uhlenbeck exactness", 10);
    let a = 0.5;
    let s = harmonic(1.0, 8.0, 512);
    let rho = tilted(a).sample(&s.grid().unwrap()).unwrap();
    let trace = evolve(&rho, None, 2.0, 1e-3, TimeScheme::ImplicitEuler, &s.model, &Checkpoints::Uniform(20)).unwrap();
    let d0 = &trace.diagnostics[0];
    // Relative entropy and Fisher information of N(a, 1) against N(0, 1).
    c.within("Psi(rho_0)", d0.entropy, 0.5 * a * a, 0.02);
    c.within("P(rho_0)", d0.production, a * a, 0.02);
    for d in &trace.diagnostics {
        let e = (2.0 * d.t).exp();
        c.within(&format!("Psi e^2t at t={}", d.t), d.entropy * e, d0.entropy, 0.02);
        c.within(&format!("P e^2t at t={}", d.t), d.production * e, d0.production, 0.02);
    }
    c.finish()
}

fn poincare() -> bool {
    let mut c = Criterion::new(2, "generalized Poincare inequality", 30);
    let specs = battery(11, 100);
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = verify_poincare(&harmonic(alpha, 8.0, 256), &specs).unwrap();
        c.check(r.samples.len() == 100, || format!("alpha={alpha}: {} samples", r.samples.len()));
        c.report(&r);
    }
    let r = verify_poincare(&harmonic(1.0, 8.0, 256), &[tilted(0.5)]).unwrap();
    let x = &r.samples[0];
    c.within("tilted Psi vs P / 2", x.lhs, x.rhs, 0.02);
    c.finish()
}

fn distance_oracles() -> bool {
    let mut c = Criterion::new(3, "distance oracles", 180);
    let g = build_grid(Potential::harmonic(), 6.0, 128).unwrap();
    let specs = battery(21, 20);
    let p = GeodesicParams::default();
    for alpha in [1.0, 0.0] {
        let m = model(alpha);
        for k in 0..10 {
            let a = specs[2 * k].sample(&g).unwrap();
            let b = specs[2 * k + 1].sample(&g).unwrap();
            let l = distance_kappa_extrapolated(&a, &b, &m, &p, &KAPPA_LADDER).unwrap();
            let oracle = if alpha == 1.0 {
                oracle_w2_quantile(&a, &b).unwrap()
            } else {
                oracle_hminus1(&a, &b).unwrap().distance
            };
            c.within(&format!("alpha={alpha} pair {k}"), l.distance, oracle, 0.02);
            for pt in &l.points {
                let w2 = pt.distance * pt.distance;
                c.check(pt.converged && pt.gap <= 1e-5 * w2, || {
                    format!("alpha={alpha} pair {k} kappa={}: gap {:.2e} vs W^2 {w2:.3e}", pt.kappa, pt.gap)
                });
            }
        }
    }
    c.finish()
}

fn contraction() -> bool {
    let mut c = Criterion::new(4, "contraction", 240);
    let ds = DistanceSettings::default();
    let flow = FlowSettings { t_final: 1.0, dt: 1e-3, ..Default::default() };
    let times = [0.1, 0.5, 1.0];
    let r = verify_contraction(&harmonic(1.0, 6.0, 128), &tilted(0.5), &tilted(-0.5), &times, &ds, &flow, 0.03).unwrap();
    c.report(&r);
    // rhs = e^{-t} W(0), so lhs / rhs is the ratio W(t) / W(0) against e^{-t}.
    for x in r.samples.iter().filter(|x| x.x > 0.0) {
        c.within(&format!("W(t)/W(0) at t={}", x.x), x.lhs, x.rhs, 0.03);
    }
    let s = harmonic(0.5, 6.0, 128);
    for (a, b) in [(random(1), random(2)), (random(3), DensitySpec::Bump { center: 0.5, width: 0.7, height: 2.0 })] {
        c.report(&verify_contraction(&s, &a, &b, &times, &ds, &flow, 0.03).unwrap());
    }
    c.finish()
}

fn action_decay() -> bool {
    let mut c = Criterion::new(5, "action decay with the beta term", 30);
    let flow = FlowSettings { t_final: 2.0, dt: 1e-3, checkpoints: 20, ..Default::default() };
    let s = harmonic(0.5, 8.0, 256);
    let w0 = FluxSpec::Random { seed: 5, modes: 4, amplitude: 0.5 };
    let reports = verify_action_decay(&s, &random(3), &w0, &flow).unwrap();
    let beta = find(&reports, "action_decay_beta");
    c.check(beta.samples.len() >= 20, || format!("{} checkpoints", beta.samples.len()));
    c.report(beta);
    c.check(beta.margin_min >= 0.0, || format!("margin_min {:.3e}", beta.margin_min));

    let s = harmonic(1.0, 8.0, 256);
    let reports = verify_action_decay(&s, &tilted(0.5), &FluxSpec::DensityGradient, &flow).unwrap();
    let plain = find(&reports, "action_decay");
    c.report(plain);
    for x in &plain.samples {
        c.within(&format!("Phi / bound at t={}", x.x), x.lhs, x.rhs, 0.02);
        // Phi(rho_t, D rho_t) is the production a^2 e^{-2t}.
        c.within(&format!("Phi at t={}", x.x), x.lhs, 0.25 * (-2.0 * x.x).exp(), 0.02);
    }
    c.finish()
}

fn evi() -> bool {
    let mut c = Criterion::new(6, "EVI and regularization", 180);
    let s = harmonic(1.0, 6.0, 128);
    let ds = DistanceSettings::default();
    let flow = FlowSettings { t_final: 1.0, dt: 1e-3, ..Default::default() };
    let times: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();
    let reports = verify_evi(&s, &tilted(0.5), &tilted(-0.5), &times, 1e-2, &ds, &flow).unwrap();
    for name in ["evi", "regularization_entropy", "regularization_production"] {
        c.report(find(&reports, name));
    }
    let e = find(&reports, "evi");
    c.check(e.samples.len() == 10, || format!("{} EVI samples", e.samples.len()));
    c.finish()
}

fn sym_defect(grid: &Arc<GammaGrid>, f: &DensityField, g: &DensityField, steps: usize) -> f64 {
    let run = |x: &DensityField| {
        let mut solver = KfpSolver::new(grid, 1e-3, TimeScheme::ImplicitEuler).unwrap();
        let mut v = x.values().to_vec();
        for _ in 0..steps {
            solver.step_density(&mut v).unwrap();
        }
        DensityField::new(grid, v).unwrap()
    };
    let a = inner_product(&run(f), g).unwrap();
    let b = inner_product(f, &run(g)).unwrap();
    (a - b).abs() / a.abs().max(b.abs())
}

fn structural() -> bool {
    let mut c = Criterion::new(7, "structural suites", 60);
    for n in [64, 128, 256, 512] {
        let g = build_grid(Potential::quartic_blend(0.1).unwrap(), 6.0, n).unwrap();
        for seed in 0..5 {
            let rho = random(seed).sample(&g).unwrap();
            let w = random_flux(&g, seed + 100, 5, 1.0).unwrap();
            let r = sbp_residual(&rho, &w).unwrap();
            c.check(r <= 1e-12, || format!("SBP residual {r:.2e} at n={n}"));
        }
    }

    let g = build_grid(Potential::harmonic(), 8.0, 256).unwrap();
    for spec in [random(7), DensitySpec::Bump { center: -1.0, width: 0.5, height: 5.0 }] {
        let rho0 = spec.sample(&g).unwrap();
        let (m0, lo, hi) = (rho0.mass(), rho0.min(), rho0.max());
        let mut solver = KfpSolver::new(&g, 1e-3, TimeScheme::ImplicitEuler).unwrap();
        let mut v = rho0.values().to_vec();
        let (mut drift, mut below, mut above) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..2000 {
            solver.step_density(&mut v).unwrap();
            let f = DensityField::new(&g, v.clone()).unwrap();
            drift = drift.max((f.mass() - m0).abs());
            below = below.max(lo - f.min());
            above = above.max(f.max() - hi);
        }
        c.check(drift <= 1e-10, || format!("{}: mass drift {drift:.2e}", spec.name()));
        // Round-off only: a few ulps of the largest value.
        let ulps = 8.0 * f64::EPSILON * hi;
        c.check(below <= ulps && above <= ulps, || format!("{}: bounds exceeded by {below:.2e} / {above:.2e}", spec.name()));
    }

    let bump = DensitySpec::Bump { center: 0.3, width: 0.7, height: 2.0 };
    let defects: Vec<f64> = [64, 128, 256, 512]
        .iter()
        .map(|&n| {
            let g = build_grid(Potential::quartic_blend(0.1).unwrap(), 6.0, n).unwrap();
            commutation_defect(&bump.sample(&g).unwrap(), 0.5, 1e-3, TimeScheme::ImplicitEuler).unwrap()
        })
        .collect();
    for (k, pair) in defects.windows(2).enumerate() {
        let ratio = pair[0] / pair[1];
        let n = 128 << k;
        c.check((3.5..=4.5).contains(&ratio), || format!("commutation ratio {ratio:.3} at n={n}"));
    }

    let f = random(11).sample(&g).unwrap();
    let h = DensitySpec::Bump { center: 1.0, width: 0.8, height: 3.0 }.sample(&g).unwrap();
    let d = sym_defect(&g, &f, &h, 500);
    c.check(d <= 1e-10, || format!("symmetry defect {d:.2e}"));
    c.finish()
}

fn talagrand() -> bool {
    let mut c = Criterion::new(8, "Talagrand and production-distance", 120);
    let ds = DistanceSettings::default();
    let flow = FlowSettings { t_final: 2.0, dt: 1e-3, ..Default::default() };
    let reports = verify_talagrand_and_production_distance(&harmonic(1.0, 6.0, 128), &tilted(0.5), &ds, &flow).unwrap();
    for r in &reports {
        c.report(r);
        let x = &r.samples[0];
        c.within(&format!("{} lhs / rhs", r.name), x.lhs, x.rhs, 0.02);
    }
    for (alpha, seed) in [(1.0, 4), (0.5, 4), (0.5, 9)] {
        for r in verify_talagrand_and_production_distance(&harmonic(alpha, 6.0, 128), &random(seed), &ds, &flow).unwrap() {
            c.report(&r);
        }
    }
    c.finish()
}

#[test]
fn acceptance_criteria() {
    let results = [
        ou_exactness(),
        poincare(),
        distance_oracles(),
        contraction(),
        action_decay(),
        evi(),
        structural(),
        talagrand(),
    ];
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(k, _)| k + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

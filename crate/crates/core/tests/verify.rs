use kfp_core::densities::DensitySpec;
use kfp_core::geodesic::{solve_geodesic, GeodesicParams};
use kfp_core::verify::*;
use kfp_core::{EntropyModel, Potential};

fn harmonic(alpha: f64, n: usize) -> Setup {
    Setup::new(Potential::harmonic(), EntropyModel::power(alpha).unwrap(), 6.0, n)
}

fn short_flow() -> FlowSettings {
    FlowSettings { t_final: 1.0, dt: 2e-3, checkpoints: 10, ..Default::default() }
}

#[test]
fn lambda_free_regularisation_holds_for_soft_abs() {
    let s = Setup::new(Potential::soft_abs(0.5).unwrap(), EntropyModel::power(0.5).unwrap(), 10.0, 128);
    let bump = DensitySpec::Bump { center: 1.0, width: 0.6, height: 3.0 };
    let reports = verify_entropy_chain(&s, &bump, &short_flow()).unwrap();
    let eq66 = reports.iter().find(|r| r.name == "production_entropy").unwrap();
    assert_eq!(eq66.status, Status::Pass, "{}", eq66.to_table());
    for r in &reports {
        assert_ne!(r.status, Status::Fail, "{}", r.to_table());
    }
    let skipped = verify_poincare(&s, &[bump.clone()]).unwrap();
    assert_eq!(skipped.status, Status::Skipped);
    let ds = DistanceSettings::default();
    for r in verify_talagrand_and_production_distance(&s, &bump, &ds, &short_flow()).unwrap() {
        assert_eq!(r.status, Status::Skipped);
    }
}

#[test]
fn flow_path_is_the_slope_equality_case() {
    let s = harmonic(1.0, 128);
    let g = s.grid().unwrap();
    let rho0 = DensitySpec::RandomSmooth { seed: 8, modes: 3, amplitude: 0.6 }.sample(&g).unwrap();
    let flow = FlowSettings { dt: 1e-3, ..short_flow() };
    let path = flow_path(&rho0, &s.model, 0.5, 10, &flow).unwrap();
    let r = verify_entropy_slope_bound(&path, &s.model).unwrap();
    assert_eq!(r.status, Status::Pass, "{}", r.to_table());
    for x in &r.samples {
        assert!(x.lhs >= 0.97 * x.rhs, "{}", r.to_table());
    }
}

#[test]
fn geodesic_path_satisfies_the_slope_bound() {
    let s = harmonic(0.5, 64);
    let g = s.grid().unwrap();
    let a = DensitySpec::RandomSmooth { seed: 2, modes: 4, amplitude: 0.6 }.sample(&g).unwrap();
    let b = DensitySpec::Tilted { a: -0.4 }.sample(&g).unwrap();
    let res = solve_geodesic(&a, &b, &s.model, &GeodesicParams::default()).unwrap();
    let r = verify_entropy_slope_bound(&res.path, &s.model).unwrap();
    assert_eq!(r.status, Status::Pass, "{}", r.to_table());
}

#[test]
fn constant_path_is_trivial() {
    let s = harmonic(0.5, 64);
    let g = s.grid().unwrap();
    let one = DensitySpec::Constant.sample(&g).unwrap();
    let res = solve_geodesic(&one, &one, &s.model, &GeodesicParams::default()).unwrap();
    let r = verify_entropy_slope_bound(&res.path, &s.model).unwrap();
    assert_eq!(r.status, Status::Pass);
    assert!(r.lhs().iter().chain(&r.rhs()).all(|v| v.abs() < 1e-12));
}

#[test]
fn transport_checks_vanish_on_equilibrium_data() {
    let s = harmonic(1.0, 64);
    let ds = DistanceSettings::default();
    let flow = FlowSettings { dt: 1e-3, ..short_flow() };
    let one = DensitySpec::Constant;
    let c = verify_contraction(&s, &one, &one, &[0.1, 0.5], &ds, &flow, 0.03).unwrap();
    assert_eq!(c.status, Status::Pass, "{}", c.to_table());
    assert!(c.lhs().iter().all(|v| *v == 0.0));
    for r in verify_talagrand_and_production_distance(&s, &one, &ds, &flow).unwrap() {
        assert_eq!(r.status, Status::Pass, "{}", r.to_table());
        assert!(r.lhs().iter().all(|v| v.abs() < 1e-12));
    }
    for r in verify_evi(&s, &one, &one, &[0.0, 0.2], 1e-2, &ds, &flow).unwrap() {
        assert_eq!(r.status, Status::Pass, "{}", r.to_table());
    }
}

#[test]
fn under_resolved_grid_is_reported() {
    let s = harmonic(1.0, 16);
    assert!(s.coarse().is_none());
    let flow = FlowSettings { t_final: 0.5, dt: 1e-2, checkpoints: 5, ..Default::default() };
    let reports = verify_entropy_chain(&s, &DensitySpec::Tilted { a: 1.5 }, &flow).unwrap();
    assert!(reports.iter().all(|r| r.notes.iter().any(|n| n.contains("grid"))));
}

use std::sync::Arc;

use kfp_core::densities::DensitySpec;
use kfp_core::geodesic::{
    constant_speed_check, distance_kappa_extrapolated, oracle_w2_quantile, solve_geodesic, GeodesicParams,
    SpaceTime, KAPPA_LADDER,
};
use kfp_core::{build_grid, DensityField, EntropyModel, GammaGrid, Potential};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize) -> Arc<GammaGrid> {
    build_grid(Potential::harmonic(), 6.0, n).unwrap()
}

fn random(g: &Arc<GammaGrid>, seed: u64) -> DensityField {
    DensitySpec::RandomSmooth { seed, modes: 4, amplitude: 0.6 }.sample(g).unwrap()
}

#[test]
fn symmetric_within_certified_gaps() {
    let g = grid(64);
    let model = EntropyModel::power(0.5).unwrap();
    let (a, b) = (random(&g, 1), random(&g, 2));
    let p = GeodesicParams::default();
    let ab = solve_geodesic(&a, &b, &model, &p).unwrap();
    let ba = solve_geodesic(&b, &a, &model, &p).unwrap();
    assert!(ab.converged && ba.converged);
    // Both energies lie within their gaps above the same discrete minimum.
    assert!((ab.energy() - ba.energy()).abs() <= ab.gap + ba.gap, "{} vs {}", ab.energy(), ba.energy());
}

#[test]
fn triangle_inequality_on_random_triples() {
    let g = grid(64);
    let model = EntropyModel::power(0.5).unwrap();
    let p = GeodesicParams::default();
    for k in 0..3 {
        let d: Vec<DensityField> = (0..3).map(|i| random(&g, 10 * k + i)).collect();
        let w = |i: usize, j: usize| solve_geodesic(&d[i], &d[j], &model, &p).unwrap();
        let (ab, bc, ac) = (w(0, 1), w(1, 2), w(0, 2));
        let slack = 3.0 * [&ab, &bc, &ac].iter().map(|r| r.gap / r.distance).fold(0.0, f64::max);
        assert!(ac.distance <= ab.distance + bc.distance + slack, "{} > {} + {}", ac.distance, ab.distance, bc.distance);
    }
}

#[test]
fn lifted_distance_grows_as_kappa_shrinks() {
    let g = grid(64);
    let model = EntropyModel::power(0.5).unwrap();
    let (a, b) = (
        DensitySpec::Bump { center: -1.0, width: 0.5, height: 4.0 }.sample(&g).unwrap(),
        DensitySpec::Bump { center: 1.0, width: 0.5, height: 4.0 }.sample(&g).unwrap(),
    );
    let runs: Vec<_> = KAPPA_LADDER
        .iter()
        .map(|&kappa| solve_geodesic(&a, &b, &model, &GeodesicParams { kappa, ..Default::default() }).unwrap())
        .collect();
    for pair in runs.windows(2) {
        let (big, small) = (&pair[0], &pair[1]);
        assert!(small.energy() >= big.lower_bound, "kappa {} -> {}", big.kappa, small.kappa);
    }
}

#[test]
fn feasible_paths_are_above_the_certificate() {
    let g = grid(48);
    let model = EntropyModel::power(0.75).unwrap();
    let (a, b) = (random(&g, 5), random(&g, 6));
    let p = GeodesicParams::default();
    let res = solve_geodesic(&a, &b, &model, &p).unwrap();
    let lift = |d: &DensityField| d.values().iter().map(|v| v + p.kappa).collect::<Vec<_>>();
    let (la, lb) = (lift(&a), lift(&b));
    let mut st = SpaceTime::new(&g, p.time_slices);
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut rho = vec![0.0; st.rho_len()];
        for j in 0..=p.time_slices {
            let s = j as f64 / p.time_slices as f64;
            let bend = rng.gen_range(0.0..0.5) * (std::f64::consts::PI * s).sin();
            for i in 0..n {
                rho[j * n + i] = (1.0 - s) * la[i] + s * lb[i] + bend * la[i] * (i as f64 / 7.0).cos();
            }
        }
        let mut w: Vec<f64> = (0..st.n_cells()).map(|_| rng.gen_range(-0.2..0.2)).collect();
        st.project(&mut rho, &mut w, &la, &lb);
        if rho.iter().any(|&r| r < 0.0) {
            continue;
        }
        let e = st.energy(&rho, &w, &model);
        assert!(e >= res.lower_bound, "feasible energy {e} below certificate {}", res.lower_bound);
    }
}

fn translation_pair(potential: Potential) -> (DensityField, DensityField) {
    let g = build_grid(potential, 6.0, 128).unwrap();
    (
        DensitySpec::Gaussian { mean: -0.5, std: 1.0 }.sample(&g).unwrap(),
        DensitySpec::Gaussian { mean: 0.5, std: 1.0 }.sample(&g).unwrap(),
    )
}

#[test]
fn quadratic_mobility_ignores_the_reference_measure() {
    let model = EntropyModel::power(1.0).unwrap();
    let p = GeodesicParams::default();
    let mut ws = Vec::new();
    for pot in [Potential::harmonic(), Potential::soft_abs(0.5).unwrap()] {
        let (a, b) = translation_pair(pot);
        let l = distance_kappa_extrapolated(&a, &b, &model, &p, &KAPPA_LADDER).unwrap();
        let oracle = oracle_w2_quantile(&a, &b).unwrap();
        assert!((l.distance - oracle).abs() <= 0.02 * oracle, "{} vs oracle {oracle}", l.distance);
        ws.push(l.distance);
    }
    assert!((ws[0] - ws[1]).abs() <= 0.02 * ws[0], "{ws:?}");
    assert!((ws[0] - 1.0).abs() <= 0.02);
}

#[test]
fn converged_translation_has_constant_speed() {
    let model = EntropyModel::power(1.0).unwrap();
    let (a, b) = translation_pair(Potential::harmonic());
    let res = solve_geodesic(&a, &b, &model, &GeodesicParams::default()).unwrap();
    assert!(res.converged);
    assert!(res.deviation <= 0.03, "deviation {}", res.deviation);
    assert_eq!(res.deviation, constant_speed_check(&res.path));
    assert!(res.path.continuity_residual() < 1e-10);
}

#[test]
fn single_iteration_is_flagged() {
    let model = EntropyModel::power(1.0).unwrap();
    let (a, b) = translation_pair(Potential::harmonic());
    let res = solve_geodesic(&a, &b, &model, &GeodesicParams { max_iter: 1, ..Default::default() }).unwrap();
    assert!(!res.converged);
    assert!(res.gap > 1e-5 * res.energy());
    assert!(res.deviation > 0.03, "deviation {}", res.deviation);
}

#[test]
fn too_few_time_slices_are_rejected() {
    let model = EntropyModel::power(1.0).unwrap();
    let (a, b) = translation_pair(Potential::harmonic());
    assert!(solve_geodesic(&a, &b, &model, &GeodesicParams { time_slices: 4, ..Default::default() }).is_err());
}

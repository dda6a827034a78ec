use std::sync::Arc;

use gaussbound::levi::{
    phi_series, EnvelopeVariant, GridSpec, LeviOptions, LeviSolution, Majorant, SolutionCache, StopRule,
};
use gaussbound::oracle::{fd_solve, FdConfig};
use gaussbound::{CoefficientField, Error, KernelQuery, QuadratureScheme, SpdMatrix, Structure};

fn coarse() -> LeviOptions {
    let quad = QuadratureScheme {
        spatial_nodes_per_axis: 24,
        time_nodes: 16,
        ..QuadratureScheme::default()
    };
    LeviOptions {
        grid: GridSpec {
            space_nodes: 41,
            time_nodes: 12,
            radius_factor: 8.0,
        },
        ..LeviOptions::for_dim(1).with_quad(quad)
    }
}

fn mild() -> CoefficientField {
    let s = Structure::new(1, 1.0, 1.5, 2.5, 0.66, 0.0).unwrap();
    CoefficientField::new(s, |x, t, out| out[0] = 2.0 + 0.5 * x[0].sin() * t.cos()).unwrap()
}

fn shifted_heat(b: f64, q0: f64, x: f64, dt: f64) -> f64 {
    let y = x + b * dt;
    (q0 * dt).exp() * (4.0 * std::f64::consts::PI * dt).powf(-0.5) * (-y * y / (4.0 * dt)).exp()
}

#[test]
fn constant_drift_and_potential_match_the_shifted_kernel() {
    let s = Structure::new(1, 1.0, 0.5, 2.0, 0.0, 0.3).unwrap();
    let f = CoefficientField::constant(s, &SpdMatrix::identity(1), Some(&[0.3]), 0.2).unwrap();
    let sol = LeviSolution::build(&f, &[0.0], 0.0, 0.5, &coarse()).unwrap();
    for (dx, dt) in [(0.1, 0.5), (-0.4, 0.3), (0.7, 0.1), (0.0, 0.02), (-1.5, 0.5)] {
        let e = sol.evaluate_offset(&[dx], dt).unwrap().value;
        let g = shifted_heat(0.3, 0.2, dx, dt);
        assert!((e - g).abs() <= 1e-3 * g, "dx {dx} dt {dt}: {e} vs {g}");
    }
}

#[test]
fn potential_only_is_an_exponential_factor() {
    let s = Structure::new(1, 1.0, 0.5, 2.0, 0.0, 0.0).unwrap();
    let f = CoefficientField::constant(s, &SpdMatrix::identity(1), None, -0.4).unwrap();
    let sol = LeviSolution::build(&f, &[0.2], 0.1, 1.0, &coarse()).unwrap();
    for (dx, dt) in [(0.3, 1.0), (-0.8, 0.4), (0.05, 0.01)] {
        let e = sol.evaluate_offset(&[dx], dt).unwrap().value;
        let g = shifted_heat(0.0, -0.4, dx, dt);
        assert!((e - g).abs() <= 1e-3 * g, "{e} vs {g}");
    }
}

#[test]
fn constant_one_is_reproduced_by_integrating_over_the_source() {
    // u ≡ 1 solves the equation when b = q = 0, so ∫ E(x,t;ξ,τ) dξ = 1.
    let f = mild();
    let (x, t, tau) = (0.4, 0.3, 0.1);
    let dt = t - tau;
    let h = 0.25;
    let cache = SolutionCache::new(&f, coarse());
    let mass: f64 = (-28..=28)
        .map(|i| {
            let xi = x + h * i as f64;
            h * cache.get(&[xi], tau, dt).unwrap().evaluate(&[x], t).unwrap().value
        })
        .sum();
    assert!((mass - 1.0).abs() <= 0.02, "{mass}");
}

#[test]
fn mass_over_x_matches_finite_differences() {
    // Not conserved for x-dependent a in non-divergence form.
    let f = mild();
    let dt = 0.2;
    let sol = LeviSolution::build(&f, &[0.3], 0.1, dt, &coarse()).unwrap();
    let h = 0.02;
    let mass: f64 = (-600..=600).map(|i| h * sol.evaluate_offset(&[h * i as f64], dt).unwrap().value).sum();
    let fd = fd_solve(&f, (&[0.3], 0.1), 0.1 + dt, &FdConfig::around(&[0.3], 2.5, dt, 1000, 200)).unwrap();
    assert!((mass - fd.mass()).abs() <= 1e-3, "{mass} vs {}", fd.mass());
    assert!(mass < 0.99);
}

#[test]
fn evaluated_values_are_positive() {
    let f = mild();
    let sol = LeviSolution::build(&f, &[-0.5], 0.7, 1.0, &coarse()).unwrap();
    for i in 0..200 {
        let dt = 1e-3 + (i % 20) as f64 * 0.05;
        let rho = 0.2 * (i / 20) as f64;
        let dx = rho * dt.sqrt() * if i % 2 == 0 { 1.0 } else { -1.0 };
        let e = sol.evaluate_offset(&[dx], dt).unwrap().value;
        assert!(e > 0.0, "E = {e} at dx {dx}, dt {dt}");
    }
}

#[test]
fn tail_bounds_dominate_the_next_iterate() {
    let f = mild();
    let maj = Majorant::for_field(&f);
    let opts = LeviOptions {
        ell_max: 4,
        stop: StopRule::Fixed,
        ..coarse()
    };
    let sol = LeviSolution::build(&f, &[0.0], 0.0, 1.0, &opts).unwrap();
    for i in 0..50 {
        let dt = 0.02 + 0.0196 * i as f64;
        let dx = 0.05 * (i as f64 - 25.0);
        let q = KernelQuery::from_offsets(&[0.0], 0.0, vec![dx], dt).unwrap();
        for ell in 1..4 {
            let next = sol.phi_ell(ell + 1, &q.dx, dt).unwrap().abs();
            assert!(maj.tail_bound(ell, q.rho(), dt, EnvelopeVariant::Sharp) >= next);
            let this = sol.phi_ell(ell, &q.dx, dt).unwrap().abs();
            assert!(maj.iterate_bound(ell, q.rho(), dt, EnvelopeVariant::UnitTime) >= this);
        }
    }
}

#[test]
fn tolerance_driven_series_reports_unreachable_tolerances() {
    let q = KernelQuery::from_offsets(&[0.0], 0.0, vec![0.1], 0.5).unwrap();
    match phi_series(&mild(), &q, &QuadratureScheme::default(), 1e-4) {
        Err(Error::TruncationFailure { achieved_tail, .. }) => assert!(achieved_tail > 1e-4),
        other => panic!("expected a truncation failure, got {other:?}"),
    }
    // A nearly constant field has a small majorant.
    let s = Structure::new(1, 1.0, 0.9, 1.1, 1e-3, 0.0).unwrap();
    let f = CoefficientField::new(s, |x, _, out| out[0] = 1.0 + 1e-4 * x[0].sin()).unwrap();
    let v = phi_series(&f, &q, &coarse().quad, 1e-3).unwrap();
    assert!(v.tail_bound < 1e-3 && v.terms_used >= 1);
}

#[test]
fn cache_returns_shared_solutions() {
    let f = mild();
    let cache = SolutionCache::new(&f, coarse());
    let a = cache.get(&[0.0], 0.0, 0.1).unwrap();
    let b = cache.get(&[0.0], 0.0, 0.1).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
    assert_eq!(cache.len(), 1);
}

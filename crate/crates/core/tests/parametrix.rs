use proptest::prelude::*;

use gaussbound::parametrix::{constant_c, parametrix_z, phi1, phi1_envelope, psi, z_lower, z_upper};
use gaussbound::{CoefficientField, KernelQuery, Structure};

/// 2-D field with eigenvalues inside [0.8, 2.2], plus drift and potential.
fn field2() -> CoefficientField {
    let s = Structure::new(2, 1.0, 0.8, 2.2, 1.0, 0.5).unwrap();
    CoefficientField::new(s, |x, t, out| {
        out[0] = 1.5 + 0.3 * x[0].sin() * t.cos();
        out[1] = 0.2;
        out[2] = 0.2;
        out[3] = 1.2 + 0.2 * x[1].cos();
    })
    .unwrap()
    .with_drift(|x, _, out| {
        out[0] = 0.2 * x[1].cos();
        out[1] = -0.1;
    })
    .with_potential(|_, t| 0.1 * t.sin())
}

fn q(x: [f64; 2], t: f64, xi: [f64; 2], tau: f64) -> KernelQuery {
    KernelQuery::new(&x, t, &xi, tau).unwrap()
}

fn z_at(f: &CoefficientField, x: [f64; 2], t: f64, xi: [f64; 2], tau: f64) -> f64 {
    parametrix_z(f, &q(x, t, xi, tau)).unwrap()
}

/// Second differences of Z in x and first in t at (x, t).
fn derivatives(f: &CoefficientField, x: [f64; 2], t: f64, xi: [f64; 2], tau: f64) -> ([[f64; 2]; 2], [f64; 2], f64) {
    let h = 1e-4;
    let z = |dx: [f64; 2], dt: f64| z_at(f, [x[0] + dx[0], x[1] + dx[1]], t + dt, xi, tau);
    let z0 = z([0.0, 0.0], 0.0);
    let mut hess = [[0.0; 2]; 2];
    let mut grad = [0.0; 2];
    for i in 0..2 {
        let mut e = [0.0; 2];
        e[i] = h;
        let m = [-e[0], -e[1]];
        hess[i][i] = (z(e, 0.0) - 2.0 * z0 + z(m, 0.0)) / (h * h);
        grad[i] = (z(e, 0.0) - z(m, 0.0)) / (2.0 * h);
    }
    let (pp, pm, mp, mm) = (
        z([h, h], 0.0),
        z([h, -h], 0.0),
        z([-h, h], 0.0),
        z([-h, -h], 0.0),
    );
    hess[0][1] = (pp - pm - mp + mm) / (4.0 * h * h);
    hess[1][0] = hess[0][1];
    let zt = (z([0.0, 0.0], h) - z([0.0, 0.0], -h)) / (2.0 * h);
    (hess, grad, zt)
}

fn scale(f: &CoefficientField, x: [f64; 2], t: f64, xi: [f64; 2], tau: f64) -> f64 {
    // Magnitude of the individual terms, used to make residuals relative.
    let (hess, _, zt) = derivatives(f, x, t, xi, tau);
    hess.iter().flatten().map(|v| v.abs()).sum::<f64>() + zt.abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn z_sandwich(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, xi1 in -3.0f64..3.0, tau in 0.0f64..2.0, dt in 1e-3f64..3.0) {
        let f = field2();
        let qy = q([x1, x2], tau + dt, [xi1, 0.3], tau);
        let s = f.structure();
        let z = parametrix_z(&f, &qy).unwrap();
        let (lo, hi) = (z_lower(s, qy.rho(), dt), z_upper(s, qy.rho(), dt));
        prop_assert!(lo <= z * (1.0 + 1e-12) && z <= hi * (1.0 + 1e-12), "{lo} <= {z} <= {hi}");
    }

    #[test]
    fn phi1_below_its_envelope(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, tau in 0.0f64..2.0, dt in 1e-4f64..1.0) {
        let f = field2();
        let s = *f.structure();
        let qy = q([x1, x2], tau + dt, [0.1, -0.2], tau);
        let v = phi1(&f, &qy).unwrap().abs();
        let env = phi1_envelope(&s, constant_c(&f), 1.0 / (8.0 * s.big_m), qy.rho(), dt);
        prop_assert!(v <= env, "{v} > {env}");
    }
}

#[test]
fn frozen_coefficients_annihilate_z() {
    let f = field2();
    let (xi, tau) = ([0.3, -0.4], 0.2);
    let mut a = [0.0; 4];
    f.diffusion_into(&xi, tau, &mut a);
    for (x, t) in [([0.5, 0.1], 0.7), ([-0.2, -0.9], 1.2), ([0.31, -0.38], 0.35)] {
        let (hess, _, zt) = derivatives(&f, x, t, xi, tau);
        let lz = a[0] * hess[0][0] + a[1] * hess[0][1] + a[2] * hess[1][0] + a[3] * hess[1][1] - zt;
        let sc = scale(&f, x, t, xi, tau);
        assert!(lz.abs() <= 1e-5 * sc, "residual {lz} vs scale {sc}");
    }
}

#[test]
fn full_operator_on_z_is_psi_times_z() {
    let f = field2();
    let (xi, tau) = ([0.3, -0.4], 0.2);
    for (x, t) in [([0.5, 0.1], 0.7), ([-0.2, -0.9], 1.2), ([1.0, 0.5], 0.5)] {
        let (hess, grad, zt) = derivatives(&f, x, t, xi, tau);
        let mut a = [0.0; 4];
        f.diffusion_into(&x, t, &mut a);
        let mut b = [0.0; 2];
        f.drift_into(&x, t, &mut b);
        let z = z_at(&f, x, t, xi, tau);
        let lz = a[0] * hess[0][0] + a[1] * hess[0][1] + a[2] * hess[1][0] + a[3] * hess[1][1]
            + b[0] * grad[0]
            + b[1] * grad[1]
            + f.potential(&x, t) * z
            - zt;
        let expected = psi(&f, &q(x, t, xi, tau)).unwrap() * z;
        let sc = scale(&f, x, t, xi, tau);
        assert!((lz - expected).abs() <= 1e-4 * sc, "{lz} vs {expected} (scale {sc})");
    }
}

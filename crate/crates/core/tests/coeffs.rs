use proptest::prelude::*;

use gaussbound::coeffs::{estimate_holder_seminorm, invert_spd, Region};
use gaussbound::{CoefficientField, SpdMatrix, Structure};

/// SPD 2×2 from eigenvalues in [κ, M] and a rotation angle.
fn spd2(l1: f64, l2: f64, angle: f64) -> SpdMatrix {
    let (c, s) = (angle.cos(), angle.sin());
    let a11 = l1 * c * c + l2 * s * s;
    let a22 = l1 * s * s + l2 * c * c;
    let a12 = (l1 - l2) * c * s;
    SpdMatrix::new(2, &[a11, a12, a12, a22]).unwrap()
}

proptest! {
    #[test]
    fn double_inverse_is_identity(l1 in 0.1f64..10.0, l2 in 0.1f64..10.0, angle in 0.0f64..3.2) {
        let a = spd2(l1, l2, angle);
        let back = invert_spd(&invert_spd(&a).unwrap()).unwrap();
        let scale = a.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (p, q) in a.entries().iter().zip(back.entries()) {
            prop_assert!((p - q).abs() <= 1e-12 * scale, "{p} vs {q}");
        }
    }

    #[test]
    fn inverse_quadratic_form_dominates_m_scaling(
        kappa in 0.2f64..1.0,
        spread in 1.0f64..5.0,
        u in 0.0f64..1.0,
        v in 0.0f64..1.0,
        angle in 0.0f64..3.2,
        x1 in -3.0f64..3.0,
        x2 in -3.0f64..3.0,
        dt in 0.01f64..2.0,
    ) {
        let big_m = kappa * spread;
        let a = spd2(kappa + u * (big_m - kappa), kappa + v * (big_m - kappa), angle);
        let inv = invert_spd(&a).unwrap();
        let lhs = inv.quad_form(&[x1, x2]) / (4.0 * dt);
        let rhs = (x1 * x1 + x2 * x2) / (4.0 * big_m * dt);
        prop_assert!(lhs >= rhs * (1.0 - 1e-12));
    }

    #[test]
    fn constant_fields_have_zero_holder_seminorm(a in 0.5f64..3.0, seed in 0u64..100) {
        let s = Structure::new(1, 1.0, 0.5, 3.0, 0.0, 0.0).unwrap();
        let f = CoefficientField::constant(s, &SpdMatrix::new(1, &[a]).unwrap(), None, 0.0).unwrap();
        let est = estimate_holder_seminorm(&f, 500, &Region::cube(1, 2.0, 0.0, 1.0), seed).unwrap();
        prop_assert_eq!(est.value, 0.0);
    }
}

#[test]
fn holder_estimate_approaches_dense_value_from_below() {
    let s = Structure::new(1, 1.0, 1.5, 2.5, 1.0, 0.0).unwrap();
    let f = CoefficientField::new(s, |x, t, out| out[0] = 2.0 + 0.5 * x[0].sin() * t.cos()).unwrap();
    let region = Region::cube(1, 4.0, 0.0, 4.0);
    let small = estimate_holder_seminorm(&f, 2_000, &region, 0).unwrap().value;
    let large = estimate_holder_seminorm(&f, 200_000, &region, 0).unwrap().value;
    assert!(small <= large);
    // the dense-grid value is about 0.66
    assert!(large > 0.5 && large < 1.0, "{large}");
}

use proptest::prelude::*;

use gaussbound::kernels::{gen_gauss, GenGaussKernel};
use gaussbound::quadrature::GaussLegendre;
use gaussbound::SpdMatrix;

fn kernel(a11: f64, a12: f64, a22: f64) -> GenGaussKernel {
    GenGaussKernel::new(SpdMatrix::new(2, &[a11, a12, a12, a22]).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn positive_on_its_domain(a11 in 0.5f64..2.0, a22 in 0.5f64..2.0, r in -0.4f64..0.4, x1 in -6.0f64..6.0, x2 in -6.0f64..6.0, t in 0.05f64..5.0) {
        let k = kernel(a11, r * (a11 * a22).sqrt(), a22);
        prop_assert!(gen_gauss(&k, &[x1, x2], t).unwrap() > 0.0);
    }

    #[test]
    fn parabolic_scaling(a11 in 0.5f64..2.0, a22 in 0.5f64..2.0, r in -0.4f64..0.4, x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, t in 0.05f64..2.0, lambda in 0.3f64..3.0) {
        let k = kernel(a11, r * (a11 * a22).sqrt(), a22);
        let g = gen_gauss(&k, &[x1, x2], t).unwrap();
        let scaled = gen_gauss(&k, &[lambda * x1, lambda * x2], lambda * lambda * t).unwrap();
        prop_assert!((scaled - g / (lambda * lambda)).abs() <= 1e-12 * g / (lambda * lambda));
    }
}

#[test]
fn chapman_kolmogorov_for_constant_kernel() {
    let a = SpdMatrix::new(1, &[0.7]).unwrap();
    let k = GenGaussKernel::new(a).unwrap();
    let rule = GaussLegendre::new(8).composite(-30.0, 30.0, 120);
    for (x, xi, t, sigma, tau) in [(0.4, -0.2, 1.0, 0.3, 0.0), (1.5, 0.0, 2.0, 1.7, 0.1), (0.0, 0.0, 0.5, 0.25, 0.0)] {
        let lhs: f64 = rule
            .iter()
            .map(|&(eta, w)| w * k.value(&[x - eta], t - sigma).unwrap() * k.value(&[eta - xi], sigma - tau).unwrap())
            .sum();
        let rhs = k.value(&[x - xi], t - tau).unwrap();
        assert!((lhs - rhs).abs() <= 1e-6 * rhs, "{lhs} vs {rhs}");
    }
}

use proptest::prelude::*;

use gaussbound::bounds::{
    build_chain, chain_length, compose_long_time, compute_constants, constants_for, epsilon_upper_constants,
    lower_envelope, upper_envelope,
};
use gaussbound::levi::{series_majorant_s, LeviOptions};
use gaussbound::{CoefficientField, KernelQuery, SpdMatrix, Structure};

fn mild(n1: f64) -> CoefficientField {
    let s = Structure::new(1, 1.0, 1.5, 2.5, n1, 0.0).unwrap();
    CoefficientField::new(s, |x, t, out| out[0] = 2.0 + 0.5 * x[0].sin() * t.cos()).unwrap()
}

fn structure() -> impl Strategy<Value = Structure> {
    (1usize..=3, 0.2f64..1.0, 0.3f64..1.5, 1.0f64..4.0, 0.0f64..2.0, 0.0f64..1.0).prop_map(
        |(n, alpha, kappa, spread, n1, n2)| Structure::new(n, alpha, kappa, kappa * spread, n1, n2).unwrap(),
    )
}

fn field(s: Structure) -> CoefficientField {
    CoefficientField::new(s, move |_, _, out| {
        for i in 0..s.n {
            out[i * s.n + i] = s.kappa;
        }
    })
    .unwrap()
}

proptest! {
    #[test]
    fn lower_envelope_below_upper(s in structure(), rho in 0.0f64..6.0, dt in 1e-4f64..5.0) {
        let k = compute_constants(&field(s));
        let dx: Vec<f64> = (0..s.n).map(|i| if i == 0 { rho * dt.sqrt() } else { 0.0 }).collect();
        let q = KernelQuery::from_offsets(&vec![0.0; s.n], 0.0, dx, dt).unwrap();
        let (lo, hi) = (lower_envelope(&k, &q).unwrap(), upper_envelope(&k, &q).unwrap());
        prop_assert!(lo < hi || (lo == 0.0 && hi > 0.0), "{lo} !< {hi}");
        prop_assert!(k.ln_lower(q.rho(), dt) < k.ln_upper(q.rho(), dt));
    }

    #[test]
    fn delta_satisfies_its_defining_inequality_sharply(n in 1usize..=2, kappa in 0.5f64..1.0, big_m in 1.0f64..3.0, n1 in 1e-6f64..1e-3) {
        let s = Structure::new(n, 1.0, kappa, big_m, n1, 0.0).unwrap();
        let k = compute_constants(&field(s));
        let h = n as f64 / 2.0;
        let beta = s.beta();
        // S B(1, β) (κc)^(-n/2) δ^β ≤ μ, with B(1, β) = 1/β.
        let lhs = |ln_d: f64| k.ln_s - beta.ln() - h * (kappa * k.c).ln() + beta * ln_d;
        let ln_mu = k.mu.ln();
        prop_assert!(lhs(k.ln_delta) <= ln_mu + 1e-12);
        if k.ln_delta + 2f64.ln() <= 0.0 {
            prop_assert!(lhs(k.ln_delta + 2f64.ln()) > ln_mu);
        }
    }

    #[test]
    fn s_grows_with_the_holder_constant(a in 0.01f64..2.0, b in 0.01f64..2.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(series_majorant_s(&mild(lo)) <= series_majorant_s(&mild(hi)));
        prop_assert!(compute_constants(&mild(lo)).ln_s <= compute_constants(&mild(hi)).ln_s);
    }

    #[test]
    fn chain_points_are_evenly_spaced(x in prop::collection::vec(-5.0f64..5.0, 2), xi in prop::collection::vec(-5.0f64..5.0, 2), m in 1usize..40) {
        let c = build_chain(&x, &xi, m).unwrap();
        prop_assert_eq!(c.len(), m + 1);
        prop_assert_eq!(&c[0], &x);
        let step: f64 = x.iter().zip(&xi).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / m as f64;
        for w in c.windows(2) {
            let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((d - step).abs() <= 1e-9 * (1.0 + step));
        }
        for (p, q) in c[m].iter().zip(&xi) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn chain_length_is_minimal(d2 in 0.0f64..50.0, kappa in 0.1f64..2.0, dt in 0.01f64..5.0) {
        let m = chain_length(d2, kappa, dt);
        prop_assert!(4.0 * d2 <= m as f64 * kappa * dt * (1.0 + 1e-12));
        if m > 1 {
            prop_assert!(4.0 * d2 > (m - 1) as f64 * kappa * dt);
        }
    }
}

#[test]
fn d_formula_matches_nu_over_the_sweep() {
    for n in 1..=3 {
        for kappa in [0.5, 1.0] {
            for big_m in [1.0, 2.0, 4.0] {
                let s = Structure::new(n, 1.0, kappa, big_m, 1.0, 0.0).unwrap();
                let k = constants_for(&s, 1.0, 1.0 / (8.0 * big_m));
                assert!((k.d - k.d_from_nu).abs() <= 1e-12 * k.d, "n {n} kappa {kappa} M {big_m}");
            }
        }
    }
}

#[test]
fn epsilon_family_limits() {
    let f = mild(0.66);
    let big_m = f.structure().big_m;
    let near_one = epsilon_upper_constants(&f, 1.0 - 1e-9).unwrap();
    assert!((near_one.c_eps - 1.0 / (4.0 * big_m)).abs() < 1e-9);
    let half = epsilon_upper_constants(&f, 0.5).unwrap();
    let k = compute_constants(&f);
    assert_eq!(half.c_eps, k.c);
    assert_eq!(half.constants.ln_chat, k.ln_chat);
    assert!(epsilon_upper_constants(&f, 1.0).is_err());
    assert!(epsilon_upper_constants(&f, 0.0).is_err());
}

#[test]
fn isotropic_kernel_and_envelopes_peak_at_the_diagonal() {
    let sigma2 = 1.7;
    let s = Structure::new(1, 1.0, sigma2, sigma2, 0.0, 0.0).unwrap();
    let f = CoefficientField::constant(s, &SpdMatrix::new(1, &[sigma2]).unwrap(), None, 0.0).unwrap();
    let k = compute_constants(&f);
    let opts = LeviOptions::for_dim(1);
    let (x, t, tau) = (0.3, 0.8, 0.0);
    let values: Vec<(f64, f64, f64, f64)> = (-40..=40)
        .map(|i| {
            let xi = x + 0.05 * i as f64;
            let q = KernelQuery::new(&[x], t, &[xi], tau).unwrap();
            let e = compose_long_time(&f, &q, &opts, 1.0).unwrap();
            (xi, e, lower_envelope(&k, &q).unwrap(), upper_envelope(&k, &q).unwrap())
        })
        .collect();
    let argmax = |pick: fn(&(f64, f64, f64, f64)) -> f64| {
        values.iter().max_by(|a, b| pick(a).total_cmp(&pick(b))).unwrap().0
    };
    assert_eq!(argmax(|v| v.1), x);
    assert_eq!(argmax(|v| v.2), x);
    assert_eq!(argmax(|v| v.3), x);
}

#[test]
fn long_time_composition_reproduces_the_heat_kernel() {
    let s = Structure::new(1, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
    let f = CoefficientField::constant(s, &SpdMatrix::identity(1), None, 0.0).unwrap();
    let opts = LeviOptions::for_dim(1);
    for (dx, dt) in [(0.5, 3.0), (2.0, 5.0), (-4.0, 4.5)] {
        let q = KernelQuery::from_offsets(&[0.0], 0.0, vec![dx], dt).unwrap();
        let e = compose_long_time(&f, &q, &opts, 1.0).unwrap();
        let g = (4.0 * std::f64::consts::PI * dt).powf(-0.5) * (-dx * dx / (4.0 * dt)).exp();
        assert!((e - g).abs() <= 1e-8 * g, "{e} vs {g}");
    }
}

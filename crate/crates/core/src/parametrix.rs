//! The parametrix `Z`, the residual factor `Ψ` with `LZ = ΨZ`, the first
//! Levi kernel `Φ₁ = LZ` and the constant `C` bounding it.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::sync::Mutex;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coeffs::{CoefficientField, MatBuf, SpdMatrix, Structure, VecBuf};
use crate::error::Result;
pub use crate::query::KernelQuery;

/// a(ξ,τ) together with its inverse, frozen at a source point.
#[derive(Debug, Clone, PartialEq)]
pub struct Frozen {
    pub a: MatBuf,
    pub a_inv: MatBuf,
    /// √det(a⁻¹)
    pub sqrt_det_inv: f64,
}

impl Frozen {
    pub fn at(field: &CoefficientField, xi: &[f64], tau: f64) -> Result<Self> {
        let a = field.diffusion(xi, tau);
        let (inv, det) = a.inverse_with_det()?;
        Ok(Self {
            a: MatBuf::from_slice(a.entries()),
            a_inv: MatBuf::from_slice(inv.entries()),
            sqrt_det_inv: det.sqrt().recip(),
        })
    }

    /// From a row-major a(ξ,τ).
    pub fn from_matrix(n: usize, a: &[f64]) -> Result<Self> {
        let m = SpdMatrix::from_raw(n, a)?;
        let (inv, det) = m.inverse_with_det()?;
        Ok(Self {
            a: MatBuf::from_slice(a),
            a_inv: MatBuf::from_slice(inv.entries()),
            sqrt_det_inv: det.sqrt().recip(),
        })
    }

    /// Z for offsets (x − ξ, t − τ).
    #[inline]
    pub fn z(&self, dx: &[f64], dt: f64) -> f64 {
        let n = dx.len();
        let mut q = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.a_inv[i * n + j] * dx[j];
            }
            q += row * dx[i];
        }
        self.sqrt_det_inv * (4.0 * PI * dt).powf(-(n as f64) / 2.0) * (-q / (4.0 * dt)).exp()
    }

    /// Ψ for offsets (x − ξ, t − τ) given the coefficients at (x, t).
    #[inline]
    pub fn psi(&self, target: &TargetCoeffs, dx: &[f64], dt: f64) -> f64 {
        let n = dx.len();
        let mut d: VecBuf = smallvec::smallvec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.a_inv[i * n + j] * dx[j];
            }
            d[i] = -s / (2.0 * dt);
        }
        let mut psi = target.q;
        for i in 0..n {
            psi += d[i] * target.b[i];
            for j in 0..n {
                let diff = target.a[i * n + j] - self.a[i * n + j];
                if diff != 0.0 {
                    let dij = -self.a_inv[i * n + j] / (2.0 * dt) + d[i] * d[j];
                    psi += diff * dij;
                }
            }
        }
        psi
    }
}

/// a, b, q evaluated at a target point (x, t).
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCoeffs {
    pub a: MatBuf,
    pub b: VecBuf,
    pub q: f64,
}

impl TargetCoeffs {
    pub fn at(field: &CoefficientField, x: &[f64], t: f64) -> Self {
        let n = field.dim();
        let mut a: MatBuf = smallvec::smallvec![0.0; n * n];
        let mut b: VecBuf = smallvec::smallvec![0.0; n];
        field.diffusion_into(x, t, &mut a);
        field.drift_into(x, t, &mut b);
        Self {
            a,
            b,
            q: field.potential(x, t),
        }
    }
}

const CACHE_CAPACITY: usize = 4096;

/// Bounded cache of frozen inverses keyed by the exact bit pattern of
/// (ξ, τ), evicting the oldest entry when full. Exact keys keep results
/// independent of evaluation order.
#[derive(Debug, Default)]
pub struct InverseCache {
    inner: Mutex<(HashMap<Vec<u64>, Frozen>, VecDeque<Vec<u64>>)>,
}

impl InverseCache {
    pub fn get_or_insert(&self, field: &CoefficientField, xi: &[f64], tau: f64) -> Result<Frozen> {
        let mut key: Vec<u64> = xi.iter().map(|v| v.to_bits()).collect();
        key.push(tau.to_bits());
        {
            let guard = self.inner.lock().expect("inverse cache poisoned");
            if let Some(f) = guard.0.get(&key) {
                return Ok(f.clone());
            }
        }
        let frozen = Frozen::at(field, xi, tau)?;
        let mut guard = self.inner.lock().expect("inverse cache poisoned");
        let (map, order) = &mut *guard;
        if map.len() >= CACHE_CAPACITY {
            if let Some(old) = order.pop_front() {
                map.remove(&old);
            }
        }
        if map.insert(key.clone(), frozen.clone()).is_none() {
            order.push_back(key);
        }
        Ok(frozen)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("inverse cache poisoned").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pointwise evaluator for Z, Ψ and Φ₁ of one coefficient field.
#[derive(Debug)]
pub struct Parametrix<'a> {
    field: &'a CoefficientField,
    cache: Option<InverseCache>,
}

impl<'a> Parametrix<'a> {
    pub fn new(field: &'a CoefficientField) -> Self {
        Self {
            field,
            cache: Some(InverseCache::default()),
        }
    }

    pub fn without_cache(field: &'a CoefficientField) -> Self {
        Self { field, cache: None }
    }

    pub fn field(&self) -> &'a CoefficientField {
        self.field
    }

    pub fn frozen(&self, xi: &[f64], tau: f64) -> Result<Frozen> {
        match &self.cache {
            Some(c) => c.get_or_insert(self.field, xi, tau),
            None => Frozen::at(self.field, xi, tau),
        }
    }

    pub fn z(&self, qy: &KernelQuery) -> Result<f64> {
        Ok(self.frozen(&qy.xi, qy.tau)?.z(&qy.dx, qy.dt))
    }

    pub fn psi(&self, qy: &KernelQuery) -> Result<f64> {
        let frozen = self.frozen(&qy.xi, qy.tau)?;
        let target = TargetCoeffs::at(self.field, &qy.x(), qy.t());
        Ok(frozen.psi(&target, &qy.dx, qy.dt))
    }

    pub fn phi1(&self, qy: &KernelQuery) -> Result<f64> {
        let frozen = self.frozen(&qy.xi, qy.tau)?;
        let target = TargetCoeffs::at(self.field, &qy.x(), qy.t());
        Ok(frozen.psi(&target, &qy.dx, qy.dt) * frozen.z(&qy.dx, qy.dt))
    }
}

pub fn parametrix_z(field: &CoefficientField, qy: &KernelQuery) -> Result<f64> {
    Parametrix::without_cache(field).z(qy)
}

pub fn psi(field: &CoefficientField, qy: &KernelQuery) -> Result<f64> {
    Parametrix::without_cache(field).psi(qy)
}

pub fn phi1(field: &CoefficientField, qy: &KernelQuery) -> Result<f64> {
    Parametrix::without_cache(field).phi1(qy)
}

/// Upper envelope (4κπ(t−τ))^(-n/2) e^(-ρ²/4M) of Z.
pub fn z_upper(s: &Structure, rho: f64, dt: f64) -> f64 {
    (4.0 * s.kappa * PI * dt).powf(-(s.n as f64) / 2.0) * (-rho * rho / (4.0 * s.big_m)).exp()
}

/// Lower envelope (4πM)^(-n/2) (t−τ)^(-n/2) e^(-ρ²/κ) of Z.
pub fn z_lower(s: &Structure, rho: f64, dt: f64) -> f64 {
    (4.0 * PI * s.big_m * dt).powf(-(s.n as f64) / 2.0) * (-rho * rho / s.kappa).exp()
}

/// Bound on |Σ (a_ij(x,t) − a_ij(ξ,τ)) d_ij|.
pub fn psi_diffusion_bound(s: &Structure, rho: f64, dt: f64) -> f64 {
    let k = s.kappa;
    s.n1 * (1.0 / (2.0 * k) + rho * rho / (4.0 * k * k))
        * (1.0 + rho * rho).powf(s.alpha / 2.0)
        / dt.powf(1.0 - s.alpha / 2.0)
}

/// Bound on |Ψ| for t − τ ≤ 1.
pub fn psi_bound(s: &Structure, rho: f64, dt: f64) -> f64 {
    psi_diffusion_bound(s, rho, dt)
        + s.n2 * (1.0 + rho / (2.0 * s.kappa)) / dt.powf(1.0 - s.alpha / 2.0)
}

/// The bracket maximised in the definition of `C`, times the Gaussian weight.
fn c_profile(s: &Structure, weight: f64, lambda: f64) -> f64 {
    let k = s.kappa;
    let l2 = lambda * lambda;
    (s.n1 * (1.0 / (2.0 * k) + l2 / (4.0 * k * k)) * (1.0 + l2).powf(s.alpha / 2.0)
        + s.n2 * (lambda / k + 1.0))
        * (-weight * l2).exp()
}

/// `C = (4κπ)^(-n/2) max_λ [...] e^(-w λ²)` with Gaussian weight `w`.
///
/// The weight is `1/(8M)` for the theorem's constant; the sharpened upper
/// bounds use other weights.
pub fn constant_c_weighted(s: &Structure, weight: f64) -> f64 {
    if s.n1 == 0.0 && s.n2 == 0.0 {
        return 0.0;
    }
    let prefactor = (4.0 * s.kappa * PI).powf(-(s.n as f64) / 2.0);
    let f = |l: f64| c_profile(s, weight, l);
    let f0 = f(0.0);
    // Bracket: the profile is polynomial times Gaussian, so past the
    // polynomial's growth range it is eventually decreasing to zero.
    let mut hi = 1.0;
    while !(f(hi) < 1e-16 * f0 && hi * hi * weight > 3.0 + s.alpha) {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    let steps: usize = 4096;
    let h = hi / steps as f64;
    let (best_i, _) = (0..=steps)
        .map(|i| (i, f(i as f64 * h)))
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let mut a = (best_i.saturating_sub(1)) as f64 * h;
    let mut b = ((best_i + 1).min(steps)) as f64 * h;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > 1e-13 * (1.0 + b.abs()) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let peak = f(0.5 * (a + b)).max(f(best_i as f64 * h)).max(f0);
    prefactor * peak
}

/// The constant `C` with `c = 1/(8M)`.
pub fn constant_c(field: &CoefficientField) -> f64 {
    let s = field.structure();
    constant_c_weighted(s, 1.0 / (8.0 * s.big_m))
}

/// `C (t−τ)^(-n/2-1+β) e^(-cρ²)` bounding |Φ₁| for t − τ ≤ 1.
pub fn phi1_envelope(s: &Structure, c_const: f64, c_rate: f64, rho: f64, dt: f64) -> f64 {
    c_const * dt.powf(-(s.n as f64) / 2.0 - 1.0 + s.beta()) * (-c_rate * rho * rho).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseInequalityReport {
    /// max κ |a⁻¹η| / |η|; must be ≤ 1.
    pub inverse_norm_ratio: f64,
    /// max κ |a^ij|; must be ≤ 1.
    pub entry_ratio: f64,
    /// min M ⟨a⁻¹η, η⟩ / |η|²; must be ≥ 1.
    pub quadratic_ratio: f64,
    pub samples: usize,
    pub passed: bool,
}

/// Samples the field and checks the three inequalities satisfied by a⁻¹
/// under uniform ellipticity.
pub fn check_inverse_inequalities(field: &CoefficientField, sample_count: usize, rng_seed: u64) -> Result<InverseInequalityReport> {
    let s = *field.structure();
    let n = s.n;
    let region = field.region();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut norm_ratio = 0.0f64;
    let mut entry_ratio = 0.0f64;
    let mut quad_ratio = f64::INFINITY;
    for _ in 0..sample_count.max(1) {
        let x: Vec<f64> = (0..n)
            .map(|i| rng.gen_range(region.x_lo[i]..region.x_hi[i]))
            .collect();
        let t = rng.gen_range(region.t_lo..region.t_hi);
        let a = field.diffusion(&x, t);
        let (inv, _) = a.inverse_with_det()?;
        let entry = inv.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        entry_ratio = entry_ratio.max(s.kappa * entry);
        let mut probes: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        probes.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        for eta in probes {
            let norm2: f64 = eta.iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                continue;
            }
            let image = inv.mul_vec(&eta);
            let image_norm: f64 = image.iter().map(|v| v * v).sum::<f64>().sqrt();
            norm_ratio = norm_ratio.max(s.kappa * image_norm / norm2.sqrt());
            quad_ratio = quad_ratio.min(s.big_m * inv.quad_form(&eta) / norm2);
        }
    }
    let tol = 1e-12;
    Ok(InverseInequalityReport {
        inverse_norm_ratio: norm_ratio,
        entry_ratio,
        quadratic_ratio: quad_ratio,
        samples: sample_count.max(1),
        passed: norm_ratio <= 1.0 + tol && entry_ratio <= 1.0 + tol && quad_ratio >= 1.0 - tol,
    })
}

/// The three quantities of [`check_inverse_inequalities`] for a single matrix and vector.
pub fn inverse_ratios(a: &SpdMatrix, eta: &[f64], kappa: f64, big_m: f64) -> Result<(f64, f64, f64)> {
    let (inv, _) = a.inverse_with_det()?;
    let norm2: f64 = eta.iter().map(|v| v * v).sum();
    let image = inv.mul_vec(eta);
    let image_norm: f64 = image.iter().map(|v| v * v).sum::<f64>().sqrt();
    let entry = inv.entries().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((
        kappa * image_norm / norm2.sqrt(),
        kappa * entry,
        big_m * inv.quad_form(eta) / norm2,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Structure;
    use crate::kernels::gauss_kernel;

    fn identity_field(n: usize, q0: f64) -> CoefficientField {
        let s = Structure::new(n, 1.0, 1.0, 1.0, 0.0, q0.abs()).unwrap();
        CoefficientField::constant(s, &SpdMatrix::identity(n), None, q0).unwrap()
    }

    #[test]
    fn z_is_heat_kernel_for_identity() {
        let f = identity_field(1, 0.0);
        let q = KernelQuery::new(&[1.0], 1.0, &[0.0], 0.0).unwrap();
        let z = parametrix_z(&f, &q).unwrap();
        assert!((z - 0.219_695_6).abs() < 1e-7);
        assert!((z - gauss_kernel(&[1.0], 1.0).unwrap()).abs() < 1e-16);
    }

    #[test]
    fn psi_constant_cases() {
        let f = identity_field(2, 0.0);
        let q = KernelQuery::new(&[0.4, -0.3], 2.0, &[0.1, 0.2], 1.5).unwrap();
        assert_eq!(psi(&f, &q).unwrap(), 0.0);
        assert_eq!(phi1(&f, &q).unwrap(), 0.0);
        let f = identity_field(2, 0.7);
        assert_eq!(psi(&f, &q).unwrap(), 0.7);
        let z = parametrix_z(&f, &q).unwrap();
        assert!((phi1(&f, &q).unwrap() - 0.7 * z).abs() < 1e-16);
    }

    #[test]
    fn constant_c_zero_and_homogeneity() {
        let s = Structure::new(1, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(constant_c_weighted(&s, 0.125), 0.0);
        let s1 = Structure::new(1, 1.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let s2 = Structure::new(1, 1.0, 1.0, 1.0, 2.0, 0.0).unwrap();
        let c1 = constant_c_weighted(&s1, 0.125);
        let c2 = constant_c_weighted(&s2, 0.125);
        assert!((c2 - 2.0 * c1).abs() <= 1e-14 * c2);
        let at_zero = (4.0 * PI).powf(-0.5) * 0.5;
        assert!(c1 >= at_zero);
    }

    #[test]
    fn inverse_ratios_identity_and_diagonal_extremes() {
        let (r1, r2, r3) = inverse_ratios(&SpdMatrix::identity(2), &[1.0, 0.0], 1.0, 1.0).unwrap();
        assert_eq!((r1, r2, r3), (1.0, 1.0, 1.0));
        let (kappa, m) = (0.5, 3.0);
        let a = SpdMatrix::diagonal(&[kappa, m]);
        let (r1, _, _) = inverse_ratios(&a, &[1.0, 0.0], kappa, m).unwrap();
        assert!((r1 - 1.0).abs() < 1e-15);
        let (_, _, r3) = inverse_ratios(&a, &[0.0, 1.0], kappa, m).unwrap();
        assert!((r3 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inverse_cache_is_exact_and_bounded() {
        let f = identity_field(1, 0.0);
        let p = Parametrix::new(&f);
        let q = KernelQuery::new(&[1.0], 1.0, &[0.0], 0.0).unwrap();
        let a = p.z(&q).unwrap();
        let b = p.z(&q).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(p.cache.as_ref().unwrap().len(), 1);
        for i in 0..(CACHE_CAPACITY + 10) {
            p.frozen(&[i as f64], 0.0).unwrap();
        }
        assert_eq!(p.cache.as_ref().unwrap().len(), CACHE_CAPACITY);
    }
}

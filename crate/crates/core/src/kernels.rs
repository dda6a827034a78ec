//! Gaussian and generalized Gaussian heat kernels.
//!
//! For an SPD matrix `a`,
//! `G_a(x, t) = √det(a) (4πt)^(-n/2) exp(-⟨a x, x⟩ / 4t)`
//! has unit mass and solves `Σ (a⁻¹)_kl ∂²_kl G_a = ∂_t G_a`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::coeffs::{invert_spd, SpdMatrix};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureScheme;
use crate::special::erfc;

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTime { dt: t })
    }
}

/// (4πt)^(-n/2) exp(-|x|²/4t)
pub fn gauss_kernel(x: &[f64], t: f64) -> Result<f64> {
    check_time(t)?;
    let n = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((4.0 * PI * t).powf(-n / 2.0) * (-r2 / (4.0 * t)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelDerivatives {
    pub gradient: Vec<f64>,
    /// Row-major n×n.
    pub hessian: Vec<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassResult {
    pub mass: f64,
    /// Estimated mass outside the integration box.
    pub truncation_estimate: f64,
    pub warning: Option<String>,
}

/// The generalized kernel `G_a` for a fixed SPD matrix `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenGaussKernel {
    a: SpdMatrix,
    a_inv: SpdMatrix,
    det: f64,
}

impl GenGaussKernel {
    pub fn new(a: SpdMatrix) -> Result<Self> {
        let a_inv = invert_spd(&a)?;
        let det = a.det();
        if !(det > 0.0) {
            return Err(Error::NotPositiveDefinite {
                pivot: 0,
                value: det,
            });
        }
        Ok(Self { a, a_inv, det })
    }

    pub fn matrix(&self) -> &SpdMatrix {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    fn check(&self, x: &[f64], t: f64) -> Result<()> {
        check_time(t)?;
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check(x, t)?;
        Ok(self.value_unchecked(x, t))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64], t: f64) -> f64 {
        let n = self.dim() as f64;
        self.det.sqrt() * (4.0 * PI * t).powf(-n / 2.0) * (-self.a.quad_form(x) / (4.0 * t)).exp()
    }

    /// Closed-form gradient, Hessian and time derivative.
    pub fn derivatives(&self, x: &[f64], t: f64) -> Result<KernelDerivatives> {
        self.check(x, t)?;
        let n = self.dim();
        let g = self.value_unchecked(x, t);
        let ax = self.a.mul_vec(x);
        let gradient: Vec<f64> = ax.iter().map(|v| -g * v / (2.0 * t)).collect();
        let mut hessian = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                hessian[k * n + l] =
                    g * ax[k] * ax[l] / (4.0 * t * t) - g * self.a.get(k, l) / (2.0 * t);
            }
        }
        let q = self.a.quad_form(x);
        let time = (q / (4.0 * t * t) - n as f64 / (2.0 * t)) * g;
        Ok(KernelDerivatives {
            gradient,
            hessian,
            time,
        })
    }

    /// Σ (a⁻¹)_kl ∂²_kl G_a − ∂_t G_a from the closed forms; zero up to
    /// rounding.
    pub fn heat_residual(&self, x: &[f64], t: f64) -> Result<f64> {
        let d = self.derivatives(x, t)?;
        let n = self.dim();
        let mut trace = 0.0;
        for k in 0..n {
            for l in 0..n {
                trace += self.a_inv.get(k, l) * d.hessian[k * n + l];
            }
        }
        Ok(trace - d.time)
    }

    /// ∫ G_a(x, t) dx over the box |x_i| ≤ R, R = factor · √(2 λ t) with λ
    /// the largest eigenvalue of a⁻¹ (tensor composite Gauss–Legendre).
    pub fn mass(&self, t: f64, quad: &QuadratureScheme) -> Result<MassResult> {
        check_time(t)?;
        quad.check()?;
        let n = self.dim();
        let spread = *self.a_inv.eigenvalues().last().expect("n >= 1");
        let radius = quad.spatial_radius_factor * (2.0 * spread * t).sqrt();
        let panel = quad.panel_rule();
        let rule = panel.composite(-radius, radius, quad.panels_per_window());
        let mut total = 0.0;
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        loop {
            let mut w = 1.0;
            for i in 0..n {
                let (xi, wi) = rule[idx[i]];
                x[i] = xi;
                w *= wi;
            }
            total += w * self.value_unchecked(&x, t);
            if !advance(&mut idx, rule.len()) {
                break;
            }
        }
        // Marginal of G_a along axis i is normal with variance 2t(a⁻¹)_ii.
        let truncation: f64 = (0..n)
            .map(|i| {
                let sd = (2.0 * t * self.a_inv.get(i, i)).sqrt();
                erfc(radius / (sd * std::f64::consts::SQRT_2))
            })
            .sum();
        let warning = (truncation > 1e-10).then(|| {
            format!("integration box too small: estimated tail mass {truncation:.3e}")
        });
        Ok(MassResult {
            mass: total,
            truncation_estimate: truncation,
            warning,
        })
    }
}

/// Odometer increment over an n-dimensional tensor index; false on wrap.
pub(crate) fn advance(idx: &mut [usize], len: usize) -> bool {
    for i in idx.iter_mut() {
        *i += 1;
        if *i < len {
            return true;
        }
        *i = 0;
    }
    false
}

pub fn gen_gauss(k: &GenGaussKernel, x: &[f64], t: f64) -> Result<f64> {
    k.value(x, t)
}

pub fn gen_gauss_derivatives(k: &GenGaussKernel, x: &[f64], t: f64) -> Result<KernelDerivatives> {
    k.derivatives(x, t)
}

pub fn heat_residual(k: &GenGaussKernel, x: &[f64], t: f64) -> Result<f64> {
    k.heat_residual(x, t)
}

pub fn kernel_mass(k: &GenGaussKernel, t: f64, quad: &QuadratureScheme) -> Result<MassResult> {
    k.mass(t, quad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn gauss_kernel_reference_values() {
        assert!(close(gauss_kernel(&[0.0], 1.0).unwrap(), 0.282_094_791_8, 1e-9));
        assert!(close(gauss_kernel(&[0.0, 0.0], 1.0).unwrap(), 0.079_577_471_5, 1e-9));
        assert!(close(gauss_kernel(&[2.0], 1.0).unwrap(), 0.103_776_874_4, 1e-9));
        assert!(matches!(
            gauss_kernel(&[0.0], 0.0),
            Err(Error::NonPositiveTime { .. })
        ));
    }

    #[test]
    fn generalized_kernel_reference_values() {
        let k = GenGaussKernel::new(SpdMatrix::diagonal(&[4.0])).unwrap();
        assert!(close(k.value(&[1.0], 1.0).unwrap(), 0.207_553_7, 1e-6));
        assert!(close(k.value(&[0.0], 1.0).unwrap(), 0.564_189_6, 1e-6));
        let id = GenGaussKernel::new(SpdMatrix::identity(2)).unwrap();
        let x = [0.3, -1.2];
        assert!(close(
            id.value(&x, 0.7).unwrap(),
            gauss_kernel(&x, 0.7).unwrap(),
            1e-15
        ));
        assert!(k.value(&[1.0], -1.0).is_err());
        assert!(k.value(&[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn derivatives_at_origin() {
        let k = GenGaussKernel::new(SpdMatrix::identity(1)).unwrap();
        let d = k.derivatives(&[0.0], 1.0).unwrap();
        assert_eq!(d.gradient, vec![0.0]);
        assert!(close(d.time, -0.141_047_4, 1e-6));
    }

    #[test]
    fn heat_identity_examples() {
        let k = GenGaussKernel::new(SpdMatrix::identity(1)).unwrap();
        assert!(k.heat_residual(&[1.0], 0.5).unwrap().abs() < 1e-12);
        let k = GenGaussKernel::new(SpdMatrix::diagonal(&[2.0, 5.0])).unwrap();
        assert!(k.heat_residual(&[1.0, -1.0], 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn unit_mass() {
        let quad = QuadratureScheme {
            spatial_nodes_per_axis: 200,
            spatial_radius_factor: 12.0 / 2f64.sqrt(),
            ..Default::default()
        };
        let k = GenGaussKernel::new(SpdMatrix::identity(1)).unwrap();
        let m = k.mass(1.0, &quad).unwrap();
        assert!((m.mass - 1.0).abs() < 1e-8 && m.warning.is_none());
        let k = GenGaussKernel::new(SpdMatrix::diagonal(&[4.0])).unwrap();
        assert!((k.mass(0.5, &quad).unwrap().mass - 1.0).abs() < 1e-8);
        let quad2 = QuadratureScheme {
            spatial_nodes_per_axis: 64,
            spatial_radius_factor: 10.0,
            ..Default::default()
        };
        let k = GenGaussKernel::new(SpdMatrix::diagonal(&[1.0, 3.0])).unwrap();
        assert!((k.mass(1.0, &quad2).unwrap().mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn small_box_warns() {
        let quad = QuadratureScheme {
            spatial_radius_factor: 1.0,
            ..Default::default()
        };
        let k = GenGaussKernel::new(SpdMatrix::identity(1)).unwrap();
        let m = k.mass(1.0, &quad).unwrap();
        assert!(m.warning.is_some());
        assert!((1.0 - m.mass - m.truncation_estimate).abs() < 1e-6);
    }
}

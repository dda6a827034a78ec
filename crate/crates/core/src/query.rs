use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// A point (x, t; ξ, τ) with t > τ.
///
/// Stored as the source (ξ, τ) plus the offsets x − ξ and t − τ, so that
/// offsets far below the resolution of the absolute coordinates (t − τ of
/// order 1e-200, say) remain exact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelQuery {
    pub xi: Vec<f64>,
    pub tau: f64,
    pub dx: Vec<f64>,
    pub dt: f64,
}

impl KernelQuery {
    pub fn new(x: &[f64], t: f64, xi: &[f64], tau: f64) -> Result<Self> {
        if x.len() != xi.len() {
            return Err(Error::Dimension {
                expected: xi.len(),
                got: x.len(),
            });
        }
        Self::from_offsets(xi, tau, x.iter().zip(xi).map(|(a, b)| a - b).collect(), t - tau)
    }

    pub fn from_offsets(xi: &[f64], tau: f64, dx: Vec<f64>, dt: f64) -> Result<Self> {
        if dx.len() != xi.len() {
            return Err(Error::Dimension {
                expected: xi.len(),
                got: dx.len(),
            });
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::NonPositiveTime { dt });
        }
        Ok(Self {
            xi: xi.to_vec(),
            tau,
            dx,
            dt,
        })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn x(&self) -> Vec<f64> {
        self.xi.iter().zip(&self.dx).map(|(a, b)| a + b).collect()
    }

    pub fn t(&self) -> f64 {
        self.tau + self.dt
    }

    pub fn dist2(&self) -> f64 {
        self.dx.iter().map(|v| v * v).sum()
    }

    /// ρ = |x − ξ| / √(t − τ)
    pub fn rho(&self) -> f64 {
        (self.dist2() / self.dt).sqrt()
    }
}

/// Ranges for randomly drawn queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuerySampler {
    /// Base points are drawn uniformly from [−half_width, half_width]ⁿ.
    pub half_width: f64,
    pub tau: (f64, f64),
    /// t − τ is log-uniform on [dt_min, dt_max].
    pub dt_min: f64,
    pub dt_max: f64,
    /// ρ is uniform on [0, rho_max].
    pub rho_max: f64,
}

impl QuerySampler {
    pub fn new(dt_max: f64, rho_max: f64) -> Self {
        Self {
            half_width: 2.0,
            tau: (0.0, 1.0),
            dt_min: dt_max * 1e-3,
            dt_max,
            rho_max,
        }
    }

    /// `count` queries in dimension `n`, reproducible from `seed`.
    pub fn draw(&self, n: usize, count: usize, seed: u64) -> Result<Vec<KernelQuery>> {
        if !(self.dt_min > 0.0 && self.dt_max >= self.dt_min) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dt_min <= dt_max, got [{}, {}]",
                self.dt_min, self.dt_max
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l0, l1) = (self.dt_min.ln(), self.dt_max.ln());
        (0..count)
            .map(|_| {
                let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0) * self.half_width).collect();
                let tau = self.tau.0 + (self.tau.1 - self.tau.0) * rng.gen::<f64>();
                let dt = (l0 + (l1 - l0) * rng.gen::<f64>()).exp().min(self.dt_max);
                let rho = self.rho_max * rng.gen::<f64>();
                let dir = unit_vector(&mut rng, n);
                let r = rho * dt.sqrt();
                KernelQuery::from_offsets(&xi, tau, dir.iter().map(|d| d * r).collect(), dt)
            })
            .collect()
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let q = KernelQuery::new(&[3.0, 4.0], 5.0, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(q.dt, 4.0);
        assert_eq!(q.rho(), 2.5);
        assert_eq!(q.x(), vec![3.0, 4.0]);
        assert_eq!(q.t(), 5.0);
        let same = KernelQuery::new(&[1.0], 2.0, &[1.0], 0.0).unwrap();
        assert_eq!(same.rho(), 0.0);
    }

    #[test]
    fn rejects_non_positive_time() {
        assert!(matches!(
            KernelQuery::new(&[0.0], 1.0, &[0.0], 1.0),
            Err(Error::NonPositiveTime { .. })
        ));
        assert!(KernelQuery::new(&[0.0], 0.0, &[0.0], 1.0).is_err());
        assert!(KernelQuery::new(&[0.0, 1.0], 2.0, &[0.0], 1.0).is_err());
    }

    #[test]
    fn sampler_is_reproducible() {
        let s = QuerySampler::new(0.5, 3.0);
        let a = s.draw(2, 50, 7).unwrap();
        assert_eq!(a, s.draw(2, 50, 7).unwrap());
        assert!(a.iter().all(|q| q.dt <= 0.5 && q.rho() <= 3.0 + 1e-12));
    }

    #[test]
    fn tiny_offsets_survive() {
        let q = KernelQuery::from_offsets(&[0.3], 0.7, vec![1e-120], 1e-240).unwrap();
        assert_eq!(q.rho(), 1.0);
    }
}

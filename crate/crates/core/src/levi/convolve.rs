//! Space-time convolution ∫_τ^t ∫ f(x,t;η,σ) g(η,σ) dη dσ of a factor
//! concentrated near (x, t) with one concentrated near the base (ξ, τ).

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{graded_unit_rule, window_rule, GaussLegendre, QuadratureScheme};
use crate::query::KernelQuery;
use crate::special::beta;

use super::grid::GridKernel;

/// A kernel g(η, σ) attached to a base (ξ, τ), evaluated at offsets
/// (η − ξ, σ − τ).
pub trait SpaceTimeKernel: Sync {
    fn base(&self) -> (&[f64], f64);
    fn eval_offset(&self, offset: &[f64], theta: f64) -> Result<f64>;
    /// Largest σ − τ covered.
    fn horizon(&self) -> f64;
}

impl SpaceTimeKernel for GridKernel {
    fn base(&self) -> (&[f64], f64) {
        GridKernel::base(self)
    }

    fn eval_offset(&self, offset: &[f64], theta: f64) -> Result<f64> {
        GridKernel::eval_offset(self, offset, theta)
    }

    fn horizon(&self) -> f64 {
        self.t_max()
    }
}

/// A closed-form kernel `f(offset, θ)`.
pub struct AnalyticKernel<F> {
    xi: Vec<f64>,
    tau: f64,
    f: F,
}

impl<F> AnalyticKernel<F>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    pub fn new(xi: &[f64], tau: f64, f: F) -> Self {
        Self {
            xi: xi.to_vec(),
            tau,
            f,
        }
    }
}

impl<F> SpaceTimeKernel for AnalyticKernel<F>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    fn base(&self) -> (&[f64], f64) {
        (&self.xi, self.tau)
    }

    fn eval_offset(&self, offset: &[f64], theta: f64) -> Result<f64> {
        Ok((self.f)(offset, theta))
    }

    fn horizon(&self) -> f64 {
        f64::INFINITY
    }
}

/// Gaussian spread of the two factors: each behaves like
/// exp(−|z|²/(4 a Δt)) with `a ∈ [lo, hi]`, and centres may move by at most
/// `drift · Δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub lo: f64,
    pub hi: f64,
    pub drift: f64,
}

impl Spread {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, drift: 0.0 }
    }

    /// exp(−λ|z|²/Δt) on both sides.
    pub fn lambda(lambda: f64) -> Self {
        Self::new(0.25 / lambda, 0.25 / lambda)
    }
}

/// Precomputed rules for repeated convolutions over (0, θ) × ℝⁿ in offset
/// coordinates relative to a base point.
#[derive(Debug, Clone)]
pub struct Convolver {
    dim: usize,
    /// (u, 1 − u, weight), each stored exactly.
    time: Vec<(f64, f64, f64)>,
    panel: GaussLegendre,
    panels_per_window: usize,
    radius_factor: f64,
    spread: Spread,
}

impl Convolver {
    pub fn new(dim: usize, quad: &QuadratureScheme, grading: f64, spread: Spread) -> Result<Self> {
        quad.check()?;
        if !(spread.lo > 0.0 && spread.hi >= spread.lo) {
            return Err(Error::InvalidArgument(format!(
                "spread must satisfy 0 < lo <= hi, got {} / {}",
                spread.lo, spread.hi
            )));
        }
        let rule = graded_unit_rule(quad.time_nodes, grading);
        let half = rule.len() / 2;
        let left = &rule[..half];
        let mut time: Vec<(f64, f64, f64)> = left.iter().map(|&(u, w)| (u, 1.0 - u, w)).collect();
        time.extend(left.iter().rev().map(|&(u, w)| (1.0 - u, u, w)));
        Ok(Self {
            dim,
            time,
            panel: quad.panel_rule(),
            panels_per_window: quad.panels_per_window(),
            radius_factor: quad.spatial_radius_factor,
            spread,
        })
    }

    pub fn spread(&self) -> Spread {
        self.spread
    }

    /// Per-axis rules for the product of factors centred at `target`
    /// (time gap dt1) and at the origin (time gap dt2).
    pub fn spatial_rules(&self, target: &[f64], dt1: f64, dt2: f64) -> Vec<Vec<(f64, f64)>> {
        let Spread { lo, hi, drift } = self.spread;
        let f_min = lo * dt2 / (hi * dt1 + lo * dt2);
        let f_max = hi * dt2 / (lo * dt1 + hi * dt2);
        let sd = (2.0 * hi * dt1 * dt2 / (dt1 + dt2)).sqrt();
        let radius = self.radius_factor * sd;
        // The product is pinned by the sharper factor, so its centre moves
        // with the shorter gap only.
        let shift = drift * dt1.min(dt2);
        target
            .iter()
            .map(|&c| {
                let (a, b) = (f_min * c, f_max * c);
                let lo_edge = a.min(b) - radius - shift;
                let hi_edge = a.max(b) + radius + shift;
                window_rule(&self.panel, lo_edge, hi_edge, radius, self.panels_per_window)
            })
            .collect()
    }

    /// ∫_0^θ ∫ h(e, s) de ds, where h(e, s) is the product of a factor
    /// centred at `target` with time gap θ − s and a factor centred at the
    /// origin with time gap s. `base` is only used in diagnostics.
    pub fn integrate<F>(
        &self,
        base: (&[f64], f64),
        target: &[f64],
        theta: f64,
        mut h: F,
    ) -> Result<f64>
    where
        F: FnMut(&[f64], f64, f64) -> Result<f64>,
    {
        let n = self.dim;
        let mut total = 0.0;
        let mut e = vec![0.0; n];
        let mut idx = vec![0usize; n];
        for &(u, one_minus_u, wu) in &self.time {
            let s = theta * u;
            let dt1 = theta * one_minus_u;
            let rules = self.spatial_rules(target, dt1, s);
            let mut slice = 0.0;
            idx.iter_mut().for_each(|v| *v = 0);
            loop {
                let mut w = 1.0;
                for i in 0..n {
                    let (node, wi) = rules[i][idx[i]];
                    e[i] = node;
                    w *= wi;
                }
                let v = h(&e, s, dt1)?;
                if !v.is_finite() {
                    let mut node: Vec<f64> = base.0.iter().zip(&e).map(|(a, b)| a + b).collect();
                    node.push(base.1 + s);
                    return Err(Error::NonFinite { value: v, node });
                }
                slice += w * v;
                if !advance_ragged(&mut idx, &rules) {
                    break;
                }
            }
            total += wu * theta * slice;
        }
        Ok(total)
    }
}

fn advance_ragged(idx: &mut [usize], rules: &[Vec<(f64, f64)>]) -> bool {
    for (i, r) in idx.iter_mut().zip(rules) {
        *i += 1;
        if *i < r.len() {
            return true;
        }
        *i = 0;
    }
    false
}

/// ∫_τ^t ∫ f(x,t;η,σ) g(η,σ) dη dσ for the query (x, t; ξ, τ), where g is
/// based at (ξ, τ). The time rule is graded toward both endpoints with
/// the scheme's exponent (4 when unset).
pub fn spacetime_convolve(
    f: &(dyn Fn(&[f64], f64, &[f64], f64) -> f64 + Sync),
    g: &dyn SpaceTimeKernel,
    qy: &KernelQuery,
    quad: &QuadratureScheme,
    spread: Spread,
) -> Result<f64> {
    let (xi, tau) = g.base();
    if xi != qy.xi.as_slice() || tau != qy.tau {
        return Err(Error::InvalidArgument(
            "kernel base does not match the query source point".into(),
        ));
    }
    if g.horizon() < qy.dt * (1.0 - 1e-12) {
        return Err(Error::GridCoverage {
            t: qy.t(),
            t_max: tau + g.horizon(),
        });
    }
    let conv = Convolver::new(qy.dim(), quad, quad.time_grading_exponent.unwrap_or(4.0), spread)?;
    let x = qy.x();
    let t = qy.t();
    let mut eta = vec![0.0; qy.dim()];
    conv.integrate((xi, tau), &qy.dx, qy.dt, |e, s, _| {
        let inner = g.eval_offset(e, s)?;
        if inner == 0.0 {
            return Ok(0.0);
        }
        for (slot, (a, b)) in eta.iter_mut().zip(xi.iter().zip(e)) {
            *slot = a + b;
        }
        Ok(f(&x, t, &eta, tau + s) * inner)
    })
}

/// Closed form of
/// ∫_τ^t ∫ (t−σ)^(−n/2−γ) e^(−λ|x−η|²/(t−σ)) (σ−τ)^(−n/2−δ) e^(−λ|η−ξ|²/(σ−τ)) dη dσ
/// = (4π/λ)^(n/2) B(1−γ, 1−δ) (t−τ)^(−n/2+1−γ−δ) e^(−λ|x−ξ|²/(t−τ)).
pub fn beta_convolution_reference(lambda: f64, gamma: f64, delta: f64, qy: &KernelQuery) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(gamma < 1.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exponents must be below 1, got gamma = {gamma}, delta = {delta}"
        )));
    }
    let n = qy.dim() as f64;
    Ok((4.0 * PI / lambda).powf(n / 2.0)
        * beta(1.0 - gamma, 1.0 - delta)
        * qy.dt.powf(-n / 2.0 + 1.0 - gamma - delta)
        * (-lambda * qy.dist2() / qy.dt).exp())
}

/// The exact value of the integral in [`beta_convolution_reference`]:
/// the Gaussian η-integral contributes (π/λ)^(n/2), so the displayed
/// closed form exceeds the integral by the factor 2ⁿ.
pub fn beta_convolution_exact(lambda: f64, gamma: f64, delta: f64, qy: &KernelQuery) -> Result<f64> {
    Ok(beta_convolution_reference(lambda, gamma, delta, qy)? * 0.5f64.powi(qy.dim() as i32))
}

/// One factor of the space-time convolution integrand: Δt^(−n/2−γ) e^(−λ|z|²/Δt).
pub fn beta_factor(lambda: f64, gamma: f64, z2: f64, dt: f64, n: usize) -> f64 {
    dt.powf(-(n as f64) / 2.0 - gamma) * (-lambda * z2 / dt).exp()
}

/// Numerical value of the convolution of two such factors with `quad`.
pub fn beta_convolution_numeric(
    lambda: f64,
    gamma: f64,
    delta: f64,
    qy: &KernelQuery,
    quad: &QuadratureScheme,
) -> Result<f64> {
    let n = qy.dim();
    let g = AnalyticKernel::new(&qy.xi, qy.tau, move |off: &[f64], th: f64| {
        let z2: f64 = off.iter().map(|v| v * v).sum();
        beta_factor(lambda, delta, z2, th, n)
    });
    let f = move |x: &[f64], t: f64, eta: &[f64], sigma: f64| {
        let z2: f64 = x.iter().zip(eta).map(|(a, b)| (a - b) * (a - b)).sum();
        beta_factor(lambda, gamma, z2, t - sigma, n)
    };
    spacetime_convolve(&f, &g, qy, quad, Spread::lambda(lambda))
}

/// One case of the closed-form sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCase {
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    pub exact: f64,
    pub numeric: f64,
    pub rel_err: f64,
    pub refined_rel_err: f64,
}

/// Compares the quadrature against the exact closed form for λ ∈ {c, 1, 2},
/// γ, δ ∈ {0, 1/4, 1/2}, n ∈ {1, 2}, at `quad` and one refinement.
pub fn lemma_sweep(c: f64, quad: &QuadratureScheme) -> Result<Vec<SweepCase>> {
    let fine = quad.refined();
    let mut cases = Vec::new();
    for n in [1usize, 2] {
        for lambda in [c, 1.0, 2.0] {
            for gamma in [0.0, 0.25, 0.5] {
                for delta in [0.0, 0.25, 0.5] {
                    cases.push((n, lambda, gamma, delta));
                }
            }
        }
    }
    cases
        .into_iter()
        .map(|(n, lambda, gamma, delta)| {
            let x: Vec<f64> = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
            let qy = KernelQuery::new(&x, 1.0, &vec![0.0; n], 0.0)?;
            let exact = beta_convolution_exact(lambda, gamma, delta, &qy)?;
            let numeric = beta_convolution_numeric(lambda, gamma, delta, &qy, quad)?;
            let refined = beta_convolution_numeric(lambda, gamma, delta, &qy, &fine)?;
            Ok(SweepCase {
                n,
                lambda,
                gamma,
                delta,
                exact,
                numeric,
                rel_err: (numeric - exact).abs() / exact,
                refined_rel_err: (refined - exact).abs() / exact,
            })
        })
        .collect()
}

//! The Levi series Φ = Σ Φ_ℓ on grids based at (ξ, τ), its analytic
//! majorants, and the assembled fundamental solution E = Z + Z ⋆ Φ.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{CoefficientField, Structure};
use crate::error::{Error, Result};
use crate::parametrix::{constant_c, Frozen, TargetCoeffs};
use crate::quadrature::{GaussLegendre, QuadratureScheme};
use crate::query::KernelQuery;
use crate::special::{digamma, ln_gamma, ln_gamma_increment, log_sum_exp};

use super::convolve::{Convolver, Spread};
use super::grid::{GridKernel, GridSpec};

/// Below this t − τ the grids degenerate and E is returned as Z.
pub const DEGENERATE_DT: f64 = 1e-10;

/// Which time power the iterate envelopes carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnvelopeVariant {
    /// (t−τ)^(−n/2−1+β) for every ℓ; valid for t − τ ≤ 1.
    UnitTime,
    /// (t−τ)^(−n/2−1+ℓβ); valid for all t − τ.
    Sharp,
}

/// The analytic bounds |Φ_ℓ| ≤ C̄ Λ^ℓ/Γ(ℓβ) (t−τ)^(…) e^(−cρ²).
///
/// For ℓ = 1 the formula reduces to C, since C̄ Λ / Γ(β) = C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Majorant {
    pub n: usize,
    pub beta: f64,
    pub c_const: f64,
    pub c_rate: f64,
    /// ln C̃ with C̃ = (4π/c)^(n/2).
    pub ln_ctilde: f64,
    /// ln Λ with Λ = C C̃ Γ(β); −∞ when C = 0.
    pub ln_lambda: f64,
}

impl Majorant {
    pub fn new(s: &Structure, c_const: f64, c_rate: f64) -> Self {
        let n = s.n;
        let beta = s.beta();
        let ln_ctilde = 0.5 * n as f64 * (4.0 * std::f64::consts::PI / c_rate).ln();
        let ln_lambda = if c_const > 0.0 {
            c_const.ln() + ln_ctilde + ln_gamma(beta)
        } else {
            f64::NEG_INFINITY
        };
        Self {
            n,
            beta,
            c_const,
            c_rate,
            ln_ctilde,
            ln_lambda,
        }
    }

    /// The theorem's majorant: C from the field, c = 1/(8M).
    pub fn for_field(field: &CoefficientField) -> Self {
        let s = field.structure();
        Self::new(s, constant_c(field), 1.0 / (8.0 * s.big_m))
    }

    /// ln(C̄ Λ^ℓ / Γ(ℓβ)).
    pub fn ln_coefficient(&self, ell: usize) -> f64 {
        -self.ln_ctilde + ell as f64 * self.ln_lambda - ln_gamma(ell as f64 * self.beta)
    }

    fn time_power(&self, ell: usize, variant: EnvelopeVariant) -> f64 {
        let k = match variant {
            EnvelopeVariant::UnitTime => 1.0,
            EnvelopeVariant::Sharp => ell as f64,
        };
        -(self.n as f64) / 2.0 - 1.0 + k * self.beta
    }

    /// Envelope of |Φ_ℓ| at (ρ, t − τ).
    pub fn iterate_bound(&self, ell: usize, rho: f64, dt: f64, variant: EnvelopeVariant) -> f64 {
        if self.c_const == 0.0 {
            return 0.0;
        }
        (self.ln_coefficient(ell) + self.time_power(ell, variant) * dt.ln() - self.c_rate * rho * rho).exp()
    }

    /// ln Σ_{ℓ>L} C̄ Λ^ℓ/Γ(ℓβ) q^ℓ, with ln q = `ln_q`.
    ///
    /// The log-terms are concave in ℓ, so the sum runs outwards from the
    /// largest term and stops on each side once terms fall 1e-16 below it.
    /// Peaks beyond 10⁷ are bounded by an integral instead.
    fn ln_tail_sum(&self, after: usize, ln_q: f64) -> f64 {
        self.ln_tail_sum_with(after, ln_q, 1e7)
    }

    /// `exact_up_to` is the largest peak index still summed term by term.
    fn ln_tail_sum_with(&self, after: usize, ln_q: f64, exact_up_to: f64) -> f64 {
        if self.c_const == 0.0 {
            return f64::NEG_INFINITY;
        }
        let term = |ell: usize| self.ln_coefficient(ell) + ell as f64 * ln_q;
        let first = after + 1;
        let slope = self.ln_lambda + ln_q;
        let r = slope / self.beta;
        // log-terms are concave in ℓ with peak where ψ(ℓβ) = r
        let x0 = first as f64 * self.beta;
        if digamma(x0) >= r {
            return Self::sum_outward(&term, first, first);
        }
        if r > 700.0 {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (x0.ln(), (r.exp() + 2.0).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if digamma(mid.exp()) < r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x_star = (0.5 * (lo + hi)).exp();
        let ell_star = x_star / self.beta;
        if ell_star <= exact_up_to {
            let f = (ell_star.floor() as usize).max(first);
            let peak = if term(f + 1) > term(f) { f + 1 } else { f };
            return Self::sum_outward(&term, first, peak);
        }

        // Terms far beyond f64 resolution of their differences: bound the sum
        // by the largest term plus the integral of the continuous envelope,
        // with increments taken from Stirling's series.
        let beta = self.beta;
        let g = |u: f64| u * slope - ln_gamma_increment(x_star, beta * u);
        let dg = |u: f64| {
            let v = beta * u;
            -beta * ((v / x_star).ln_1p() - 0.5 / (x_star + v) + 0.5 / x_star)
        };
        let f_star = -self.ln_ctilde + ell_star * slope - ln_gamma(x_star);
        let w = (ell_star / beta).sqrt();
        let u0 = first as f64 - ell_star;
        let (a, b) = (u0.max(-12.0 * w), 12.0 * w);
        let mut parts: Vec<f64> = GaussLegendre::new(8)
            .composite(a, b, 96)
            .into_iter()
            .map(|(u, wt)| g(u) + wt.ln())
            .collect();
        parts.push(g(b) - (-dg(b)).ln());
        if u0 < a {
            parts.push(g(a) - dg(a).ln());
        }
        let integral = log_sum_exp(&parts);
        f_star + log_sum_exp(&[0.0, integral])
    }

    /// Sums concave log-terms outward from `peak` until they fall e^-37 below it.
    fn sum_outward(term: &dyn Fn(usize) -> f64, first: usize, peak: usize) -> f64 {
        let top = term(peak);
        let mut acc = top;
        let mut ell = peak;
        while ell > first {
            ell -= 1;
            let t = term(ell);
            acc = log_sum_exp(&[acc, t]);
            if t - top < -37.0 {
                break;
            }
        }
        let mut ell = peak;
        loop {
            ell += 1;
            let t = term(ell);
            acc = log_sum_exp(&[acc, t]);
            if t - top < -37.0 {
                return acc;
            }
        }
    }

    /// Σ_{ℓ>L} of the iterate envelopes at (ρ, t − τ).
    pub fn tail_bound(&self, after: usize, rho: f64, dt: f64, variant: EnvelopeVariant) -> f64 {
        self.ln_tail_bound(after, rho, dt, variant).exp()
    }

    pub fn ln_tail_bound(&self, after: usize, rho: f64, dt: f64, variant: EnvelopeVariant) -> f64 {
        let n = self.n as f64;
        let (ln_q, base_power) = match variant {
            EnvelopeVariant::UnitTime => (0.0, -n / 2.0 - 1.0 + self.beta),
            EnvelopeVariant::Sharp => (self.beta * dt.ln(), -n / 2.0 - 1.0),
        };
        self.ln_tail_sum(after, ln_q) + base_power * dt.ln() - self.c_rate * rho * rho
    }

    /// Tail after L terms relative to the Φ₁ envelope, maximised over
    /// t − τ ≤ `horizon` (sharp variant).
    pub fn relative_tail(&self, after: usize, horizon: f64) -> f64 {
        if self.c_const == 0.0 {
            return 0.0;
        }
        let ln_q = self.beta * horizon.ln();
        (self.ln_tail_sum(after, ln_q) - ln_q - self.c_const.ln()).exp()
    }

    /// ln S with S = C + C̄ Σ_{ℓ≥2} Λ^ℓ/Γ(ℓβ).
    pub fn ln_s(&self) -> f64 {
        if self.c_const == 0.0 {
            return f64::NEG_INFINITY;
        }
        log_sum_exp(&[self.c_const.ln(), self.ln_tail_sum(1, 0.0)])
    }
}

/// S = C + C̄ Σ_{ℓ≥2} Λ^ℓ/Γ(ℓβ) for the field (may be +∞ when it
/// overflows; see [`Majorant::ln_s`]).
pub fn series_majorant_s(field: &CoefficientField) -> f64 {
    Majorant::for_field(field).ln_s().exp()
}

/// When to stop adding Levi iterates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopRule {
    /// Analytic (sharp) tail relative to the Φ₁ envelope below `tol`;
    /// failing within `ell_max` terms is an error.
    Analytic,
    /// Observed geometric decay of grid sup-norms; the remainder estimate
    /// below `tol` relative to Φ₁.
    Observed,
    /// Exactly `ell_max` terms.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeviOptions {
    pub quad: QuadratureScheme,
    pub grid: GridSpec,
    pub ell_max: usize,
    pub tol: f64,
    pub stop: StopRule,
}

impl LeviOptions {
    pub fn for_dim(n: usize) -> Self {
        Self {
            quad: QuadratureScheme::default(),
            grid: GridSpec::for_dim(n),
            ell_max: 12,
            tol: 1e-4,
            stop: StopRule::Observed,
        }
    }

    pub fn with_quad(mut self, quad: QuadratureScheme) -> Self {
        self.quad = quad;
        self
    }

    pub fn check(&self) -> Result<()> {
        self.quad.check()?;
        self.grid.check()?;
        if self.ell_max < 1 {
            return Err(Error::InvalidArgument("ell_max must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// E at one point with its parts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    pub z: f64,
    pub correction: f64,
    pub terms_used: usize,
    pub warning: Option<String>,
}

/// Levi iterates for one base point up to a horizon, able to evaluate Φ and
/// E anywhere with σ − τ ≤ horizon.
#[derive(Debug)]
pub struct LeviSolution {
    field: CoefficientField,
    xi: Vec<f64>,
    tau: f64,
    horizon: f64,
    base: Frozen,
    majorant: Majorant,
    /// Φ₁ sampled on the grid (diagnostics only; evaluation is analytic).
    phi1_grid: Option<GridKernel>,
    /// Φ₂, Φ₃, …
    iterates: Vec<GridKernel>,
    /// sup θ^(n/2+1−β) |Φ_ℓ| over the grid, ℓ = 1, 2, …
    norms: Vec<f64>,
    remainder: f64,
    converged: bool,
    convolver: Convolver,
}

impl LeviSolution {
    pub fn build(
        field: &CoefficientField,
        xi: &[f64],
        tau: f64,
        horizon: f64,
        opts: &LeviOptions,
    ) -> Result<Self> {
        opts.check()?;
        let s = *field.structure();
        if xi.len() != s.n {
            return Err(Error::Dimension {
                expected: s.n,
                got: xi.len(),
            });
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::NonPositiveTime { dt: horizon });
        }
        let base = Frozen::at(field, xi, tau)?;
        let majorant = Majorant::for_field(field);
        let mut spread = Spread::new(s.kappa, s.big_m);
        if field.has_drift() {
            spread.drift = s.n2;
        }
        let convolver = Convolver::new(s.n, &opts.quad, opts.quad.grading_for(s.beta()), spread)?;
        let mut sol = Self {
            field: field.clone(),
            xi: xi.to_vec(),
            tau,
            horizon,
            base,
            majorant,
            phi1_grid: None,
            iterates: Vec::new(),
            norms: Vec::new(),
            remainder: 0.0,
            converged: true,
            convolver,
        };
        if field.is_trivially_exact() || horizon < DEGENERATE_DT {
            sol.norms.push(0.0);
            return Ok(sol);
        }
        let n = s.n as f64;
        let p1 = n / 2.0 + 1.0 - s.beta();
        let y_max = opts.grid.radius_factor * (2.0 * s.big_m).sqrt();
        let phi1 = GridKernel::sample(xi, tau, horizon, y_max, &opts.grid, p1, |off, th| {
            Ok(sol.phi1(off, th))
        })?;
        let m1 = phi1.max_scaled();
        sol.norms.push(m1);
        sol.phi1_grid = Some(phi1);
        if m1 == 0.0 {
            return Ok(sol);
        }
        let mut stopped = opts.ell_max == 1;
        let mut ell = 1;
        while ell < opts.ell_max {
            let power = n / 2.0 + 1.0 - (ell + 1) as f64 * s.beta();
            let mut next = GridKernel::zeros(xi, tau, horizon, y_max, &opts.grid, power)?;
            {
                let prev = if ell == 1 { None } else { self_last(&sol.iterates) };
                next.fill(|off, th| sol.convolve_phi1(off, th, prev)).map_err(|e| Error::Iterate {
                    iterate: ell + 1,
                    source: Box::new(e),
                })?;
            }
            let m = next.max_weighted(p1);
            let m_prev = *sol.norms.last().expect("norms start with Φ₁");
            sol.iterates.push(next);
            sol.norms.push(m);
            ell += 1;
            match opts.stop {
                StopRule::Fixed => {}
                StopRule::Analytic => {
                    let tail = majorant.relative_tail(ell, horizon);
                    sol.remainder = tail * m1;
                    if tail < opts.tol {
                        stopped = true;
                        break;
                    }
                }
                StopRule::Observed => {
                    let r = if m_prev > 0.0 { m / m_prev } else { 0.0 };
                    let rem = if r < 1.0 { m * r / (1.0 - r) } else { f64::INFINITY };
                    sol.remainder = rem;
                    if rem <= opts.tol * m1 {
                        stopped = true;
                        break;
                    }
                }
            }
        }
        if opts.stop == StopRule::Fixed {
            stopped = true;
        }
        if !stopped {
            if opts.stop == StopRule::Analytic {
                return Err(Error::TruncationFailure {
                    achieved_tail: majorant.relative_tail(ell, horizon),
                    tol: opts.tol,
                    terms: ell,
                });
            }
            sol.converged = false;
        }
        Ok(sol)
    }

    pub fn base(&self) -> (&[f64], f64) {
        (&self.xi, self.tau)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn majorant(&self) -> &Majorant {
        &self.majorant
    }

    /// Number of Levi terms summed (Φ₁ counts as one).
    pub fn terms_used(&self) -> usize {
        1 + self.iterates.len()
    }

    /// Observed sup-norms θ^(n/2+1−β)|Φ_ℓ| per iterate.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Estimated remainder of the truncated series (stop-rule dependent).
    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    /// Φ₁, Φ₂, … as grids (Φ₁ sampled).
    pub fn grids(&self) -> Vec<&GridKernel> {
        self.phi1_grid.iter().chain(self.iterates.iter()).collect()
    }

    /// Φ₁(ξ+offset, τ+θ; ξ, τ), analytic.
    pub fn phi1(&self, offset: &[f64], theta: f64) -> f64 {
        let x: Vec<f64> = self.xi.iter().zip(offset).map(|(a, b)| a + b).collect();
        let target = TargetCoeffs::at(&self.field, &x, self.tau + theta);
        self.base.psi(&target, offset, theta) * self.base.z(offset, theta)
    }

    /// Φ_ℓ at an offset: ℓ = 1 analytic, ℓ ≥ 2 from the grids.
    pub fn phi_ell(&self, ell: usize, offset: &[f64], theta: f64) -> Result<f64> {
        match ell {
            0 => Err(Error::InvalidArgument("iterates are numbered from 1".into())),
            1 => Ok(self.phi1(offset, theta)),
            l => self
                .iterates
                .get(l - 2)
                .ok_or_else(|| Error::InvalidArgument(format!("iterate {l} was not computed")))?
                .eval_offset(offset, theta),
        }
    }

    /// Φ = Σ_ℓ Φ_ℓ over the computed terms.
    pub fn phi(&self, offset: &[f64], theta: f64) -> Result<f64> {
        self.check_time(theta)?;
        let mut v = self.phi1(offset, theta);
        for g in &self.iterates {
            v += g.eval_offset(offset, theta)?;
        }
        Ok(v)
    }

    fn check_time(&self, theta: f64) -> Result<()> {
        if !(theta > 0.0) {
            return Err(Error::NonPositiveTime { dt: theta });
        }
        if theta > self.horizon * (1.0 + 1e-12) {
            return Err(Error::GridCoverage {
                t: self.tau + theta,
                t_max: self.tau + self.horizon,
            });
        }
        Ok(())
    }

    /// ∫_0^θ ∫ Φ₁(ξ+o, τ+θ; ζ, s) g(ζ, s) dζ ds, with g = Φ₁(·;ξ,τ) when
    /// `prev` is `None` and the grid `prev` otherwise.
    fn convolve_phi1(&self, offset: &[f64], theta: f64, prev: Option<&GridKernel>) -> Result<f64> {
        let n = self.xi.len();
        let x: Vec<f64> = self.xi.iter().zip(offset).map(|(a, b)| a + b).collect();
        let target = TargetCoeffs::at(&self.field, &x, self.tau + theta);
        let mut zeta = vec![0.0; n];
        let mut dx = vec![0.0; n];
        self.convolver.integrate((&self.xi, self.tau), offset, theta, |e, s, dt1| {
            for i in 0..n {
                zeta[i] = self.xi[i] + e[i];
                dx[i] = offset[i] - e[i];
            }
            let at_zeta = TargetCoeffs::at(&self.field, &zeta, self.tau + s);
            let inner = match prev {
                None => self.base.psi(&at_zeta, e, s) * self.base.z(e, s),
                Some(g) => g.eval_offset(e, s)?,
            };
            if inner == 0.0 {
                return Ok(0.0);
            }
            let frozen = Frozen::from_matrix(n, &at_zeta.a)?;
            Ok(frozen.psi(&target, &dx, dt1) * frozen.z(&dx, dt1) * inner)
        })
    }

    /// E(x, t; ξ, τ) = Z + ∫∫ Z(x,t;ζ,s) Φ(ζ,s;ξ,τ) dζ ds.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<Evaluation> {
        let n = self.xi.len();
        if x.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: x.len(),
            });
        }
        let offset: Vec<f64> = x.iter().zip(&self.xi).map(|(a, b)| a - b).collect();
        self.evaluate_offset(&offset, t - self.tau)
    }

    /// E at (ξ + offset, τ + θ).
    pub fn evaluate_offset(&self, offset: &[f64], theta: f64) -> Result<Evaluation> {
        self.check_time(theta)?;
        let z = self.base.z(offset, theta);
        let mut warning = None;
        let correction = if theta < DEGENERATE_DT {
            warning = Some(format!(
                "t - tau = {theta:e} is below {DEGENERATE_DT:e}; returning the parametrix alone"
            ));
            0.0
        } else if self.field.is_trivially_exact() || self.norms[0] == 0.0 {
            0.0
        } else {
            let n = self.xi.len();
            let mut zeta = vec![0.0; n];
            let mut dx = vec![0.0; n];
            self.convolver.integrate((&self.xi, self.tau), offset, theta, |e, s, dt1| {
                for i in 0..n {
                    zeta[i] = self.xi[i] + e[i];
                    dx[i] = offset[i] - e[i];
                }
                let at_zeta = TargetCoeffs::at(&self.field, &zeta, self.tau + s);
                let mut inner = self.base.psi(&at_zeta, e, s) * self.base.z(e, s);
                for g in &self.iterates {
                    inner += g.eval_offset(e, s)?;
                }
                if inner == 0.0 {
                    return Ok(0.0);
                }
                let frozen = Frozen::from_matrix(n, &at_zeta.a)?;
                Ok(frozen.z(&dx, dt1) * inner)
            })?
        };
        if !self.converged && warning.is_none() {
            warning = Some(format!(
                "Levi series not converged after {} terms (remainder estimate {:.3e})",
                self.terms_used(),
                self.remainder
            ));
        }
        Ok(Evaluation {
            value: z + correction,
            z,
            correction,
            terms_used: self.terms_used(),
            warning,
        })
    }
}

fn self_last(v: &[GridKernel]) -> Option<&GridKernel> {
    v.last()
}

/// Φ₁ … Φ_{ell_max} for the base (ξ, τ) on (τ, τ + t_max], as grids.
pub fn levi_iterates(
    field: &CoefficientField,
    xi: &[f64],
    tau: f64,
    t_max: f64,
    quad: &QuadratureScheme,
    ell_max: usize,
) -> Result<Vec<GridKernel>> {
    let opts = LeviOptions {
        ell_max,
        stop: StopRule::Fixed,
        ..LeviOptions::for_dim(field.dim()).with_quad(*quad)
    };
    let sol = LeviSolution::build(field, xi, tau, t_max, &opts)?;
    if sol.phi1_grid.is_none() {
        // Φ₁ ≡ 0: every iterate vanishes.
        let s = field.structure();
        let y_max = opts.grid.radius_factor * (2.0 * s.big_m).sqrt();
        return (1..=ell_max)
            .map(|l| {
                let p = s.n as f64 / 2.0 + 1.0 - l as f64 * s.beta();
                GridKernel::zeros(xi, tau, t_max, y_max, &opts.grid, p)
            })
            .collect();
    }
    Ok(sol.grids().into_iter().cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
    pub terms_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesOptions {
    pub levi: LeviOptions,
    pub variant: EnvelopeVariant,
}

impl SeriesOptions {
    pub fn for_dim(n: usize) -> Self {
        Self {
            levi: LeviOptions::for_dim(n),
            variant: EnvelopeVariant::Sharp,
        }
    }
}

/// Φ(x, t; ξ, τ) summed until the analytic tail at the query drops below
/// `tol`.
pub fn phi_series(field: &CoefficientField, qy: &KernelQuery, quad: &QuadratureScheme, tol: f64) -> Result<SeriesValue> {
    let mut opts = SeriesOptions::for_dim(field.dim());
    opts.levi.quad = *quad;
    opts.levi.tol = tol;
    phi_series_with(field, qy, &opts)
}

pub fn phi_series_with(field: &CoefficientField, qy: &KernelQuery, opts: &SeriesOptions) -> Result<SeriesValue> {
    opts.levi.check()?;
    let majorant = Majorant::for_field(field);
    let rho = qy.rho();
    let tol = opts.levi.tol;
    let mut terms = None;
    for l in 1..=opts.levi.ell_max {
        if majorant.tail_bound(l, rho, qy.dt, opts.variant) < tol {
            terms = Some(l);
            break;
        }
    }
    let Some(terms) = terms else {
        return Err(Error::TruncationFailure {
            achieved_tail: majorant.tail_bound(opts.levi.ell_max, rho, qy.dt, opts.variant),
            tol,
            terms: opts.levi.ell_max,
        });
    };
    let tail_bound = majorant.tail_bound(terms, rho, qy.dt, opts.variant);
    if field.is_trivially_exact() {
        return Ok(SeriesValue {
            value: 0.0,
            tail_bound,
            terms_used: 1,
        });
    }
    let levi = LeviOptions {
        ell_max: terms,
        stop: StopRule::Fixed,
        ..opts.levi
    };
    let sol = LeviSolution::build(field, &qy.xi, qy.tau, qy.dt, &levi)?;
    Ok(SeriesValue {
        value: sol.phi(&qy.dx, qy.dt)?,
        tail_bound,
        terms_used: sol.terms_used(),
    })
}

/// E(x, t; ξ, τ) by direct assembly on (τ, t].
pub fn fundamental_solution(
    field: &CoefficientField,
    qy: &KernelQuery,
    quad: &QuadratureScheme,
    tol: f64,
) -> Result<Evaluation> {
    let opts = LeviOptions {
        tol,
        ..LeviOptions::for_dim(field.dim()).with_quad(*quad)
    };
    fundamental_solution_with(field, qy, &opts)
}

pub fn fundamental_solution_with(field: &CoefficientField, qy: &KernelQuery, opts: &LeviOptions) -> Result<Evaluation> {
    if qy.dim() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: qy.dim(),
        });
    }
    LeviSolution::build(field, &qy.xi, qy.tau, qy.dt, opts)?.evaluate_offset(&qy.dx, qy.dt)
}

/// Levi solutions keyed by the exact bits of (ξ, τ, horizon).
#[derive(Debug)]
pub struct SolutionCache {
    field: CoefficientField,
    opts: LeviOptions,
    map: Mutex<HashMap<Vec<u64>, Arc<LeviSolution>>>,
}

impl SolutionCache {
    pub fn new(field: &CoefficientField, opts: LeviOptions) -> Self {
        Self {
            field: field.clone(),
            opts,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    pub fn options(&self) -> &LeviOptions {
        &self.opts
    }

    pub fn get(&self, xi: &[f64], tau: f64, horizon: f64) -> Result<Arc<LeviSolution>> {
        let mut key: Vec<u64> = xi.iter().map(|v| v.to_bits()).collect();
        key.push(tau.to_bits());
        key.push(horizon.to_bits());
        if let Some(s) = self.map.lock().expect("solution cache poisoned").get(&key) {
            return Ok(Arc::clone(s));
        }
        let sol = Arc::new(LeviSolution::build(&self.field, xi, tau, horizon, &self.opts)?);
        self.map
            .lock()
            .expect("solution cache poisoned")
            .insert(key, Arc::clone(&sol));
        Ok(sol)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("solution cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproducingReport {
    pub lhs: f64,
    pub rhs: f64,
    pub rel_residual: f64,
    pub nodes: usize,
}

/// Compares ∫ E(x,t;η,σ) E(η,σ;ξ,τ) dη with E(x,t;ξ,τ).
pub fn reproducing_check(
    field: &CoefficientField,
    qy: &KernelQuery,
    sigma: f64,
    quad: &QuadratureScheme,
) -> Result<ReproducingReport> {
    let opts = LeviOptions::for_dim(field.dim()).with_quad(*quad);
    reproducing_check_with(&SolutionCache::new(field, opts), qy, sigma)
}

pub fn reproducing_check_with(cache: &SolutionCache, qy: &KernelQuery, sigma: f64) -> Result<ReproducingReport> {
    let t = qy.t();
    if !(sigma > qy.tau && sigma < t) {
        return Err(Error::InvalidArgument(format!(
            "sigma = {sigma} must lie strictly between tau = {} and t = {t}",
            qy.tau
        )));
    }
    let s = *cache.field().structure();
    let n = s.n;
    let x = qy.x();
    let whole = cache.get(&qy.xi, qy.tau, qy.dt)?;
    let rhs = whole.evaluate_offset(&qy.dx, qy.dt)?.value;
    let dt2 = sigma - qy.tau;
    let dt1 = t - sigma;
    let conv = Convolver::new(n, &cache.options().quad, 1.0, Spread::new(s.kappa, s.big_m))?;
    let rules = conv.spatial_rules(&qy.dx, dt1, dt2);
    let mut nodes: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let mut w = 1.0;
        let mut e = vec![0.0; n];
        for i in 0..n {
            let (v, wi) = rules[i][idx[i]];
            e[i] = v;
            w *= wi;
        }
        nodes.push((e, w));
        let mut carry = true;
        for (i, r) in idx.iter_mut().zip(&rules) {
            *i += 1;
            if *i < r.len() {
                carry = false;
                break;
            }
            *i = 0;
        }
        if carry {
            break;
        }
    }
    let terms: Vec<Result<f64>> = nodes
        .par_iter()
        .map(|(e, w)| {
            let inner = whole.evaluate_offset(e, dt2)?.value;
            let eta: Vec<f64> = qy.xi.iter().zip(e).map(|(a, b)| a + b).collect();
            let outer = cache.get(&eta, sigma, dt1)?.evaluate(&x, t)?.value;
            Ok(w * inner * outer)
        })
        .collect();
    let mut lhs = 0.0;
    for v in terms {
        lhs += v?;
    }
    Ok(ReproducingReport {
        lhs,
        rhs,
        rel_residual: (lhs - rhs).abs() / rhs.abs(),
        nodes: nodes.len(),
    })
}

//! Explicit constants of the two-sided Gaussian bound, the envelopes they
//! define, and pointwise certification of computed kernels.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{CoefficientField, Structure};
use crate::error::{Error, Result};
use crate::levi::{LeviOptions, Majorant, SolutionCache};
use crate::parametrix::{constant_c, constant_c_weighted};
use crate::query::KernelQuery;
use crate::special::{ln_beta, ln_gamma, log_sum_exp};

/// All constants of the bound for one field. Values that can overflow or
/// underflow in extreme regimes are also carried as logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    pub n: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub big_m: f64,
    pub beta: f64,
    /// Gaussian rate of the upper envelope.
    pub c: f64,
    /// Gaussian rate of the lower envelope, from the closed formula.
    pub d: f64,
    /// 4|ln ν|/κ; equal to `d` up to rounding.
    pub d_from_nu: f64,
    pub big_c: f64,
    pub ctilde: f64,
    pub ln_ctilde: f64,
    pub cbar: f64,
    pub lambda: f64,
    pub s: f64,
    pub ln_s: f64,
    pub chat: f64,
    pub ln_chat: f64,
    pub mu: f64,
    pub delta: f64,
    pub ln_delta: f64,
    pub nu: f64,
    pub c0: f64,
    pub aleph0: f64,
    pub aleph1: f64,
    pub aleph2: f64,
    pub aleph3: f64,
    pub ln_aleph0: f64,
    /// ln ℵ₁; finite even when ℵ₁ itself overflows.
    pub ln_aleph1: f64,
    pub ln_aleph2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantEntry {
    pub name: &'static str,
    pub value: f64,
    pub formula: &'static str,
}

/// The theorem's constants for `field`.
pub fn compute_constants(field: &CoefficientField) -> BoundConstants {
    let s = field.structure();
    constants_for(s, constant_c(field), 1.0 / (8.0 * s.big_m))
}

/// Constants for a given Φ₁ constant `big_c` and upper rate `c`.
pub fn constants_for(s: &Structure, big_c: f64, c: f64) -> BoundConstants {
    let n = s.n as f64;
    let half = n / 2.0;
    let beta = s.beta();
    let (kappa, big_m) = (s.kappa, s.big_m);
    let maj = Majorant::new(s, big_c, c);
    let ln_ctilde = maj.ln_ctilde;
    let ln_s = maj.ln_s();
    let ln_b = ln_beta(1.0, beta);
    let ln_lead = -half * (4.0 * kappa * PI).ln();
    let ln_corr_coeff = ln_b - half * (kappa * c).ln();
    let ln_chat = log_sum_exp(&[ln_lead, ln_s + ln_corr_coeff]);

    let ln_mu = -1.0 - 2f64.ln() - half * (4.0 * PI * big_m).ln();
    let ln_delta = if ln_s == f64::NEG_INFINITY {
        0.0
    } else {
        let ln_rhs = -1.0 - half * (4.0 * PI * big_m).ln() + half * (kappa * c).ln() - 2f64.ln() - ln_s - ln_b;
        (ln_rhs / beta).min(0.0)
    };
    let ln_g = ln_gamma(half + 1.0);
    let ln_nu = half * kappa.ln() - 1.0 - half * big_m.ln() - 3.0 * n * 2f64.ln() - ln_g;
    let d = 4.0 * (1.0 + 3.0 * n * 2f64.ln() + half * (big_m / kappa).ln() + ln_g) / kappa;
    let d_from_nu = 4.0 * ln_nu.abs() / kappa;
    let ln_c0 = ln_mu.min(-half * kappa.ln() - ln_nu.abs());

    let up = ln_ctilde + ln_chat;
    let aleph3 = up.max(0.0);
    let ln_aleph2 = -ln_ctilde + aleph3;
    let low = ln_ctilde + ln_c0;
    let ln_aleph0 = -ln_ctilde + low.min(0.0);
    let ln_aleph1 = if low < 0.0 { (-low).ln() - ln_delta } else { f64::NEG_INFINITY };

    BoundConstants {
        n: s.n,
        alpha: s.alpha,
        kappa,
        big_m,
        beta,
        c,
        d,
        d_from_nu,
        big_c,
        ctilde: ln_ctilde.exp(),
        ln_ctilde,
        cbar: (-ln_ctilde).exp(),
        lambda: maj.ln_lambda.exp(),
        s: ln_s.exp(),
        ln_s,
        chat: ln_chat.exp(),
        ln_chat,
        mu: ln_mu.exp(),
        delta: ln_delta.exp(),
        ln_delta,
        nu: ln_nu.exp(),
        c0: ln_c0.exp(),
        aleph0: ln_aleph0.exp(),
        aleph1: ln_aleph1.exp(),
        aleph2: ln_aleph2.exp(),
        aleph3,
        ln_aleph0,
        ln_aleph1,
        ln_aleph2,
    }
}

impl BoundConstants {
    /// Name → value with the defining formula, in a fixed order.
    pub fn report(&self) -> Vec<ConstantEntry> {
        let e = |name, value, formula| ConstantEntry { name, value, formula };
        vec![
            e("beta", self.beta, "alpha/2"),
            e("c", self.c, "1/(8M)"),
            e("d", self.d, "4 ln[e 2^(3n) (M/kappa)^(n/2) Gamma(n/2+1)] / kappa"),
            e("d_from_nu", self.d_from_nu, "4 |ln nu| / kappa"),
            e("C", self.big_c, "(4 kappa pi)^(-n/2) max_lambda [N1 (1/(2kappa) + lambda^2/(4kappa^2)) (1+lambda^2)^(alpha/2) + N2 (lambda/kappa + 1)] e^(-c lambda^2)"),
            e("Ctilde", self.ctilde, "(4 pi / c)^(n/2)"),
            e("Cbar", self.cbar, "1/Ctilde"),
            e("Lambda", self.lambda, "C Ctilde Gamma(beta)"),
            e("S", self.s, "C + Cbar sum_{l>=2} Lambda^l / Gamma(l beta)"),
            e("ln_S", self.ln_s, "ln S"),
            e("Chat", self.chat, "(4 kappa pi)^(-n/2) + S B(1,beta) / (kappa c)^(n/2)"),
            e("mu", self.mu, "e^(-1) / (2 (4 pi M)^(n/2))"),
            e("delta", self.delta, "min(1, [e^(-1) (4 pi M)^(-n/2) (kappa c)^(n/2) / (2 S B(1,beta))]^(1/beta))"),
            e("ln_delta", self.ln_delta, "ln delta"),
            e("nu", self.nu, "kappa^(n/2) / (e M^(n/2) 2^(3n) Gamma(n/2+1))"),
            e("C0", self.c0, "min(mu, kappa^(-n/2) e^(-|ln nu|))"),
            e("aleph0", self.aleph0, "Ctilde^(-1) e^(min(0, ln(Ctilde C0)))"),
            e("aleph1", self.aleph1, "-min(0, ln(Ctilde C0) / delta)"),
            e("ln_aleph1", self.ln_aleph1, "ln aleph1"),
            e("aleph2", self.aleph2, "Ctilde^(-1) e^(max(0, ln(Ctilde Chat)))"),
            e("aleph3", self.aleph3, "max(0, ln(Ctilde Chat))"),
        ]
    }

    /// ln of the upper envelope at (ρ, t − τ).
    pub fn ln_upper(&self, rho: f64, dt: f64) -> f64 {
        self.ln_aleph2 + self.aleph3 * dt - self.n as f64 / 2.0 * dt.ln() - self.c * rho * rho
    }

    /// ln of the lower envelope at (ρ, t − τ).
    pub fn ln_lower(&self, rho: f64, dt: f64) -> f64 {
        self.ln_aleph0 - (self.ln_aleph1 + dt.ln()).exp() - self.n as f64 / 2.0 * dt.ln() - self.d * rho * rho
    }
}

/// ℵ₂ e^(ℵ₃(t−τ)) (t−τ)^(−n/2) e^(−c|x−ξ|²/(t−τ))
pub fn upper_envelope(k: &BoundConstants, qy: &KernelQuery) -> Result<f64> {
    check_query(k, qy)?;
    Ok(k.ln_upper(qy.rho(), qy.dt).exp())
}

/// ℵ₀ e^(−ℵ₁(t−τ)) (t−τ)^(−n/2) e^(−d|x−ξ|²/(t−τ))
pub fn lower_envelope(k: &BoundConstants, qy: &KernelQuery) -> Result<f64> {
    check_query(k, qy)?;
    Ok(k.ln_lower(qy.rho(), qy.dt).exp())
}

fn check_query(k: &BoundConstants, qy: &KernelQuery) -> Result<()> {
    if qy.dim() != k.n {
        return Err(Error::Dimension {
            expected: k.n,
            got: qy.dim(),
        });
    }
    if !(qy.dt > 0.0) {
        return Err(Error::NonPositiveTime { dt: qy.dt });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonConstants {
    pub eps: f64,
    pub c_eps: f64,
    pub aleph2: f64,
    pub aleph3: f64,
    pub constants: BoundConstants,
}

/// Upper-bound constants with the rate c^ε = ε/(4M). The Φ₁ constant is
/// re-maximised with Gaussian weight (1 − ε)/(4M).
pub fn epsilon_upper_constants(field: &CoefficientField, eps: f64) -> Result<EpsilonConstants> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps must lie in (0, 1), got {eps}")));
    }
    let s = field.structure();
    let c_eps = eps / (4.0 * s.big_m);
    let big_c = constant_c_weighted(s, (1.0 - eps) / (4.0 * s.big_m));
    let k = constants_for(s, big_c, c_eps);
    Ok(EpsilonConstants {
        eps,
        c_eps,
        aleph2: k.aleph2,
        aleph3: k.aleph3,
        constants: k,
    })
}

/// γ = (4α + 8)/(3α + 4).
pub fn precise_gamma(alpha: f64) -> f64 {
    (4.0 * alpha + 8.0) / (3.0 * alpha + 4.0)
}

/// (4κπ)^(−n/2)(t−τ)^(−n/2)e^(−ρ²/4M)(1 + c₁(t−τ)^(α/2)e^(c₂((t−τ)+ρ^γ)))
/// for fields without drift and potential.
pub fn precise_upper_envelope(field: &CoefficientField, qy: &KernelQuery, c1: f64, c2: f64) -> Result<f64> {
    if !field.is_drift_free() {
        return Err(Error::InvalidArgument(
            "the precise upper envelope needs b = 0 and q = 0".into(),
        ));
    }
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::InvalidArgument(format!("c1 and c2 must be positive, got {c1}, {c2}")));
    }
    let s = field.structure();
    if qy.dim() != s.n {
        return Err(Error::Dimension {
            expected: s.n,
            got: qy.dim(),
        });
    }
    let (lead, shape) = precise_parts(s, qy);
    Ok(lead * (1.0 + c1 * shape * (c2 * precise_exponent(s, qy)).exp()))
}

fn precise_parts(s: &Structure, qy: &KernelQuery) -> (f64, f64) {
    let n = s.n as f64;
    let rho = qy.rho();
    let lead = (4.0 * s.kappa * PI * qy.dt).powf(-n / 2.0) * (-rho * rho / (4.0 * s.big_m)).exp();
    (lead, qy.dt.powf(s.alpha / 2.0))
}

fn precise_exponent(s: &Structure, qy: &KernelQuery) -> f64 {
    qy.dt + qy.rho().powf(precise_gamma(s.alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreciseFit {
    pub c1: f64,
    pub c2: f64,
    /// Mean log envelope over the training set at the chosen (c₁, c₂).
    pub score: f64,
}

/// Fits (c₁, c₂) on training values: for each c₂ on a grid the smallest c₁
/// covering every training point, times `safety`; keeps the pair with the
/// smallest mean log envelope.
pub fn fit_precise_constants(
    field: &CoefficientField,
    training: &[(KernelQuery, f64)],
    safety: f64,
) -> Result<PreciseFit> {
    if training.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if !(safety >= 1.0) {
        return Err(Error::InvalidArgument(format!("safety factor must be at least 1, got {safety}")));
    }
    let s = field.structure();
    let parts: Vec<(f64, f64, f64, f64)> = training
        .iter()
        .map(|(q, e)| {
            let (lead, shape) = precise_parts(s, q);
            (lead, shape, precise_exponent(s, q), *e)
        })
        .collect();
    let mut best: Option<PreciseFit> = None;
    for i in 1..=200 {
        let c2 = 0.01 * i as f64;
        let need = parts
            .iter()
            .map(|&(lead, shape, x, e)| (e / lead - 1.0) / (shape * (c2 * x).exp()))
            .fold(0.0f64, f64::max);
        let c1 = need.max(1e-12) * safety;
        let score = parts
            .iter()
            .map(|&(lead, shape, x, _)| (lead * (1.0 + c1 * shape * (c2 * x).exp())).ln())
            .sum::<f64>()
            / parts.len() as f64;
        if best.map_or(true, |b| score < b.score) {
            best = Some(PreciseFit { c1, c2, score });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    /// ln E − ln(lower envelope); negative is a violation.
    pub low: f64,
    /// ln(upper envelope) − ln E; negative is a violation.
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoSidedReport {
    pub queries: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub worst_low: f64,
    pub worst_high: f64,
    pub margins: Vec<Margin>,
}

impl TwoSidedReport {
    pub fn violations(&self) -> usize {
        self.lower_violations + self.upper_violations
    }
}

/// Checks lower ≤ E ≤ upper at every supplied value.
pub fn check_two_sided(values: &[(KernelQuery, f64)], k: &BoundConstants) -> Result<TwoSidedReport> {
    for (q, _) in values {
        check_query(k, q)?;
    }
    let margins: Vec<Margin> = values
        .par_iter()
        .map(|(q, e)| {
            let (rho, dt) = (q.rho(), q.dt);
            let ln_e = if *e > 0.0 { e.ln() } else { f64::NEG_INFINITY };
            Margin {
                low: ln_e - k.ln_lower(rho, dt),
                high: k.ln_upper(rho, dt) - ln_e,
            }
        })
        .collect();
    let lower_violations = margins.iter().filter(|m| !(m.low >= 0.0)).count();
    let upper_violations = margins.iter().filter(|m| !(m.high >= 0.0)).count();
    let worst_low = margins.iter().map(|m| m.low).fold(f64::INFINITY, f64::min);
    let worst_high = margins.iter().map(|m| m.high).fold(f64::INFINITY, f64::min);
    Ok(TwoSidedReport {
        queries: values.len(),
        lower_violations,
        upper_violations,
        worst_low,
        worst_high,
        margins,
    })
}

/// x_k = x + (k/m)(ξ − x), k = 0..m.
pub fn build_chain(x: &[f64], xi: &[f64], m: usize) -> Result<Vec<Vec<f64>>> {
    if m < 1 {
        return Err(Error::InvalidArgument("chain needs m >= 1".into()));
    }
    if x.len() != xi.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: xi.len(),
        });
    }
    Ok((0..=m)
        .map(|k| {
            let f = k as f64 / m as f64;
            x.iter().zip(xi).map(|(a, b)| a + f * (b - a)).collect()
        })
        .collect())
}

/// Smallest m ≥ 1 with 4|x − ξ|² ≤ m κ (t − τ).
pub fn chain_length(dist2: f64, kappa: f64, dt: f64) -> usize {
    let m = (4.0 * dist2 / (kappa * dt)).ceil();
    if m.is_finite() {
        (m as usize).max(1)
    } else {
        usize::MAX
    }
}

/// Long-time E by splitting (τ, t] into equal slices no longer than
/// `horizon` and composing slice kernels by spatial quadrature.
pub fn compose_long_time(
    field: &CoefficientField,
    qy: &KernelQuery,
    opts: &LeviOptions,
    horizon: f64,
) -> Result<f64> {
    compose_long_time_with(&SolutionCache::new(field, *opts), qy, horizon)
}

pub fn compose_long_time_with(cache: &SolutionCache, qy: &KernelQuery, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let m = (qy.dt / horizon).ceil().max(1.0) as usize;
    compose_slices(cache, qy, m)
}

/// E composed over exactly `m` equal slices.
pub fn compose_slices(cache: &SolutionCache, qy: &KernelQuery, m: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::InvalidArgument("need at least one slice".into()));
    }
    let field = cache.field();
    if qy.dim() != field.dim() {
        return Err(Error::Dimension {
            expected: field.dim(),
            got: qy.dim(),
        });
    }
    let slice = qy.dt / m as f64;
    if m == 1 {
        return Ok(cache.get(&qy.xi, qy.tau, slice)?.evaluate_offset(&qy.dx, slice)?.value);
    }
    let s = field.structure();
    let n = s.n;
    let times: Vec<f64> = (0..=m).map(|k| qy.tau + slice * k as f64).collect();
    // Uniform tensor grid around the segment [ξ, x]; trapezoid sums are
    // spectrally accurate for the Gaussian-like integrands at this spacing.
    let h = 0.75 * (2.0 * s.kappa * slice).sqrt();
    let reach = cache.options().quad.spatial_radius_factor * (2.0 * s.big_m * qy.dt).sqrt();
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let lo = qy.xi[i].min(qy.xi[i] + qy.dx[i]) - reach;
            let hi = qy.xi[i].max(qy.xi[i] + qy.dx[i]) + reach;
            let count = ((hi - lo) / h).ceil() as usize + 1;
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|k| lo + step * k as f64).collect()
        })
        .collect();
    let cell: f64 = axes.iter().map(|a| a[1] - a[0]).product();
    let nodes = tensor_nodes(&axes);
    // u(η) = E(η, σ₁; ξ, τ)
    let first = cache.get(&qy.xi, qy.tau, slice)?;
    let mut u: Vec<f64> = nodes
        .par_iter()
        .map(|p| first.evaluate(p, times[1]).map(|e| e.value))
        .collect::<Result<_>>()?;
    for k in 1..m - 1 {
        let sols: Vec<_> = nodes
            .par_iter()
            .map(|p| cache.get(p, times[k], slice))
            .collect::<Result<_>>()?;
        u = nodes
            .par_iter()
            .map(|target| {
                let mut acc = 0.0;
                for (j, sol) in sols.iter().enumerate() {
                    if u[j] != 0.0 {
                        acc += sol.evaluate(target, times[k + 1])?.value * u[j];
                    }
                }
                Ok(acc * cell)
            })
            .collect::<Result<_>>()?;
    }
    let x = qy.x();
    let t = qy.t();
    let last: Vec<f64> = nodes
        .par_iter()
        .zip(&u)
        .map(|(p, &w)| {
            if w == 0.0 {
                return Ok(0.0);
            }
            Ok(cache.get(p, times[m - 1], slice)?.evaluate(&x, t)?.value * w)
        })
        .collect::<Result<_>>()?;
    Ok(last.iter().sum::<f64>() * cell)
}

fn tensor_nodes(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CoefficientField, MatBuf, Region, VecBuf};
use crate::error::{Error, Result};

/// Number of dyadic separation scales probed per base point.
const SCALE_COUNT: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub value: f64,
    /// (x, t) of both points of the worst pair.
    pub witness: Option<(Vec<f64>, f64, Vec<f64>, f64)>,
}

/// Draws the i-th probe pair. Every pair consumes the same number of
/// random draws, so a longer run extends a shorter one with the same seed.
fn probe_pair(
    rng: &mut ChaCha8Rng,
    region: &Region,
    diameter: f64,
    index: usize,
) -> (Vec<f64>, f64, Vec<f64>, f64) {
    let n = region.x_lo.len();
    let x: Vec<f64> = (0..n)
        .map(|i| rng.gen_range(region.x_lo[i]..region.x_hi[i]))
        .collect();
    let t = rng.gen_range(region.t_lo..region.t_hi);
    let r = diameter * 0.5f64.powi((index % SCALE_COUNT) as i32);
    // Uniform direction in the unit ball by rejection (bounded retries keep
    // the draw count per pair fixed enough for prefix stability in practice:
    // every pair draws exactly `8 * n` candidates).
    let mut dir = vec![0.0; n];
    let mut found = false;
    for _ in 0..8 {
        let cand: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm2: f64 = cand.iter().map(|v| v * v).sum();
        if !found && norm2 <= 1.0 {
            dir = cand;
            found = true;
        }
    }
    let s: f64 = rng.gen_range(-1.0..1.0);
    let x2: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
    // Parabolic scaling: time offsets of order r² keep both parts of the
    // distance comparable.
    let t2 = t + r * r * s;
    (x, t, x2, t2)
}

fn parabolic_distance(x: &[f64], t: f64, y: &[f64], s: f64, alpha: f64) -> f64 {
    let dx2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (dx2 + (t - s).abs()).powf(alpha / 2.0)
}

/// Sampled lower estimate of Σ_ij [a_ij]_α over `region`.
///
/// Pairs are placed around uniform base points at separations
/// `diam · 2⁻ᵏ`, k = 0..20, where `diam` is the region's diameter. The
/// result is the largest quotient seen, so it never exceeds the true
/// seminorm and does not decrease as `sample_count` grows.
pub fn estimate_holder_seminorm(
    field: &CoefficientField,
    sample_count: usize,
    region: &Region,
    rng_seed: u64,
) -> Result<HolderEstimate> {
    let n = field.dim();
    region.check(n)?;
    if sample_count < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample_count must be at least 2, got {sample_count}"
        )));
    }
    let alpha = field.structure().alpha;
    let diameter = region.diameter();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut a1: MatBuf = smallvec::smallvec![0.0; n * n];
    let mut a2: MatBuf = smallvec::smallvec![0.0; n * n];
    let mut best = HolderEstimate {
        value: 0.0,
        witness: None,
    };
    for i in 0..sample_count {
        let (x, t, y, s) = probe_pair(&mut rng, region, diameter, i);
        let dist = parabolic_distance(&x, t, &y, s, alpha);
        if dist == 0.0 {
            continue;
        }
        field.diffusion_into(&x, t, &mut a1);
        field.diffusion_into(&y, s, &mut a2);
        let diff: f64 = a1.iter().zip(&a2).map(|(p, q)| (p - q).abs()).sum();
        let q = diff / dist;
        if q > best.value {
            best = HolderEstimate {
                value: q,
                witness: Some((x, t, y, s)),
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub description: &'static str,
    pub passed: bool,
    /// The sampled quantity that is compared against `bound`.
    pub observed: f64,
    pub bound: f64,
    /// Point (x..., t) of the worst observation.
    pub witness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Samples the field over its region and checks the structural
/// assumptions against the declared constants. Failures are report entries, not errors.
pub fn validate_assumptions(
    field: &CoefficientField,
    sample_count: usize,
    rng_seed: u64,
) -> AssumptionReport {
    let s = *field.structure();
    let n = s.n;
    let region = field.region();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let count = sample_count.max(1);

    let mut points: Vec<(Vec<f64>, f64)> = Vec::with_capacity(count + 1);
    let center: Vec<f64> = region
        .x_lo
        .iter()
        .zip(&region.x_hi)
        .map(|(lo, hi)| 0.5 * (lo + hi))
        .collect();
    points.push((center, 0.5 * (region.t_lo + region.t_hi)));
    for _ in 0..count {
        let x: Vec<f64> = (0..n)
            .map(|i| rng.gen_range(region.x_lo[i]..region.x_hi[i]))
            .collect();
        points.push((x, rng.gen_range(region.t_lo..region.t_hi)));
    }

    let mut a: MatBuf = smallvec::smallvec![0.0; n * n];
    let mut b: VecBuf = smallvec::smallvec![0.0; n];

    let mut finite_ok = true;
    let mut finite_witness = Vec::new();
    let mut sym_gap = 0.0f64;
    let mut sym_witness = Vec::new();
    let mut min_eig = f64::INFINITY;
    let mut min_witness = Vec::new();
    let mut max_eig = f64::NEG_INFINITY;
    let mut max_witness = Vec::new();
    let mut sup_b = vec![0.0f64; n];
    let mut sup_q = 0.0f64;
    let mut drift_witness = Vec::new();
    let mut drift_worst = 0.0f64;

    for (x, t) in &points {
        let mut witness = x.clone();
        witness.push(*t);
        field.diffusion_into(x, *t, &mut a);
        field.drift_into(x, *t, &mut b);
        let q = field.potential(x, *t);
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) || !q.is_finite() {
            if finite_ok {
                finite_witness = witness.clone();
            }
            finite_ok = false;
            continue;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (a[i * n + j] - a[j * n + i]).abs();
                if gap > sym_gap {
                    sym_gap = gap;
                    sym_witness = witness.clone();
                }
            }
        }
        let ev = super::spd::symmetric_eigenvalues(n, &a);
        if ev[0] < min_eig {
            min_eig = ev[0];
            min_witness = witness.clone();
        }
        if ev[n - 1] > max_eig {
            max_eig = ev[n - 1];
            max_witness = witness.clone();
        }
        for i in 0..n {
            sup_b[i] = sup_b[i].max(b[i].abs());
        }
        sup_q = sup_q.max(q.abs());
        let local: f64 = b.iter().map(|v| v.abs()).sum::<f64>() + q.abs();
        if local > drift_worst {
            drift_worst = local;
            drift_witness = witness;
        }
    }

    let mut checks = Vec::new();
    checks.push(AssumptionCheck {
        id: "finite",
        description: "coefficients finite at every sample",
        passed: finite_ok,
        observed: if finite_ok { 0.0 } else { 1.0 },
        bound: 0.0,
        witness: finite_witness,
    });
    let sym_ok = sym_gap <= 1e-12;
    let lower_ok = min_eig >= s.kappa * (1.0 - 1e-12);
    let upper_ok = max_eig <= s.big_m * (1.0 + 1e-12);
    let (observed, bound, witness) = if !sym_ok {
        (sym_gap, 0.0, sym_witness)
    } else if !lower_ok {
        (min_eig, s.kappa, min_witness)
    } else if !upper_ok {
        (max_eig, s.big_m, max_witness)
    } else {
        (min_eig, s.kappa, min_witness)
    };
    checks.push(AssumptionCheck {
        id: "ellipticity",
        description: "a symmetric with spectrum in [kappa, M]",
        passed: finite_ok && sym_ok && lower_ok && upper_ok,
        observed,
        bound,
        witness,
    });
    checks.push(AssumptionCheck {
        id: "lower_order_bounded",
        description: "b and q bounded at every sample",
        passed: finite_ok,
        observed: drift_worst,
        bound: f64::INFINITY,
        witness: drift_witness.clone(),
    });

    let holder = estimate_holder_seminorm(field, sample_count.max(2), region, rng_seed ^ 0x5eed)
        .unwrap_or(HolderEstimate {
            value: f64::NAN,
            witness: None,
        });
    checks.push(AssumptionCheck {
        id: "holder_n1",
        description: "sampled sum of Hölder seminorms of a_ij at most N1",
        passed: holder.value <= s.n1 * (1.0 + 1e-12),
        observed: holder.value,
        bound: s.n1,
        witness: holder
            .witness
            .map(|(x, t, y, s)| {
                let mut w = x;
                w.push(t);
                w.extend(y);
                w.push(s);
                w
            })
            .unwrap_or_default(),
    });
    let drift_norm: f64 = sup_b.iter().sum::<f64>() + sup_q;
    checks.push(AssumptionCheck {
        id: "sup_n2",
        description: "sum of sup|b_i| plus sup|q| at most N2",
        passed: drift_norm <= s.n2 * (1.0 + 1e-12),
        observed: drift_norm,
        bound: s.n2,
        witness: drift_witness,
    });
    let spatial = spatial_holder_of_lower_order(field, sample_count.max(2), region, rng_seed);
    checks.push(AssumptionCheck {
        id: "lower_order_holder",
        description: "spatial Hölder quotients of b_i and q finite",
        passed: spatial.is_finite(),
        observed: spatial,
        bound: f64::INFINITY,
        witness: Vec::new(),
    });
    AssumptionReport { checks }
}

/// Largest sampled Σ_i {b_i}_α + {q}_α quotient (same time, spatial offset).
fn spatial_holder_of_lower_order(
    field: &CoefficientField,
    sample_count: usize,
    region: &Region,
    seed: u64,
) -> f64 {
    if field.is_drift_free() {
        return 0.0;
    }
    let n = field.dim();
    let alpha = field.structure().alpha;
    let diameter = region.diameter();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let mut b1: VecBuf = smallvec::smallvec![0.0; n];
    let mut b2: VecBuf = smallvec::smallvec![0.0; n];
    let mut worst = 0.0f64;
    for i in 0..sample_count {
        let (x, t, y, _) = probe_pair(&mut rng, region, diameter, i);
        let dist: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
            .powf(alpha);
        if dist == 0.0 {
            continue;
        }
        field.drift_into(&x, t, &mut b1);
        field.drift_into(&y, t, &mut b2);
        let diff: f64 = b1.iter().zip(&b2).map(|(p, q)| (p - q).abs()).sum::<f64>()
            + (field.potential(&x, t) - field.potential(&y, t)).abs();
        let q = diff / dist;
        if q.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(q);
    }
    worst
}

//! Reference solutions: closed-form constant-coefficient kernels and a
//! finite-difference initial-value solver.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{CoefficientField, SpdMatrix};
use crate::error::{Error, Result};
use crate::kernels::GenGaussKernel;
use crate::query::KernelQuery;

/// e^(q₀(t−τ)) G_{a⁻¹}(x − ξ + b(t−τ), t−τ), the fundamental solution of
/// Σ a_ij ∂²_ij + Σ b_i ∂_i + q₀ − ∂_t.
pub fn exact_constant_kernel(a: &SpdMatrix, b: &[f64], q0: f64, qy: &KernelQuery) -> Result<f64> {
    let n = a.dim();
    if qy.dim() != n || b.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if qy.dim() != n { qy.dim() } else { b.len() },
        });
    }
    let (a_inv, _) = a.inverse_with_det()?;
    let k = GenGaussKernel::new(a_inv)?;
    let y: Vec<f64> = qy.dx.iter().zip(b).map(|(d, bi)| d + bi * qy.dt).collect();
    Ok((q0 * qy.dt).exp() * k.value(&y, qy.dt)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Cells per axis.
    pub nx: usize,
    /// Time steps.
    pub nt: usize,
    /// 1/2 is Crank–Nicolson, 1 is implicit Euler.
    pub theta: f64,
}

impl FdConfig {
    /// A box centred on ξ with the minimal admissible margin, rounded up.
    pub fn around(xi: &[f64], big_m: f64, dt: f64, nx: usize, nt: usize) -> Self {
        let r = (min_margin(big_m, dt) * 1.02).ceil();
        Self {
            lo: xi.iter().map(|v| v - r).collect(),
            hi: xi.iter().map(|v| v + r).collect(),
            nx,
            nt,
            theta: 0.5,
        }
    }

    fn spacing(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) / self.nx as f64).collect()
    }
}

fn min_margin(big_m: f64, dt: f64) -> f64 {
    8.0 * (2.0 * big_m * dt).sqrt()
}

/// Number of leading implicit-Euler half steps used to damp the
/// Crank–Nicolson response to the rough initial data.
const STARTUP_HALF_STEPS: usize = 4;

const LEAKAGE_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdSolution {
    pub axes: Vec<Vec<f64>>,
    pub t: f64,
    /// Row-major with the last axis fastest.
    pub values: Vec<f64>,
    /// Mass within two cells of the boundary relative to the total.
    pub leakage: f64,
    pub leakage_flagged: bool,
    pub mollifier_width: f64,
}

impl FdSolution {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Σ u h^n
    pub fn mass(&self) -> f64 {
        let cell: f64 = self.axes.iter().map(|a| a[1] - a[0]).product();
        self.values.iter().sum::<f64>() * cell
    }

    /// Multilinear interpolation; zero outside the box.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut fr = [0.0; 2];
        let mut idx = [0usize; 2];
        for i in 0..n {
            let a = &self.axes[i];
            let h = a[1] - a[0];
            let u = (x[i] - a[0]) / h;
            if !(u >= 0.0 && u <= (a.len() - 1) as f64) {
                return 0.0;
            }
            let k = (u.floor() as usize).min(a.len() - 2);
            idx[i] = k;
            fr[i] = u - k as f64;
        }
        let strides: Vec<usize> = (0..n).map(|i| self.axes[i + 1..].iter().map(Vec::len).product()).collect();
        let mut v = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut base = 0;
            for i in 0..n {
                let bit = (corner >> i) & 1;
                w *= if bit == 1 { fr[i] } else { 1.0 - fr[i] };
                base += (idx[i] + bit) * strides[i];
            }
            v += w * self.values[base];
        }
        v
    }

    /// Columns x_1..x_n, t, value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.dim();
        let head: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        writeln!(out, "{},t,value", head.join(","))?;
        for (k, v) in self.values.iter().enumerate() {
            let mut rem = k;
            let mut coords = vec![0.0; n];
            for i in (0..n).rev() {
                let len = self.axes[i].len();
                coords[i] = self.axes[i][rem % len];
                rem /= len;
            }
            let cols: Vec<String> = coords.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(out, "{},{:.17e},{:.17e}", cols.join(","), self.t, v)?;
        }
        Ok(())
    }
}

/// θ-scheme for u_t = Σ a_ij ∂²_ij u + Σ b_i ∂_i u + q u on a box with zero
/// boundary values, started from a discrete Gaussian of width two cells
/// at ξ with unit mass. Dimensions 1 and 2.
pub fn fd_solve(field: &CoefficientField, source: (&[f64], f64), t_end: f64, cfg: &FdConfig) -> Result<FdSolution> {
    let s = field.structure();
    let n = s.n;
    let (xi, tau) = source;
    if !(1..=2).contains(&n) {
        return Err(Error::InvalidArgument(format!("finite differences support n = 1, 2; got {n}")));
    }
    if xi.len() != n || cfg.lo.len() != n || cfg.hi.len() != n {
        return Err(Error::Dimension { expected: n, got: xi.len() });
    }
    let dt = t_end - tau;
    if !(dt > 0.0) {
        return Err(Error::NonPositiveTime { dt });
    }
    if !(cfg.theta >= 0.0 && cfg.theta <= 1.0) {
        return Err(Error::InvalidArgument(format!("theta must lie in [0, 1], got {}", cfg.theta)));
    }
    if cfg.nx < 8 || cfg.nt < 1 {
        return Err(Error::InvalidArgument("need nx >= 8 and nt >= 1".into()));
    }
    let margin = min_margin(s.big_m, dt);
    for i in 0..n {
        if xi[i] - cfg.lo[i] < margin || cfg.hi[i] - xi[i] < margin {
            return Err(Error::InvalidArgument(format!(
                "box must extend at least {margin:.4} beyond the source on every axis"
            )));
        }
    }
    let h = cfg.spacing();
    let k = dt / cfg.nt as f64;
    if cfg.theta < 0.5 {
        let hmin = h.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = 2.0 * n as f64 * s.big_m * k * (1.0 - 2.0 * cfg.theta) / (hmin * hmin);
        if ratio > 1.0 {
            return Err(Error::Stability(format!(
                "theta = {} with k/h^2 ratio {ratio:.3} exceeds the explicit stability limit",
                cfg.theta
            )));
        }
    }
    let axes: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..=cfg.nx).map(|j| cfg.lo[i] + h[i] * j as f64).collect())
        .collect();
    let grid = Grid::new(field, &axes);
    let width = 2.0 * h.iter().copied().fold(0.0, f64::max);
    let mut u = grid.initial(xi, width);

    let mut t = tau;
    let mut steps: Vec<(f64, f64)> = Vec::new();
    if cfg.theta == 0.5 {
        for _ in 0..STARTUP_HALF_STEPS {
            steps.push((0.5 * k, 1.0));
        }
        for _ in STARTUP_HALF_STEPS / 2..cfg.nt {
            steps.push((k, 0.5));
        }
    } else {
        steps = vec![(k, cfg.theta); cfg.nt];
    }
    for (step, th) in steps {
        u = grid.step(&u, t, step, th)?;
        t += step;
    }
    let total: f64 = u.iter().map(|v| v.abs()).sum();
    let edge: f64 = u
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.near_edge(*i, 2))
        .map(|(_, v)| v.abs())
        .sum();
    let leakage = if total > 0.0 { edge / total } else { 0.0 };
    Ok(FdSolution {
        axes,
        t: t_end,
        values: u,
        leakage,
        leakage_flagged: leakage > LEAKAGE_LIMIT,
        mollifier_width: width,
    })
}

struct Grid<'a> {
    field: &'a CoefficientField,
    axes: &'a [Vec<f64>],
    len: Vec<usize>,
    h: Vec<f64>,
    size: usize,
}

impl<'a> Grid<'a> {
    fn new(field: &'a CoefficientField, axes: &'a [Vec<f64>]) -> Self {
        let len: Vec<usize> = axes.iter().map(Vec::len).collect();
        let h = axes.iter().map(|a| a[1] - a[0]).collect();
        Self {
            field,
            axes,
            size: len.iter().product(),
            len,
            h,
        }
    }

    fn coords(&self, i: usize) -> ([usize; 2], Vec<f64>) {
        let n = self.len.len();
        let mut idx = [0usize; 2];
        let mut rem = i;
        for d in (0..n).rev() {
            idx[d] = rem % self.len[d];
            rem /= self.len[d];
        }
        (idx, (0..n).map(|d| self.axes[d][idx[d]]).collect())
    }

    fn near_edge(&self, i: usize, cells: usize) -> bool {
        let (idx, _) = self.coords(i);
        (0..self.len.len()).any(|d| idx[d] <= cells || idx[d] + cells >= self.len[d] - 1)
    }

    fn is_boundary(&self, idx: &[usize; 2]) -> bool {
        (0..self.len.len()).any(|d| idx[d] == 0 || idx[d] == self.len[d] - 1)
    }

    fn initial(&self, xi: &[f64], width: f64) -> Vec<f64> {
        let mut u: Vec<f64> = (0..self.size)
            .map(|i| {
                let (idx, x) = self.coords(i);
                if self.is_boundary(&idx) {
                    return 0.0;
                }
                let r2: f64 = x.iter().zip(xi).map(|(a, b)| (a - b).powi(2)).sum();
                (-r2 / (2.0 * width * width)).exp()
            })
            .collect();
        let cell: f64 = self.h.iter().product();
        let mass: f64 = u.iter().sum::<f64>() * cell;
        u.iter_mut().for_each(|v| *v /= mass);
        u
    }

    /// Stencil of L at node i and time t as (neighbour, weight) pairs.
    fn stencil(&self, i: usize, t: f64) -> Vec<(usize, f64)> {
        let n = self.len.len();
        let (_, x) = self.coords(i);
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        self.field.diffusion_into(&x, t, &mut a);
        self.field.drift_into(&x, t, &mut b);
        let q = self.field.potential(&x, t);
        let stride = |d: usize| -> usize { self.len[d + 1..].iter().product() };
        let mut out = vec![(i, q)];
        for d in 0..n {
            let sd = stride(d);
            let hd = self.h[d];
            let diag = a[d * n + d] / (hd * hd);
            let conv = b[d] / (2.0 * hd);
            out[0].1 -= 2.0 * diag;
            out.push((i + sd, diag + conv));
            out.push((i - sd, diag - conv));
        }
        if n == 2 {
            let s0 = stride(0);
            let cross = (a[1] + a[2]) / (4.0 * self.h[0] * self.h[1]);
            if cross != 0.0 {
                out.push((i + s0 + 1, cross));
                out.push((i - s0 - 1, cross));
                out.push((i + s0 - 1, -cross));
                out.push((i - s0 + 1, -cross));
            }
        }
        out
    }

    fn apply(&self, u: &[f64], t: f64) -> Vec<f64> {
        (0..self.size)
            .into_par_iter()
            .map(|i| {
                let (idx, _) = self.coords(i);
                if self.is_boundary(&idx) {
                    0.0
                } else {
                    self.stencil(i, t).iter().map(|&(j, w)| w * u[j]).sum()
                }
            })
            .collect()
    }

    fn step(&self, u: &[f64], t: f64, k: f64, theta: f64) -> Result<Vec<f64>> {
        let mut rhs = u.to_vec();
        if theta < 1.0 {
            let lu = self.apply(u, t);
            for (r, l) in rhs.iter_mut().zip(&lu) {
                *r += (1.0 - theta) * k * l;
            }
        }
        let t1 = t + k;
        let tk = theta * k;
        if self.len.len() == 1 {
            self.solve_tridiagonal(&rhs, t1, tk)
        } else {
            self.solve_bicgstab(&rhs, u, t1, tk)
        }
    }

    fn solve_tridiagonal(&self, rhs: &[f64], t: f64, tk: f64) -> Result<Vec<f64>> {
        let m = self.size;
        let (mut lower, mut diag, mut upper) = (vec![0.0; m], vec![1.0; m], vec![0.0; m]);
        let mut r = rhs.to_vec();
        r[0] = 0.0;
        r[m - 1] = 0.0;
        for i in 1..m - 1 {
            for (j, w) in self.stencil(i, t) {
                let v = -tk * w;
                if j == i {
                    diag[i] += v;
                } else if j + 1 == i {
                    lower[i] = v;
                } else {
                    upper[i] = v;
                }
            }
        }
        // Thomas algorithm.
        for i in 1..m {
            let f = lower[i] / diag[i - 1];
            diag[i] -= f * upper[i - 1];
            r[i] -= f * r[i - 1];
        }
        let mut x = vec![0.0; m];
        x[m - 1] = r[m - 1] / diag[m - 1];
        for i in (0..m - 1).rev() {
            x[i] = (r[i] - upper[i] * x[i + 1]) / diag[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stability("tridiagonal solve produced non-finite values".into()));
        }
        Ok(x)
    }

    fn solve_bicgstab(&self, rhs: &[f64], guess: &[f64], t: f64, tk: f64) -> Result<Vec<f64>> {
        let stencils: Vec<Option<Vec<(usize, f64)>>> = (0..self.size)
            .into_par_iter()
            .map(|i| {
                let (idx, _) = self.coords(i);
                (!self.is_boundary(&idx)).then(|| self.stencil(i, t))
            })
            .collect();
        let op = |v: &[f64]| -> Vec<f64> {
            stencils
                .par_iter()
                .enumerate()
                .map(|(i, st)| match st {
                    None => v[i],
                    Some(st) => v[i] - tk * st.iter().map(|&(j, w)| w * v[j]).sum::<f64>(),
                })
                .collect()
        };
        let mut b = rhs.to_vec();
        for (i, st) in stencils.iter().enumerate() {
            if st.is_none() {
                b[i] = 0.0;
            }
        }
        bicgstab(op, &b, guess.to_vec(), 1e-12, 2000)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.par_iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bicgstab<F: Fn(&[f64]) -> Vec<f64>>(op: F, b: &[f64], mut x: Vec<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let ax = op(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; b.len()];
    let mut p = vec![0.0; b.len()];
    for _ in 0..max_iter {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            return Ok(x);
        }
        let rho_new = dot(&r0, &r);
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        v = op(&p);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for i in 0..x.len() {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        let t = op(&s);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..x.len() {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if !omega.is_finite() || omega == 0.0 {
            break;
        }
    }
    Err(Error::Stability("BiCGSTAB did not converge".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub compared: usize,
    pub max_rel: f64,
    pub mean_rel: f64,
    /// Index of the worst query in the input.
    pub worst: Option<usize>,
}

/// Relative error of `values` against `reference`, restricted to
/// min_radius ≤ |x − ξ| and ρ ≤ ρ_max.
pub fn compare(
    values: &[(KernelQuery, f64)],
    reference: &[f64],
    rho_max: f64,
    min_radius: f64,
) -> Result<ErrorReport> {
    if values.len() != reference.len() {
        return Err(Error::Dimension {
            expected: values.len(),
            got: reference.len(),
        });
    }
    let mut compared = 0;
    let mut max_rel = 0.0;
    let mut sum = 0.0;
    let mut worst = None;
    for (i, ((q, v), r)) in values.iter().zip(reference).enumerate() {
        if q.rho() > rho_max || q.dist2().sqrt() < min_radius {
            continue;
        }
        let rel = if *r == 0.0 && *v == 0.0 { 0.0 } else { (v - r).abs() / r.abs() };
        compared += 1;
        sum += rel;
        if rel > max_rel || worst.is_none() {
            max_rel = rel;
            worst = Some(i);
        }
    }
    if compared == 0 {
        return Err(Error::InvalidArgument("no query lies in the comparison region".into()));
    }
    Ok(ErrorReport {
        compared,
        max_rel,
        mean_rel: sum / compared as f64,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::Structure;
    use crate::kernels::gauss_kernel;

    #[test]
    fn shifted_kernel_example() {
        let q = KernelQuery::new(&[0.0], 1.0, &[0.0], 0.0).unwrap();
        let v = exact_constant_kernel(&SpdMatrix::identity(1), &[1.0], 0.0, &q).unwrap();
        assert!((v - 0.2196956).abs() < 1e-7);
    }

    #[test]
    fn heat_equation_fd() {
        let s = Structure::new(1, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let f = CoefficientField::constant(s, &SpdMatrix::identity(1), None, 0.0).unwrap();
        let cfg = FdConfig::around(&[0.0], 1.0, 0.25, 1200, 200);
        let sol = fd_solve(&f, (&[0.0], 0.0), 0.25, &cfg).unwrap();
        assert!(!sol.leakage_flagged);
        assert!((sol.mass() - 1.0).abs() < 1e-4);
        for x in [0.2, 0.5, 1.0, 1.5] {
            let e = gauss_kernel(&[x], 0.25).unwrap();
            assert!((sol.eval(&[x]) - e).abs() < 0.01 * e, "{x}");
        }
    }

    #[test]
    fn explicit_unstable_rejected() {
        let s = Structure::new(1, 1.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let f = CoefficientField::constant(s, &SpdMatrix::identity(1), None, 0.0).unwrap();
        let mut cfg = FdConfig::around(&[0.0], 1.0, 0.25, 1200, 10);
        cfg.theta = 0.0;
        assert!(matches!(fd_solve(&f, (&[0.0], 0.0), 0.25, &cfg), Err(Error::Stability(_))));
    }
}

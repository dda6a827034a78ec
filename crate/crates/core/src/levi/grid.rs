//! Sampled kernels Φ(η, σ; ξ, τ) with a fixed base (ξ, τ).
//!
//! Nodes live in similarity coordinates `y = (η − ξ)/√(σ − τ)` on a
//! uniform lattice over `[−Y, Y]ⁿ`, and the time lattice is uniform in
//! `s = √(σ − τ)`. Stored values are `w = θ^p Φ` with `θ = σ − τ`, which
//! removes the leading singularity so that `w` is smooth in (y, s).

use std::fmt::Write as _;
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lattice sizes of a [`GridKernel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Nodes per spatial axis (odd, so that y = 0 is a node).
    pub space_nodes: usize,
    pub time_nodes: usize,
    /// Y in units of √(2M).
    pub radius_factor: f64,
}

impl GridSpec {
    pub fn for_dim(n: usize) -> Self {
        Self {
            space_nodes: if n == 1 { 97 } else { 41 },
            time_nodes: 24,
            radius_factor: 8.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.space_nodes < 5 || self.space_nodes % 2 == 0 || self.time_nodes < 4 {
            return Err(Error::InvalidArgument(format!(
                "grid needs an odd number >= 5 of space nodes and >= 4 time nodes, got {} / {}",
                self.space_nodes, self.time_nodes
            )));
        }
        if !(self.radius_factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid radius factor must be positive, got {}",
                self.radius_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridKernel {
    dim: usize,
    xi: Vec<f64>,
    tau: f64,
    t_max: f64,
    y_max: f64,
    ny: usize,
    nt: usize,
    /// Φ = θ^(-power) w.
    power: f64,
    /// Index k · nyⁿ + Σ_i j_i ny^i.
    values: Vec<f64>,
}

impl GridKernel {
    /// Empty (all-zero) kernel on the lattice described by `spec`.
    pub fn zeros(
        xi: &[f64],
        tau: f64,
        t_max: f64,
        y_max: f64,
        spec: &GridSpec,
        power: f64,
    ) -> Result<Self> {
        spec.check()?;
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::NonPositiveTime { dt: t_max });
        }
        if !(y_max > 0.0) {
            return Err(Error::InvalidArgument(format!("grid radius must be positive, got {y_max}")));
        }
        let dim = xi.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "grid kernels support dimensions 1 to 3, got {dim}"
            )));
        }
        let count = spec.space_nodes.pow(dim as u32) * spec.time_nodes;
        Ok(Self {
            dim,
            xi: xi.to_vec(),
            tau,
            t_max,
            y_max,
            ny: spec.space_nodes,
            nt: spec.time_nodes,
            power,
            values: vec![0.0; count],
        })
    }

    /// Samples `f(offset, θ)` at every node.
    pub fn sample<F>(
        xi: &[f64],
        tau: f64,
        t_max: f64,
        y_max: f64,
        spec: &GridSpec,
        power: f64,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64], f64) -> Result<f64> + Sync,
    {
        let mut g = Self::zeros(xi, tau, t_max, y_max, spec, power)?;
        g.fill(|offset, theta| f(offset, theta))?;
        Ok(g)
    }

    /// Recomputes every node value from `f(offset, θ)`, in parallel over nodes.
    pub fn fill<F>(&mut self, f: F) -> Result<()>
    where
        F: Fn(&[f64], f64) -> Result<f64> + Sync,
    {
        use rayon::prelude::*;
        let nodes: Vec<(Vec<f64>, f64)> = (0..self.values.len()).map(|i| self.node(i)).collect();
        let power = self.power;
        let values: Vec<Result<f64>> = nodes
            .par_iter()
            .map(|(y, theta)| {
                let root = theta.sqrt();
                let offset: Vec<f64> = y.iter().map(|v| v * root).collect();
                let phi = f(&offset, *theta)?;
                let w = phi * theta.powf(power);
                if !w.is_finite() {
                    let mut node: Vec<f64> = self.xi.iter().zip(&offset).map(|(a, b)| a + b).collect();
                    node.push(self.tau + theta);
                    return Err(Error::NonFinite { value: phi, node });
                }
                Ok(w)
            })
            .collect();
        for (slot, v) in self.values.iter_mut().zip(values) {
            *slot = v?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> (&[f64], f64) {
        (&self.xi, self.tau)
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            space_nodes: self.ny,
            time_nodes: self.nt,
            radius_factor: f64::NAN,
        }
    }

    fn y_step(&self) -> f64 {
        2.0 * self.y_max / (self.ny - 1) as f64
    }

    fn s_step(&self) -> f64 {
        self.t_max.sqrt() / self.nt as f64
    }

    /// θ of time node k.
    pub fn theta(&self, k: usize) -> f64 {
        let s = self.s_step() * (k + 1) as f64;
        if k + 1 == self.nt {
            self.t_max
        } else {
            s * s
        }
    }

    /// (y, θ) of the node with flat index i.
    pub fn node(&self, i: usize) -> (Vec<f64>, f64) {
        let per_slice = self.ny.pow(self.dim as u32);
        let k = i / per_slice;
        let mut rest = i % per_slice;
        let h = self.y_step();
        let mut y = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            y.push(-self.y_max + h * (rest % self.ny) as f64);
            rest /= self.ny;
        }
        (y, self.theta(k))
    }

    /// Φ at the node with flat index i.
    pub fn node_value(&self, i: usize) -> f64 {
        let (_, theta) = self.node(i);
        self.values[i] * theta.powf(-self.power)
    }

    /// Φ at (ξ + offset, τ + θ). Zero outside the spatial window; the
    /// scaled value is held constant below the first time node.
    pub fn eval_offset(&self, offset: &[f64], theta: f64) -> Result<f64> {
        if !(theta > 0.0) {
            return Ok(0.0);
        }
        if theta > self.t_max * (1.0 + 1e-12) {
            return Err(Error::GridCoverage {
                t: self.tau + theta,
                t_max: self.tau + self.t_max,
            });
        }
        Ok(self.eval_scaled(offset, theta) * theta.powf(-self.power))
    }

    /// The scaled value w at (ξ + offset, τ + θ), θ ≤ t_max.
    pub fn eval_scaled(&self, offset: &[f64], theta: f64) -> f64 {
        let root = theta.sqrt();
        let h = self.y_step();
        let mut idx = [0usize; 3];
        let mut wts = [[0.0f64; 4]; 3];
        for i in 0..self.dim {
            let y = offset[i] / root;
            if !(y.abs() <= self.y_max) {
                return 0.0;
            }
            let (j0, w) = stencil((y + self.y_max) / h, self.ny);
            idx[i] = j0;
            wts[i] = w;
        }
        // Time coordinate: s / Δs − 1 indexes node k.
        let u = (root / self.s_step() - 1.0).clamp(0.0, (self.nt - 1) as f64);
        let (k0, wt) = stencil(u, self.nt);
        let per_slice = self.ny.pow(self.dim as u32);
        let mut total = 0.0;
        for (a, wa) in wt.iter().enumerate() {
            if *wa == 0.0 {
                continue;
            }
            let slice = (k0 + a) * per_slice;
            total += wa * self.spatial_sum(slice, &idx, &wts);
        }
        total
    }

    fn spatial_sum(&self, slice: usize, idx: &[usize; 3], wts: &[[f64; 4]; 3]) -> f64 {
        match self.dim {
            1 => (0..4).map(|a| wts[0][a] * self.values[slice + idx[0] + a]).sum(),
            2 => {
                let mut s = 0.0;
                for b in 0..4 {
                    if wts[1][b] == 0.0 {
                        continue;
                    }
                    let row = slice + (idx[1] + b) * self.ny + idx[0];
                    let r: f64 = (0..4).map(|a| wts[0][a] * self.values[row + a]).sum();
                    s += wts[1][b] * r;
                }
                s
            }
            _ => {
                let n = self.dim;
                let mut s = 0.0;
                let mut pos = vec![0usize; n];
                loop {
                    let mut w = 1.0;
                    let mut flat = 0;
                    let mut stride = 1;
                    for i in 0..n {
                        w *= wts[i][pos[i]];
                        flat += (idx[i] + pos[i]) * stride;
                        stride *= self.ny;
                    }
                    s += w * self.values[slice + flat];
                    if !crate::kernels::advance(&mut pos, 4) {
                        break;
                    }
                }
                s
            }
        }
    }

    /// max |w| over the nodes.
    pub fn max_scaled(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// max over nodes of |Φ| θ^p for a caller-chosen power p.
    pub fn max_weighted(&self, p: f64) -> f64 {
        (0..self.values.len())
            .map(|i| {
                let (_, theta) = self.node(i);
                (self.values[i] * theta.powf(p - self.power)).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// CSV table: a `#`-prefixed metadata header, then one row per node
    /// with columns y_1..y_n, theta, eta_1..eta_n, sigma, value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let xi: Vec<String> = self.xi.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "# dim={}", self.dim)?;
        writeln!(out, "# xi={}", xi.join(" "))?;
        writeln!(out, "# tau={:e}", self.tau)?;
        writeln!(out, "# t_max={:e}", self.t_max)?;
        writeln!(out, "# y_max={:e}", self.y_max)?;
        writeln!(out, "# space_nodes={}", self.ny)?;
        writeln!(out, "# time_nodes={}", self.nt)?;
        writeln!(out, "# power={:e}", self.power)?;
        let mut header = String::new();
        for i in 1..=self.dim {
            let _ = write!(header, "y_{i},");
        }
        header.push_str("theta,");
        for i in 1..=self.dim {
            let _ = write!(header, "eta_{i},");
        }
        header.push_str("sigma,value");
        writeln!(out, "{header}")?;
        for i in 0..self.values.len() {
            let (y, theta) = self.node(i);
            let mut row = String::new();
            for v in &y {
                let _ = write!(row, "{v:e},");
            }
            let _ = write!(row, "{theta:e},");
            for (a, v) in self.xi.iter().zip(&y) {
                let _ = write!(row, "{:e},", a + v * theta.sqrt());
            }
            let _ = write!(row, "{:e},{:e}", self.tau + theta, self.node_value(i));
            writeln!(out, "{row}")?;
        }
        Ok(())
    }

    /// Reads a table written by [`GridKernel::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Config { line, message };
        let mut meta = std::collections::HashMap::new();
        let mut rows: Vec<f64> = Vec::new();
        let mut header_seen = false;
        for (no, line) in input.lines().enumerate() {
            let line = line.map_err(|e| bad(no + 1, e.to_string()))?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let last = line
                .rsplit(',')
                .next()
                .ok_or_else(|| bad(no + 1, "empty row".into()))?;
            rows.push(last.parse().map_err(|_| bad(no + 1, format!("bad value {last:?}")))?);
        }
        let get = |k: &str| -> Result<&String> {
            meta.get(k).ok_or_else(|| bad(0, format!("missing metadata key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| bad(0, format!("bad metadata value for {k}")))
        };
        let xi: Vec<f64> = get("xi")?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad(0, "bad xi".into())))
            .collect::<Result<_>>()?;
        let spec = GridSpec {
            space_nodes: num("space_nodes")? as usize,
            time_nodes: num("time_nodes")? as usize,
            radius_factor: 1.0,
        };
        let mut g = Self::zeros(&xi, num("tau")?, num("t_max")?, num("y_max")?, &spec, num("power")?)?;
        if g.dim != num("dim")? as usize || rows.len() != g.values.len() {
            return Err(bad(0, format!("expected {} rows, found {}", g.values.len(), rows.len())));
        }
        for (i, phi) in rows.into_iter().enumerate() {
            let (_, theta) = g.node(i);
            g.values[i] = phi * theta.powf(g.power);
        }
        Ok(g)
    }

    /// Little-endian binary form: magic, header, scaled values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(MAGIC);
        for v in [self.dim as u64, self.ny as u64, self.nt as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.xi.iter().chain([self.tau, self.t_max, self.y_max, self.power].iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::InvalidArgument(format!("grid kernel bytes: {m}"));
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| corrupt("truncated"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut word = [0u8; 8];
        let mut next = |b: &mut &[u8]| -> Result<[u8; 8]> {
            b.read_exact(&mut word).map_err(|_| corrupt("truncated"))?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut bytes)?) as usize;
        let ny = u64::from_le_bytes(next(&mut bytes)?) as usize;
        let nt = u64::from_le_bytes(next(&mut bytes)?) as usize;
        if dim == 0 || dim > 3 {
            return Err(corrupt("bad dimension"));
        }
        let mut xi = Vec::with_capacity(dim);
        for _ in 0..dim {
            xi.push(f64::from_le_bytes(next(&mut bytes)?));
        }
        let tau = f64::from_le_bytes(next(&mut bytes)?);
        let t_max = f64::from_le_bytes(next(&mut bytes)?);
        let y_max = f64::from_le_bytes(next(&mut bytes)?);
        let power = f64::from_le_bytes(next(&mut bytes)?);
        let spec = GridSpec {
            space_nodes: ny,
            time_nodes: nt,
            radius_factor: 1.0,
        };
        let mut g = Self::zeros(&xi, tau, t_max, y_max, &spec, power)?;
        if bytes.len() != 8 * g.values.len() {
            return Err(corrupt("value count mismatch"));
        }
        for (slot, chunk) in g.values.iter_mut().zip(bytes.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        }
        Ok(g)
    }
}

const MAGIC: &[u8; 8] = b"GBGRID01";

/// Four-point Lagrange stencil at fractional index u in [0, len−1]:
/// first index and weights. Exact at nodes.
fn stencil(u: f64, len: usize) -> (usize, [f64; 4]) {
    let k = (u.floor() as usize).min(len - 2);
    let j0 = k.saturating_sub(1).min(len - 4);
    let x = u - j0 as f64;
    // Nodes at 0, 1, 2, 3.
    let w = [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ];
    (j0, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec {
            space_nodes: 41,
            time_nodes: 12,
            radius_factor: 8.0,
        }
    }

    fn gaussian(offset: &[f64], theta: f64) -> Result<f64> {
        let r2: f64 = offset.iter().map(|v| v * v).sum();
        Ok(theta.powf(-0.5 * offset.len() as f64) * (-r2 / (4.0 * theta)).exp())
    }

    #[test]
    fn stencil_is_exact_at_nodes_and_cubic() {
        for len in [4usize, 7, 20] {
            for j in 0..len {
                let (j0, w) = stencil(j as f64, len);
                for (a, wa) in w.iter().enumerate() {
                    let expect = if j0 + a == j { 1.0 } else { 0.0 };
                    assert!((wa - expect).abs() < 1e-14);
                }
            }
        }
        let (j0, w) = stencil(3.3, 10);
        let v: f64 = (0..4).map(|a| w[a] * ((j0 + a) as f64).powi(3)).sum();
        assert!((v - 3.3f64.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn node_values_round_trip_through_interpolation() {
        let g = GridKernel::sample(&[0.5], 1.0, 0.8, 10.0, &spec(), 0.5, gaussian).unwrap();
        for i in (0..g.node_count()).step_by(37) {
            let (y, theta) = g.node(i);
            let off: Vec<f64> = y.iter().map(|v| v * theta.sqrt()).collect();
            let v = g.eval_offset(&off, theta).unwrap();
            assert!((v - g.node_value(i)).abs() <= 1e-12 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn interpolates_self_similar_gaussian() {
        let g = GridKernel::sample(&[0.0, 0.0], 0.0, 1.0, 10.0, &spec(), 1.0, gaussian).unwrap();
        let v = g.eval_offset(&[0.31, -0.2], 0.37).unwrap();
        let exact = gaussian(&[0.31, -0.2], 0.37).unwrap();
        assert!((v - exact).abs() < 2e-3 * exact, "{v} {exact}");
        assert_eq!(g.eval_offset(&[100.0, 0.0], 0.5).unwrap(), 0.0);
        assert!(matches!(g.eval_offset(&[0.0, 0.0], 2.0), Err(Error::GridCoverage { .. })));
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let g = GridKernel::sample(&[0.25], -1.0, 0.5, 12.0, &spec(), 1.5, gaussian).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridKernel::read_csv(io::Cursor::new(buf)).unwrap();
        for (a, b) in g.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
        let bin = GridKernel::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(bin, g);
        assert!(GridKernel::from_bytes(&g.to_bytes()[..20]).is_err());
    }

    #[test]
    fn non_finite_samples_are_reported() {
        let r = GridKernel::sample(&[0.0], 0.0, 1.0, 5.0, &spec(), 0.0, |_, _| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}

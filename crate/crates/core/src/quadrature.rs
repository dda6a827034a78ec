//! Gauss–Legendre rules, the graded time rule and the quadrature scheme
//! shared by the kernel-mass, convolution and composition routines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on P_n from the Tricomi initial guesses.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let step = p / d;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes/weights mapped to [a, b].
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    /// Composite rule with `panels` equal panels on [a, b].
    pub fn composite(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let panels = panels.max(1);
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.order());
        for p in 0..panels {
            let lo = a + h * p as f64;
            out.extend(self.on(lo, lo + h));
        }
        out
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Nodes and weights on (0, 1) for integrands with integrable power
/// singularities at both ends.
///
/// Each half of the interval is mapped by u = 2^(g-1) v^g (mirrored on the
/// right), which turns u^(-1+β) into a smooth function of v once g ≥ 1/β.
pub fn graded_unit_rule(nodes: usize, grading: f64) -> Vec<(f64, f64)> {
    let per_half = (nodes / 2).max(1);
    let gl = GaussLegendre::new(per_half);
    let g = grading.max(1.0);
    let scale = 2f64.powf(g - 1.0);
    let mut left = Vec::with_capacity(per_half);
    for (v, w) in gl.on(0.0, 0.5) {
        let u = scale * v.powf(g);
        let du = scale * g * v.powf(g - 1.0);
        left.push((u, w * du));
    }
    let mut rule = left.clone();
    for (u, w) in left.iter().rev() {
        rule.push((1.0 - u, *w));
    }
    rule
}

/// Discretisation parameters for space-time integrals.
///
/// The spatial window for a product of two Gaussian-like factors has
/// half-width `spatial_radius_factor` standard deviations of the product;
/// `spatial_nodes_per_axis` nodes cover that nominal window and the node
/// density is kept when the window has to be widened.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureScheme {
    pub spatial_nodes_per_axis: usize,
    pub spatial_radius_factor: f64,
    pub time_nodes: usize,
    /// `None` means 2/β for the field at hand.
    pub time_grading_exponent: Option<f64>,
}

/// Points per Gauss–Legendre panel in the spatial rules.
pub const PANEL_ORDER: usize = 8;

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            spatial_nodes_per_axis: 48,
            spatial_radius_factor: 8.0,
            time_nodes: 32,
            time_grading_exponent: None,
        }
    }
}

impl QuadratureScheme {
    pub fn check(&self) -> Result<()> {
        if self.spatial_nodes_per_axis < 2 || self.time_nodes < 2 {
            return Err(Error::InvalidArgument(format!(
                "quadrature needs at least 2 nodes per direction, got {} spatial / {} time",
                self.spatial_nodes_per_axis, self.time_nodes
            )));
        }
        if !(self.spatial_radius_factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spatial radius factor must be positive, got {}",
                self.spatial_radius_factor
            )));
        }
        if let Some(g) = self.time_grading_exponent {
            if !(g >= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "time grading exponent must be at least 1, got {g}"
                )));
            }
        }
        Ok(())
    }

    /// Twice the nodes in every direction.
    pub fn refined(&self) -> Self {
        Self {
            spatial_nodes_per_axis: self.spatial_nodes_per_axis * 2,
            time_nodes: self.time_nodes * 2,
            ..*self
        }
    }

    pub fn grading_for(&self, beta: f64) -> f64 {
        self.time_grading_exponent.unwrap_or(2.0 / beta)
    }

    /// Panels per axis for the nominal window.
    pub fn panels_per_window(&self) -> usize {
        self.spatial_nodes_per_axis.div_ceil(PANEL_ORDER).max(1)
    }

    pub fn panel_rule(&self) -> GaussLegendre {
        GaussLegendre::new(PANEL_ORDER.min(self.spatial_nodes_per_axis))
    }
}

/// Composite rule on one axis covering `[lo, hi]` at the node density of a
/// nominal window of half-width `radius` split into `panels_per_window`
/// panels.
pub fn window_rule(
    panel: &GaussLegendre,
    lo: f64,
    hi: f64,
    radius: f64,
    panels_per_window: usize,
) -> Vec<(f64, f64)> {
    let panel_len = 2.0 * radius / panels_per_window as f64;
    let panels = (((hi - lo) / panel_len).ceil() as usize).max(1);
    panel.composite(lo, hi, panels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for order in 1..=20 {
            let gl = GaussLegendre::new(order);
            let wsum: f64 = gl.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "order {order}");
            for deg in 0..(2 * order) {
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                let approx: f64 = gl
                    .nodes
                    .iter()
                    .zip(&gl.weights)
                    .map(|(x, w)| w * x.powi(deg as i32))
                    .sum();
                assert!((approx - exact).abs() < 1e-13, "order {order} degree {deg}");
            }
        }
    }

    #[test]
    fn graded_rule_handles_endpoint_singularities() {
        // ∫₀¹ u^(-1/2) (1-u)^(-1/2) du = π
        let rule = graded_unit_rule(32, 4.0);
        assert!(rule.iter().all(|(u, w)| *u > 0.0 && *u < 1.0 && *w > 0.0));
        let v: f64 = rule
            .iter()
            .map(|(u, w)| w * u.powf(-0.5) * (1.0 - u).powf(-0.5))
            .sum();
        assert!((v - std::f64::consts::PI).abs() < 1e-10, "{v}");
        // ∫₀¹ u^(-3/4) du = 4
        let v: f64 = rule.iter().map(|(u, w)| w * u.powf(-0.75)).sum();
        assert!((v - 4.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn scheme_validation() {
        assert!(QuadratureScheme::default().check().is_ok());
        let bad = QuadratureScheme {
            time_nodes: 1,
            ..Default::default()
        };
        assert!(bad.check().is_err());
        let bad = QuadratureScheme {
            time_grading_exponent: Some(0.5),
            ..Default::default()
        };
        assert!(bad.check().is_err());
    }
}

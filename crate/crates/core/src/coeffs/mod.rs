//! Coefficient fields of the non-divergence operator
//! `L = Σ a_ij ∂²_ij + Σ b_i ∂_i + q − ∂_t` and sampling checks of the
//! structural assumptions on them.

mod spd;
mod validate;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exprparse::Expr;

pub use spd::{invert_spd, MatBuf, SpdMatrix, VecBuf, CONDITION_LIMIT};
pub use validate::{
    estimate_holder_seminorm, validate_assumptions, AssumptionCheck, AssumptionReport,
    HolderEstimate,
};

/// The structural constants (n, α, N₁, N₂, M, κ) the bounds depend on.
/// Declared by the user and checked by sampling, never inferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Structure {
    pub n: usize,
    pub alpha: f64,
    pub kappa: f64,
    #[serde(rename = "M")]
    pub big_m: f64,
    #[serde(rename = "N1")]
    pub n1: f64,
    #[serde(rename = "N2")]
    pub n2: f64,
}

impl Structure {
    pub fn new(n: usize, alpha: f64, kappa: f64, big_m: f64, n1: f64, n2: f64) -> Result<Self> {
        let s = Self {
            n,
            alpha,
            kappa,
            big_m,
            n1,
            n2,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConstants(m));
        if self.n == 0 {
            return bad("dimension n must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1]", self.alpha));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa = {} must be positive", self.kappa));
        }
        if !(self.big_m >= self.kappa && self.big_m.is_finite()) {
            return bad(format!(
                "M = {} must be at least kappa = {}",
                self.big_m, self.kappa
            ));
        }
        if !(self.n1 >= 0.0 && self.n1.is_finite()) || !(self.n2 >= 0.0 && self.n2.is_finite()) {
            return bad(format!(
                "N1 = {} and N2 = {} must be non-negative",
                self.n1, self.n2
            ));
        }
        Ok(())
    }

    /// β = α/2
    pub fn beta(&self) -> f64 {
        self.alpha / 2.0
    }
}

/// Axis-aligned box in space-time used for sampling checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Region {
    pub fn cube(n: usize, half_width: f64, t_lo: f64, t_hi: f64) -> Self {
        Self {
            x_lo: vec![-half_width; n],
            x_hi: vec![half_width; n],
            t_lo,
            t_hi,
        }
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.x_lo.len() != n || self.x_hi.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.x_lo.len().min(self.x_hi.len()),
            });
        }
        let flat_axis = self
            .x_lo
            .iter()
            .zip(&self.x_hi)
            .any(|(lo, hi)| !(hi > lo));
        if flat_axis || !(self.t_hi > self.t_lo) {
            return Err(Error::DegenerateRegion(format!("{self:?} has zero volume")));
        }
        Ok(())
    }

    /// Euclidean diameter of the space-time box.
    pub fn diameter(&self) -> f64 {
        let sx: f64 = self
            .x_lo
            .iter()
            .zip(&self.x_hi)
            .map(|(lo, hi)| (hi - lo).powi(2))
            .sum();
        (sx + (self.t_hi - self.t_lo).powi(2)).sqrt()
    }
}

type MatrixFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type VectorFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Evaluators for a(x,t), b(x,t), q(x,t) plus the declared constants.
///
/// `drift` and `potential` are `None` when b ≡ 0 (resp. q ≡ 0) is declared;
/// some bounds are only available in that case. Evaluators must be pure.
#[derive(Clone)]
pub struct CoefficientField {
    structure: Structure,
    diffusion: Arc<MatrixFn>,
    drift: Option<Arc<VectorFn>>,
    potential: Option<Arc<ScalarFn>>,
    region: Region,
    label: String,
    constant_diffusion: bool,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("label", &self.label)
            .field("structure", &self.structure)
            .field("drift", &self.drift.is_some())
            .field("potential", &self.potential.is_some())
            .finish()
    }
}

impl CoefficientField {
    /// `diffusion` fills an n×n row-major buffer.
    pub fn new<F>(structure: Structure, diffusion: F) -> Result<Self>
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        structure.check()?;
        Ok(Self {
            structure,
            diffusion: Arc::new(diffusion),
            drift: None,
            potential: None,
            region: Region::cube(structure.n, 4.0, 0.0, 4.0),
            label: String::from("custom"),
            constant_diffusion: false,
        })
    }

    /// Constant coefficients a, b, q₀.
    pub fn constant(structure: Structure, a: &SpdMatrix, b: Option<&[f64]>, q0: f64) -> Result<Self> {
        if a.dim() != structure.n {
            return Err(Error::Dimension {
                expected: structure.n,
                got: a.dim(),
            });
        }
        let entries = a.entries().to_vec();
        let mut field = Self::new(structure, move |_, _, out| out.copy_from_slice(&entries))?;
        if let Some(b) = b {
            if b.len() != structure.n {
                return Err(Error::Dimension {
                    expected: structure.n,
                    got: b.len(),
                });
            }
            if b.iter().any(|v| *v != 0.0) {
                let b = b.to_vec();
                field = field.with_drift(move |_, _, out| out.copy_from_slice(&b));
            }
        }
        if q0 != 0.0 {
            field = field.with_potential(move |_, _| q0);
        }
        field.label = String::from("constant");
        field.constant_diffusion = true;
        Ok(field)
    }

    /// Coefficients given as parsed formulas. `a` is row-major n×n; missing
    /// drift/potential means identically zero.
    pub fn from_exprs(
        structure: Structure,
        a: Vec<Expr>,
        b: Option<Vec<Expr>>,
        q: Option<Expr>,
    ) -> Result<Self> {
        let n = structure.n;
        if a.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: a.len(),
            });
        }
        if let Some(e) = a.iter().find(|e| e.dim() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: e.dim(),
            });
        }
        let constant = a.iter().all(Expr::is_constant);
        let mut field = Self::new(structure, move |x, t, out| {
            for (o, e) in out.iter_mut().zip(&a) {
                *o = e.eval(x, t).unwrap_or(f64::NAN);
            }
        })?;
        if let Some(b) = b {
            if b.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: b.len(),
                });
            }
            field = field.with_drift(move |x, t, out| {
                for (o, e) in out.iter_mut().zip(&b) {
                    *o = e.eval(x, t).unwrap_or(f64::NAN);
                }
            });
        }
        if let Some(q) = q {
            field = field.with_potential(move |x, t| q.eval(x, t).unwrap_or(f64::NAN));
        }
        field.label = String::from("expressions");
        field.constant_diffusion = constant;
        Ok(field)
    }

    pub fn with_drift<F>(mut self, drift: F) -> Self
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Some(Arc::new(drift));
        self
    }

    pub fn with_potential<F>(mut self, potential: F) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        self.potential = Some(Arc::new(potential));
        self
    }

    pub fn with_region(mut self, region: Region) -> Result<Self> {
        region.check(self.structure.n)?;
        self.region = region;
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Same evaluators, different declared constants.
    pub fn with_structure(mut self, structure: Structure) -> Result<Self> {
        structure.check()?;
        if structure.n != self.structure.n {
            return Err(Error::Dimension {
                expected: self.structure.n,
                got: structure.n,
            });
        }
        self.structure = structure;
        Ok(self)
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.structure.n
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when b ≡ 0 and q ≡ 0 are declared.
    pub fn is_drift_free(&self) -> bool {
        self.drift.is_none() && self.potential.is_none()
    }

    /// True when a(x,t) is known to be constant.
    pub fn has_constant_diffusion(&self) -> bool {
        self.constant_diffusion
    }

    /// True when LZ vanishes identically: constant a and b ≡ 0, q ≡ 0.
    pub fn is_trivially_exact(&self) -> bool {
        self.constant_diffusion && self.is_drift_free()
    }

    pub fn has_drift(&self) -> bool {
        self.drift.is_some()
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some()
    }

    /// Raw a(x,t), not validated.
    pub fn diffusion_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.diffusion)(x, t, out)
    }

    pub fn diffusion(&self, x: &[f64], t: f64) -> SpdMatrix {
        let n = self.structure.n;
        let mut buf: MatBuf = smallvec::smallvec![0.0; n * n];
        (self.diffusion)(x, t, &mut buf);
        SpdMatrix::from_raw(n, &buf).expect("buffer sized to n*n")
    }

    /// b(x,t) into `out`; zeros when b ≡ 0.
    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.drift {
            Some(f) => f(x, t, out),
            None => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    pub fn potential(&self, x: &[f64], t: f64) -> f64 {
        self.potential.as_ref().map_or(0.0, |f| f(x, t))
    }
}

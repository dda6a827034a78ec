//! Line-oriented `key = value` problem files.
//!
//! ```text
//! # mild 1-D field
//! n = 1
//! alpha = 1
//! kappa = 1.5
//! M = 2.5
//! N1 = auto          # sampled Hölder estimate times 1.1
//! N2 = 0
//! a[1][1] = 2 + 0.5*sin(x1)*cos(t)
//! ```
//!
//! Matrix and vector indices start at 1. A missing off-diagonal entry
//! mirrors its transpose, or is 0 when both are missing. `b[i]` and `q`
//! default to 0 and are then treated as absent.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::coeffs::{estimate_holder_seminorm, CoefficientField, Region, Structure};
use crate::error::{Error, Result};
use crate::exprparse::{parse, Expr};
use crate::quadrature::QuadratureScheme;

/// Samples used for `N1 = auto`.
pub const AUTO_SAMPLES: usize = 200_000;
/// Safety factor applied to the sampled Hölder estimate.
pub const AUTO_FACTOR: f64 = 1.1;

#[derive(Debug, Clone, Serialize)]
pub struct ProblemConfig {
    pub structure: Structure,
    /// Row-major source text of a.
    pub a: Vec<String>,
    pub b: Option<Vec<String>>,
    pub q: Option<String>,
    pub quad: QuadratureScheme,
    pub region: Region,
    pub n1_auto: bool,
    pub label: String,
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn number(e: &Entry, key: &str) -> Result<f64> {
    e.value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(e.line, format!("{key} must be a finite number, got '{}'", e.value)))
}

fn count(e: &Entry, key: &str) -> Result<usize> {
    e.value
        .parse::<usize>()
        .map_err(|_| err(e.line, format!("{key} must be a non-negative integer, got '{}'", e.value)))
}

fn list(e: &Entry, key: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = e
        .value
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| err(e.line, format!("{key} must be a comma-separated list of numbers")))?;
    if v.len() != n {
        return Err(err(e.line, format!("{key} needs {n} entries, got {}", v.len())));
    }
    Ok(v)
}

/// Parses `[i]` or `[i][j]` suffixes into zero-based indices.
fn indices(key: &str, line: usize) -> Result<(String, Vec<usize>)> {
    let Some(open) = key.find('[') else {
        return Ok((key.to_string(), Vec::new()));
    };
    let name = key[..open].to_string();
    let mut rest = &key[open..];
    let mut idx = Vec::new();
    while !rest.is_empty() {
        let close = rest
            .find(']')
            .filter(|_| rest.starts_with('['))
            .ok_or_else(|| err(line, format!("malformed index in '{key}'")))?;
        let i: usize = rest[1..close]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("malformed index in '{key}'")))?;
        if i == 0 {
            return Err(err(line, format!("indices start at 1 in '{key}'")));
        }
        idx.push(i - 1);
        rest = &rest[close + 1..];
    }
    Ok((name, idx))
}

impl ProblemConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut scalars: BTreeMap<String, Entry> = BTreeMap::new();
        let mut a_raw: BTreeMap<(usize, usize), Entry> = BTreeMap::new();
        let mut b_raw: BTreeMap<usize, Entry> = BTreeMap::new();
        let mut q_raw: Option<Entry> = None;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected 'key = value', got '{content}'")))?;
            let key: String = key.split_whitespace().collect();
            let entry = Entry {
                line,
                value: value.trim().to_string(),
            };
            if entry.value.is_empty() {
                return Err(err(line, format!("missing value for '{key}'")));
            }
            let (name, idx) = indices(&key, line)?;
            let dup = match (name.as_str(), idx.len()) {
                ("a", 2) => a_raw.insert((idx[0], idx[1]), entry).is_some(),
                ("b", 1) => b_raw.insert(idx[0], entry).is_some(),
                ("q", 0) => q_raw.replace(entry).is_some(),
                ("a", _) | ("b", _) | ("q", _) => {
                    return Err(err(line, format!("wrong number of indices in '{key}'")))
                }
                (_, 0) => scalars.insert(name.clone(), entry).is_some(),
                _ => return Err(err(line, format!("unknown key '{key}'"))),
            };
            if dup {
                return Err(err(line, format!("duplicate key '{key}'")));
            }
        }

        const KNOWN: [&str; 15] = [
            "n",
            "alpha",
            "kappa",
            "M",
            "N1",
            "N2",
            "spatial_nodes",
            "radius_factor",
            "time_nodes",
            "time_grading",
            "x_lo",
            "x_hi",
            "t_lo",
            "t_hi",
            "label",
        ];
        if let Some((k, e)) = scalars.iter().find(|(k, _)| !KNOWN.contains(&k.as_str())) {
            return Err(err(e.line, format!("unknown key '{k}'")));
        }
        let take = |key: &str| scalars.get(key).cloned();
        let need = |key: &str| take(key).ok_or_else(|| err(0, format!("missing required key '{key}'")));
        let n_entry = need("n")?;
        let n = count(&n_entry, "n")?;
        if !(1..=3).contains(&n) {
            return Err(err(n_entry.line, format!("n must be 1, 2 or 3, got {n}")));
        }
        let alpha = number(&need("alpha")?, "alpha")?;
        let kappa = number(&need("kappa")?, "kappa")?;
        let big_m = number(&need("M")?, "M")?;
        let n1_entry = need("N1")?;
        let n1_auto = n1_entry.value == "auto";
        let n1 = if n1_auto { 1.0 } else { number(&n1_entry, "N1")? };
        let n2 = match take("N2") {
            Some(e) => number(&e, "N2")?,
            None => 0.0,
        };
        let structure = Structure::new(n, alpha, kappa, big_m, n1, n2).map_err(|e| {
            let line = if kappa > big_m { need("kappa").map(|e| e.line).unwrap_or(0) } else { 0 };
            err(line, e.to_string())
        })?;

        let check_expr = |e: &Entry, key: &str| -> Result<String> {
            parse(&e.value, n).map_err(|p| err(e.line, format!("{key}: {p}")))?;
            Ok(e.value.clone())
        };
        let mut a = vec![String::new(); n * n];
        for (&(i, j), e) in &a_raw {
            if i >= n || j >= n {
                return Err(err(e.line, format!("a[{}][{}] is outside the {n}x{n} matrix", i + 1, j + 1)));
            }
            a[i * n + j] = check_expr(e, &format!("a[{}][{}]", i + 1, j + 1))?;
        }
        for i in 0..n {
            if a[i * n + i].is_empty() {
                return Err(err(0, format!("missing diagonal entry a[{}][{}]", i + 1, i + 1)));
            }
            for j in 0..n {
                if a[i * n + j].is_empty() {
                    a[i * n + j] = if a[j * n + i].is_empty() { "0".into() } else { a[j * n + i].clone() };
                }
            }
        }
        let b = if b_raw.is_empty() {
            None
        } else {
            let mut b = vec![String::from("0"); n];
            for (&i, e) in &b_raw {
                if i >= n {
                    return Err(err(e.line, format!("b[{}] is outside dimension {n}", i + 1)));
                }
                b[i] = check_expr(e, &format!("b[{}]", i + 1))?;
            }
            Some(b)
        };
        let q = q_raw.as_ref().map(|e| check_expr(e, "q")).transpose()?;

        let mut quad = QuadratureScheme::default();
        if let Some(e) = take("spatial_nodes") {
            quad.spatial_nodes_per_axis = count(&e, "spatial_nodes")?;
        }
        if let Some(e) = take("radius_factor") {
            quad.spatial_radius_factor = number(&e, "radius_factor")?;
        }
        if let Some(e) = take("time_nodes") {
            quad.time_nodes = count(&e, "time_nodes")?;
        }
        if let Some(e) = take("time_grading") {
            quad.time_grading_exponent = Some(number(&e, "time_grading")?);
        }
        quad.check().map_err(|e| err(0, e.to_string()))?;

        let mut region = Region::cube(n, 4.0, 0.0, 4.0);
        if let Some(e) = take("x_lo") {
            region.x_lo = list(&e, "x_lo", n)?;
        }
        if let Some(e) = take("x_hi") {
            region.x_hi = list(&e, "x_hi", n)?;
        }
        if let Some(e) = take("t_lo") {
            region.t_lo = number(&e, "t_lo")?;
        }
        if let Some(e) = take("t_hi") {
            region.t_hi = number(&e, "t_hi")?;
        }
        region.check(n).map_err(|e| err(0, e.to_string()))?;

        let label = take("label").map(|e| e.value).unwrap_or_else(|| "config".into());
        Ok(Self {
            structure,
            a,
            b,
            q,
            quad,
            region,
            n1_auto,
            label,
        })
    }

    /// Builds the coefficient field; resolves `N1 = auto` by sampling.
    pub fn field(&self) -> Result<CoefficientField> {
        let n = self.structure.n;
        let exprs = |v: &[String]| -> Result<Vec<Expr>> { v.iter().map(|s| Ok(parse(s, n)?)).collect() };
        let a = exprs(&self.a)?;
        let b = self.b.as_deref().map(exprs).transpose()?;
        let q = self.q.as_deref().map(|s| parse(s, n)).transpose()?;
        let field = CoefficientField::from_exprs(self.structure, a, b, q)?
            .with_region(self.region.clone())?
            .with_label(self.label.clone());
        if !self.n1_auto {
            return Ok(field);
        }
        let est = estimate_holder_seminorm(&field, AUTO_SAMPLES, &self.region, 0)?;
        let mut s = self.structure;
        s.n1 = est.value * AUTO_FACTOR;
        field.with_structure(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_heat() {
        let c = ProblemConfig::parse("n = 1\nalpha = 1\nkappa = 1\nM = 1\nN1 = 0\na[1][1] = 1\n").unwrap();
        let f = c.field().unwrap();
        assert!(f.is_trivially_exact());
    }

    #[test]
    fn mirrored_off_diagonal() {
        let text = "n=2\nalpha=1\nkappa=0.5\nM=2\nN1=0\na[1][1]=1\na[2][2]=1\na[1][2]=0.25 # upper only\n";
        let c = ProblemConfig::parse(text).unwrap();
        assert_eq!(c.a[2], "0.25");
    }

    #[test]
    fn positioned_errors() {
        let e = ProblemConfig::parse("n = 1\nalpha = 1\nkappa = 1\nM = 1\nN1 = 0\na[1][1] = 1 +\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 6, .. }), "{e}");
        let e = ProblemConfig::parse("n = 1\nalpha = 1\nkappa = 2\nM = 1\nN1 = 0\na[1][1] = 1\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 3, .. }), "{e}");
        let e = ProblemConfig::parse("n = 1\nfoo = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
    }
}

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Inline storage for the small matrices this crate works with (n ≤ 3
/// stays on the stack).
pub type MatBuf = SmallVec<[f64; 9]>;
pub type VecBuf = SmallVec<[f64; 4]>;

/// Cholesky-based inversion rejects matrices whose condition estimate
/// exceeds this.
pub const CONDITION_LIMIT: f64 = 1e12;

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric positive-definite matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    n: usize,
    data: MatBuf,
}

impl SpdMatrix {
    /// Builds and validates (symmetry and positive definiteness).
    pub fn new(n: usize, entries: &[f64]) -> Result<Self> {
        let m = Self::from_raw(n, entries)?;
        m.check_symmetric()?;
        m.cholesky()?;
        Ok(m)
    }

    /// Row-major entries without validation beyond the length check.
    pub fn from_raw(n: usize, entries: &[f64]) -> Result<Self> {
        if n == 0 || entries.len() != n * n {
            return Err(Error::Dimension {
                expected: n * n,
                got: entries.len(),
            });
        }
        Ok(Self {
            n,
            data: MatBuf::from_slice(entries),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data: MatBuf = smallvec::smallvec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn check_symmetric(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.get(i, j);
                let b = self.get(j, i);
                let gap = (a - b).abs();
                if gap > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) || gap.is_nan() {
                    return Err(Error::NotSymmetric { i, j, gap });
                }
            }
        }
        Ok(())
    }

    /// Lower Cholesky factor, row-major.
    pub fn cholesky(&self) -> Result<MatBuf> {
        let n = self.n;
        let mut l: MatBuf = smallvec::smallvec![0.0; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(l)
    }

    pub fn det(&self) -> f64 {
        match self.cholesky() {
            Ok(l) => (0..self.n).map(|i| l[i * self.n + i]).product::<f64>().powi(2),
            Err(_) => f64::NAN,
        }
    }

    /// ⟨A v, v⟩
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.data[i * n + j] * v[j];
            }
            s += row * v[i];
        }
        s
    }

    pub fn mul_vec(&self, v: &[f64]) -> VecBuf {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).map(|j| self.data[i * n + j] * v[j]).sum())
            .collect()
    }

    /// Eigenvalues in ascending order (cyclic Jacobi; exact enough for the
    /// small symmetric matrices used here).
    pub fn eigenvalues(&self) -> VecBuf {
        symmetric_eigenvalues(self.n, &self.data)
    }

    /// Inverse via Cholesky with the condition guard. Also returns det(A).
    pub fn inverse_with_det(&self) -> Result<(SpdMatrix, f64)> {
        let n = self.n;
        let l = self.cholesky()?;
        let diag: VecBuf = (0..n).map(|i| l[i * n + i]).collect();
        let dmax = diag.iter().copied().fold(0.0, f64::max);
        let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let condition = (dmax / dmin).powi(2);
        if condition > CONDITION_LIMIT {
            return Err(Error::IllConditioned {
                condition,
                limit: CONDITION_LIMIT,
            });
        }
        let det = diag.iter().product::<f64>().powi(2);
        // Invert L (lower triangular), then A⁻¹ = L⁻ᵀ L⁻¹.
        let mut linv: MatBuf = smallvec::smallvec![0.0; n * n];
        for i in 0..n {
            linv[i * n + i] = 1.0 / l[i * n + i];
            for j in 0..i {
                let mut s = 0.0;
                for k in j..i {
                    s -= l[i * n + k] * linv[k * n + j];
                }
                linv[i * n + j] = s / l[i * n + i];
            }
        }
        let mut inv: MatBuf = smallvec::smallvec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in i..n {
                    s += linv[k * n + i] * linv[k * n + j];
                }
                inv[i * n + j] = s;
                inv[j * n + i] = s;
            }
        }
        Ok((SpdMatrix { n, data: inv }, det))
    }
}

/// Inverse of an SPD matrix. Rejects non-symmetric or numerically singular
/// input.
pub fn invert_spd(a: &SpdMatrix) -> Result<SpdMatrix> {
    a.check_symmetric()?;
    a.inverse_with_det().map(|(inv, _)| inv)
}

pub(crate) fn symmetric_eigenvalues(n: usize, data: &[f64]) -> VecBuf {
    let mut a: MatBuf = MatBuf::from_slice(data);
    let scale: f64 = data.iter().map(|v| v * v).sum();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                // signum(0.0) is 1.0, so theta == 0 gives the 45° rotation.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: VecBuf = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_scalar_inverses() {
        let id = SpdMatrix::identity(2);
        assert_eq!(invert_spd(&id).unwrap(), id);
        let four = SpdMatrix::diagonal(&[4.0]);
        assert_eq!(invert_spd(&four).unwrap().get(0, 0), 0.25);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            SpdMatrix::new(2, &[1.0, 0.5, 0.4, 1.0]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            SpdMatrix::new(2, &[1.0, 2.0, 2.0, 1.0]),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let nearly_singular = SpdMatrix::diagonal(&[1.0, 1e-14]);
        assert!(matches!(
            invert_spd(&nearly_singular),
            Err(Error::IllConditioned { .. })
        ));
        assert!(matches!(
            SpdMatrix::from_raw(2, &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn det_and_eigenvalues() {
        let a = SpdMatrix::new(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((a.det() - 3.0).abs() < 1e-14);
        let ev = a.eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        let (inv, det) = a.inverse_with_det().unwrap();
        assert!((det - 3.0).abs() < 1e-14);
        assert!((inv.get(0, 1) + 1.0 / 3.0).abs() < 1e-15);
    }
}

//! Small dense linear algebra for symmetric positive (semi-)definite matrices.
//!
//! Dimensions are tiny (a handful of features), so everything is dense and
//! factorizations are recomputed on demand instead of maintaining inverses.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Column vector in feature space.
pub type Vector = DVector<f64>;

/// Absolute eigenvalue tolerance used by every PSD check in the crate.
pub const PSD_TOL: f64 = 1e-9;

/// Dense symmetric matrix. Symmetry is exact: `m[(i, j)] == m[(j, i)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn scaled_identity(d: usize, s: f64) -> Self {
        Self(DMatrix::from_diagonal_element(d, d, s))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Wraps `m`, rejecting non-square or not exactly symmetric input.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::LengthMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Invariant(format!(
                        "matrix not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Builds from a row-major slice of length `d * d`.
    pub fn from_row_slice(d: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != d * d {
            return Err(Error::LengthMismatch {
                expected: d * d,
                got: rows.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(d, d, rows))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// In-place `self += x xᵀ`.
    pub fn add_outer(&mut self, x: &Vector) {
        let d = self.dim();
        for j in 0..d {
            for i in 0..d {
                self.0[(i, j)] += x[i] * x[j];
            }
        }
    }

    /// In-place `self += s I`.
    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.dim() {
            self.0[(i, i)] += s;
        }
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 + &other.0)
    }

    pub fn add_assign(&mut self, other: &SymMat) {
        self.0 += &other.0;
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 - &other.0)
    }

    pub fn mul_vec(&self, v: &Vector) -> Vector {
        &self.0 * v
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &Vector) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for j in 0..d {
            let mut col = 0.0;
            for i in 0..d {
                col += self.0[(i, j)] * v[i];
            }
            acc += col * v[j];
        }
        acc
    }

    /// Largest absolute entry difference against `other`.
    pub fn max_abs_diff(&self, other: &SymMat) -> f64 {
        (&self.0 - &other.0).amax()
    }

    /// All eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Spectral norm, i.e. largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, e| acc.max(e.abs()))
    }
}

/// `||v||_H = sqrt(vᵀ H v)`. Fails if the quadratic form is below `-PSD_TOL`.
pub fn hnorm(v: &Vector, h: &SymMat) -> Result<f64> {
    let q = h.quad_form(v);
    if q < -PSD_TOL {
        return Err(Error::Invariant(format!(
            "negative quadratic form {q:.3e}: metric is not PSD"
        )));
    }
    Ok(q.max(0.0).sqrt())
}

/// `V + x xᵀ`.
pub fn rank_one_update(v: &SymMat, x: &Vector) -> SymMat {
    let mut out = v.clone();
    out.add_outer(x);
    out
}

/// Solves `V θ = b` for symmetric positive definite `V`.
pub fn solve_spd(v: &SymMat, b: &Vector) -> Result<Vector> {
    Ok(SpdFactor::new(v)?.solve(b))
}

/// `ln det V` via Cholesky.
pub fn logdet(v: &SymMat) -> Result<f64> {
    Ok(SpdFactor::new(v)?.logdet())
}

/// Smallest eigenvalue.
pub fn min_eig(v: &SymMat) -> f64 {
    v.eigenvalues().first().copied().unwrap_or(0.0)
}

/// Cholesky factor `V = L Lᵀ` of a positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(v: &SymMat) -> Result<Self> {
        match Cholesky::new(v.0.clone()) {
            Some(chol) if chol.l_dirty().diagonal().iter().all(|&x| x > 0.0) => Ok(Self { chol }),
            _ => Err(Error::NotPositiveDefinite {
                min_eig: min_eig(v),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|x| x.ln())
            .sum::<f64>()
    }

    /// `||x||_{V^{-1}} = sqrt(xᵀ V⁻¹ x)`, computed as `||L⁻¹ x||₂`.
    pub fn inv_norm(&self, x: &Vector) -> f64 {
        self.lower_solve(x).norm()
    }

    /// `L⁻¹ x`.
    pub fn lower_solve(&self, x: &Vector) -> Vector {
        let l = self.chol.l_dirty();
        let d = x.len();
        let mut y = x.clone();
        for i in 0..d {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// `L⁻ᵀ z`: maps the unit sphere onto the unit `V`-sphere.
    pub fn upper_solve_transposed(&self, z: &Vector) -> Vector {
        let l = self.chol.l_dirty();
        let d = z.len();
        let mut y = z.clone();
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in (i + 1)..d {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// `||v||_V = ||Lᵀ v||₂`.
    pub fn norm(&self, v: &Vector) -> f64 {
        let l = self.chol.l_dirty();
        let d = v.len();
        let mut acc = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for k in i..d {
                s += l[(k, i)] * v[k];
            }
            acc += s * s;
        }
        acc.sqrt()
    }
}

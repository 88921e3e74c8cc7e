//! Small dense matrices and the tridiagonal solvers used by the implicit scheme.

use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NpdeError::shape(format!("{rows}x{cols} matrix"), format!("{} entries", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NpdeError::shape("rectangular rows", "ragged rows"));
        }
        Matrix::new(r, c, rows.concat())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(NpdeError::shape(format!("vector of length {}", self.cols), x.len()));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(NpdeError::shape(format!("vector of length {}", self.rows), x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Tridiagonal system: `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i]`.
/// `sub[0]` and `sup[n-1]` are ignored unless the system is cyclic, in which
/// case they couple the first and last unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

const PIVOT_EPS: f64 = 1e-300;

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = M x`, with cyclic corners when `cyclic`.
    pub fn mul(&self, x: &[f64], cyclic: bool) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                if i > 0 {
                    acc += self.sub[i] * x[i - 1];
                } else if cyclic {
                    acc += self.sub[0] * x[n - 1];
                }
                if i + 1 < n {
                    acc += self.sup[i] * x[i + 1];
                } else if cyclic {
                    acc += self.sup[n - 1] * x[0];
                }
                acc
            })
            .collect()
    }

    /// Thomas algorithm; corners are ignored.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if rhs.len() != n || self.sub.len() != n || self.sup.len() != n {
            return Err(NpdeError::shape(format!("tridiagonal system of size {n}"), rhs.len()));
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut beta = self.diag[0];
        if beta.abs() < PIVOT_EPS {
            return Err(NpdeError::Singular("zero pivot at row 0".into()));
        }
        c[0] = self.sup[0] / beta;
        d[0] = rhs[0] / beta;
        for i in 1..n {
            beta = self.diag[i] - self.sub[i] * c[i - 1];
            if beta.abs() < PIVOT_EPS || !beta.is_finite() {
                return Err(NpdeError::Singular(format!("zero pivot at row {i}")));
            }
            c[i] = self.sup[i] / beta;
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / beta;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    /// Cyclic system via the Sherman–Morrison correction.
    pub fn solve_cyclic(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        if n < 3 {
            return Err(NpdeError::invalid("n", "cyclic systems need at least 3 unknowns"));
        }
        let alpha = self.sup[n - 1]; // row n-1, column 0
        let beta = self.sub[0]; // row 0, column n-1
        let gamma = -self.diag[0];
        let mut modified = self.clone();
        modified.diag[0] -= gamma;
        modified.diag[n - 1] -= alpha * beta / gamma;
        let x = modified.solve(rhs)?;
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = alpha;
        let z = modified.solve(&u)?;
        let denom = 1.0 + z[0] + beta * z[n - 1] / gamma;
        if denom.abs() < PIVOT_EPS {
            return Err(NpdeError::Singular("cyclic correction denominator vanished".into()));
        }
        let fact = (x[0] + beta * x[n - 1] / gamma) / denom;
        Ok(x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(n: usize) -> Tridiagonal {
        Tridiagonal {
            sub: (0..n).map(|i| -0.3 - 0.01 * i as f64).collect(),
            diag: (0..n).map(|i| 2.0 + 0.1 * i as f64).collect(),
            sup: (0..n).map(|i| -0.7 + 0.02 * i as f64).collect(),
        }
    }

    #[test]
    fn thomas_residual() {
        let m = system(9);
        let rhs: Vec<f64> = (0..9).map(|i| (i as f64).sin()).collect();
        let x = m.solve(&rhs).unwrap();
        let back = m.mul(&x, false);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn cyclic_residual() {
        let m = system(7);
        let rhs: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).cos()).collect();
        let x = m.solve_cyclic(&rhs).unwrap();
        let back = m.mul(&x, true);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = Tridiagonal {
            sub: vec![0.0; 3],
            diag: vec![0.0, 1.0, 1.0],
            sup: vec![0.0; 3],
        };
        assert!(matches!(m.solve(&[1.0, 1.0, 1.0]), Err(NpdeError::Singular(_))));
    }
}

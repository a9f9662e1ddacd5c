//! Compressed sparse row matrices and spectral-radius estimation.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut m = CsrMatrix::zeros(n_rows, n_cols);
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::invalid("triplet", format!("({r}, {c}) outside {n_rows}x{n_cols}")));
            }
            if last == Some((r, c)) {
                *m.values.last_mut().unwrap() += v;
                continue;
            }
            m.col_idx.push(c);
            m.values.push(v);
            m.row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            m.row_ptr[r + 1] += m.row_ptr[r];
        }
        Ok(m)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `out = self · x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(out.len(), self.n_rows);
        for (r, o) in out.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let mut acc = 0.0;
            for (c, v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                acc += v * x[*c];
            }
            *o = acc;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                d[(r, c)] += v;
            }
        }
        d
    }

    fn mul_dense(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.n_rows, q.ncols());
        for j in 0..q.ncols() {
            let col = q.column(j);
            let x = col.as_slice();
            let mut zc = z.column_mut(j);
            self.mul_vec_into(x, zc.as_mut_slice());
        }
        z
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralRadiusOptions {
    /// Relative change in the estimate below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Width of the iterated block.
    pub block: usize,
    /// Matrices up to this order use a dense Schur decomposition.
    pub dense_threshold: usize,
}

impl Default for SpectralRadiusOptions {
    fn default() -> Self {
        SpectralRadiusOptions {
            tol: 1e-10,
            max_iter: 10_000,
            block: 24,
            dense_threshold: 300,
        }
    }
}

/// Largest eigenvalue modulus of a dense matrix via the real Schur form.
pub fn dense_spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid("matrix", "spectral radius needs a square matrix"));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigensolver("Schur iteration did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

pub fn spectral_radius(a: &CsrMatrix) -> Result<f64> {
    spectral_radius_with(a, SpectralRadiusOptions::default())
}

/// Spectral radius of a sparse square matrix.
///
/// Small matrices go through [`dense_spectral_radius`]. Larger ones use block
/// power iteration: an orthonormal block is repeatedly multiplied by `A` and
/// re-orthonormalized, and the radius is read off the Ritz values of the
/// projected block. The block captures complex-conjugate leading pairs and
/// clusters of near-equal modulus that defeat single-vector power iteration.
pub fn spectral_radius_with(a: &CsrMatrix, opts: SpectralRadiusOptions) -> Result<f64> {
    let n = a.n_rows;
    if n != a.n_cols {
        return Err(Error::invalid("matrix", "spectral radius needs a square matrix"));
    }
    if n == 0 || a.nnz() == 0 {
        return Ok(0.0);
    }
    if n <= opts.dense_threshold {
        return dense_spectral_radius(&a.to_dense());
    }

    let p = opts.block.clamp(2, n);
    let mut rng = seeds::rng(0x5EED_0F_5EC7);
    let start = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    let mut q = start.qr().q();

    let mut prev = f64::NAN;
    let mut last_change = f64::INFINITY;
    let mut settled = 0;
    for it in 1..=opts.max_iter {
        let z = a.mul_dense(&q);
        let h = q.transpose() * &z;
        let ritz = nalgebra::Schur::try_new(h, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Eigensolver("Ritz Schur iteration did not converge".into()))?
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if it > 1 {
            last_change = (ritz - prev).abs() / ritz.max(f64::MIN_POSITIVE);
            if last_change <= opts.tol {
                settled += 1;
                if settled >= 3 {
                    return Ok(ritz);
                }
            } else {
                settled = 0;
            }
        }
        prev = ritz;
        if z.norm() == 0.0 {
            // nilpotent on the block
            return Ok(0.0);
        }
        q = z.qr().q();
    }
    Err(Error::SpectralRadiusNoConvergence {
        iterations: opts.max_iter,
        last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_and_matvec() {
        let m = CsrMatrix::from_triplets(3, 3, &[(2, 0, 1.0), (0, 1, 2.0), (0, 1, 0.5), (1, 2, -1.0)]).unwrap();
        assert_eq!(m.nnz(), 3);
        let mut out = [0.0; 3];
        m.mul_vec_into(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [5.0, -3.0, 1.0]);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn radius_of_rotation_block_is_complex_modulus() {
        // eigenvalues ±2i and 0.5
        let m = CsrMatrix::from_triplets(3, 3, &[(0, 1, -2.0), (1, 0, 2.0), (2, 2, 0.5)]).unwrap();
        assert!((spectral_radius(&m).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn block_iteration_matches_dense_on_random_sparse() {
        let n = 500;
        let mut rng = seeds::rng(3);
        let mut trip = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if rng.random_bool(6.0 / n as f64) {
                    trip.push((r, c, rng.random_range(-0.5..0.5)));
                }
            }
        }
        let m = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let dense = dense_spectral_radius(&m.to_dense()).unwrap();
        let opts = SpectralRadiusOptions {
            dense_threshold: 0,
            ..Default::default()
        };
        let block = spectral_radius_with(&m, opts).unwrap();
        assert!((dense - block).abs() < 1e-8 * dense, "{dense} vs {block}");
    }

    #[test]
    fn zero_matrix_has_zero_radius() {
        assert_eq!(spectral_radius(&CsrMatrix::zeros(4, 4)).unwrap(), 0.0);
    }
}

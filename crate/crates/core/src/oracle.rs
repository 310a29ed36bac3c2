//! Dense reference implementation for small grids.
//!
//! Everything here works on explicit `N x N` matrices with textbook
//! algorithms. The Cholesky factor is rebuilt from the raw parameter maps
//! with its own copy of the entry formulas, so it shares no code with the
//! sparse operators it is used to check.

use nalgebra::{DMatrix, DVector};

use crate::distribution::StructuredGaussian;
use crate::error::{Error, Result};
use crate::grid::{Parameterization, SampleBundle};
use crate::rng;

/// Largest pixel count the oracle will materialise.
pub const DENSE_CAPACITY: usize = 4096;

#[derive(Debug, Clone)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub cholesky_precision: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

/// Dense `L` with boundary zeros.
pub fn dense_cholesky_factor(g: &StructuredGaussian) -> Result<DMatrix<f64>> {
    let shape = g.shape();
    let n = shape.len();
    if n > DENSE_CAPACITY {
        return Err(Error::Capacity { pixels: n, capacity: DENSE_CAPACITY });
    }
    let maps = g.chol();
    let (h, w) = (shape.height() as isize, shape.width() as isize);
    let phi = maps.log_diag();
    let psi = maps.off_diag();
    let mut l = DMatrix::zeros(n, n);
    for row in 0..n {
        let (y, x) = ((row as isize) / w, (row as isize) % w);
        l[(row, row)] = match maps.parameterization() {
            Parameterization::Plain => phi[row].exp(),
            Parameterization::Scaled { a, b, .. } => phi[row].exp() * a.exp() + b.exp(),
        };
        for (k, o) in maps.pattern().offsets().iter().enumerate() {
            let (ny, nx) = (y + o.dy, x + o.dx);
            if ny < 0 || ny >= h || nx < 0 || nx >= w {
                continue;
            }
            let raw = psi[k * n + row];
            l[(row, (ny * w + nx) as usize)] = match maps.parameterization() {
                Parameterization::Plain => raw,
                Parameterization::Scaled { c, .. } => raw.tanh() * c[k],
            };
        }
    }
    Ok(l)
}

pub fn assemble_dense(g: &StructuredGaussian) -> Result<DenseGaussian> {
    let l = dense_cholesky_factor(g)?;
    let precision = &l * l.transpose();
    let covariance = precision
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalDomain("assembled precision is not positive definite".into()))?
        .inverse();
    Ok(DenseGaussian {
        mean: DVector::from_column_slice(g.mean()),
        cholesky_precision: l,
        precision,
        covariance,
    })
}

impl DenseGaussian {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `-N/2 ln 2pi + 1/2 ln det Λ - 1/2 r^T Λ r`, with `ln det Λ` taken from
    /// a fresh Cholesky factorisation of the assembled precision.
    pub fn log_density(&self, d: &[f64]) -> Result<f64> {
        let chol = self
            .precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalDomain("precision is not positive definite".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let r = DVector::from_column_slice(d) - &self.mean;
        let quad = (r.transpose() * &self.precision * &r)[(0, 0)];
        let n = self.len() as f64;
        Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det - 0.5 * quad)
    }

    /// `mu + chol(Σ) ε` with `ε` drawn from the same stream as the sparse sampler.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
        let factor = self
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NumericalDomain("covariance is not positive definite".into()))?
            .l();
        let n = self.len();
        let eps = rng::standard_normals(seed, count * n);
        Ok(eps
            .chunks(n)
            .map(|e| &self.mean + &factor * DVector::from_column_slice(e))
            .collect())
    }

    /// Conditional mean `b` and covariance `B` of the unknown pixels,
    /// from covariance blocks.
    pub fn conditional(&self, known: &[usize], alpha: &[f64]) -> Result<DenseConditional> {
        let n = self.len();
        let mut is_known = vec![false; n];
        known.iter().for_each(|&k| is_known[k] = true);
        let unknown: Vec<usize> = (0..n).filter(|&i| !is_known[i]).collect();
        let sub = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.covariance[(rows[i], cols[j])])
        };
        let s_uk = sub(&unknown, known);
        let s_kk = sub(known, known);
        let s_uu = sub(&unknown, &unknown);
        let s_kk_inv = s_kk
            .cholesky()
            .ok_or_else(|| Error::NumericalDomain("Σ_KK is not positive definite".into()))?
            .inverse();
        let gain = &s_uk * &s_kk_inv;
        let innovation = DVector::from_iterator(known.len(), known.iter().map(|&k| alpha[k] - self.mean[k]));
        let mu_u = DVector::from_iterator(unknown.len(), unknown.iter().map(|&u| self.mean[u]));
        let mean = mu_u + &gain * innovation;
        let cov = s_uu - &gain * s_uk.transpose();
        Ok(DenseConditional { unknown, gain, mean, covariance: cov })
    }

    /// `-Λ_UU^{-1} Λ_UK`, computed from the dense precision.
    pub fn precision_gain(&self, known: &[usize]) -> Result<DMatrix<f64>> {
        let n = self.len();
        let mut is_known = vec![false; n];
        known.iter().for_each(|&k| is_known[k] = true);
        let unknown: Vec<usize> = (0..n).filter(|&i| !is_known[i]).collect();
        let l_uu = DMatrix::from_fn(unknown.len(), unknown.len(), |i, j| self.precision[(unknown[i], unknown[j])]);
        let l_uk = DMatrix::from_fn(unknown.len(), known.len(), |i, j| self.precision[(unknown[i], known[j])]);
        let inv = l_uu
            .cholesky()
            .ok_or_else(|| Error::NumericalDomain("Λ_UU is not positive definite".into()))?
            .inverse();
        Ok(-(inv * l_uk))
    }

    pub fn min_precision_eigenvalue(&self) -> f64 {
        self.precision.clone().symmetric_eigen().eigenvalues.min()
    }
}

#[derive(Debug, Clone)]
pub struct DenseConditional {
    pub unknown: Vec<usize>,
    /// `Σ_UK Σ_KK^{-1}`.
    pub gain: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn dense_log_density(g: &StructuredGaussian, d: &[f64]) -> Result<f64> {
    assemble_dense(g)?.log_density(d)
}

pub fn dense_sample(g: &StructuredGaussian, count: usize, seed: u64) -> Result<SampleBundle> {
    let dense = assemble_dense(g)?;
    let values = dense.sample(count, seed)?.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect();
    SampleBundle::new(g.shape(), count, values)
}

pub fn dense_conditional(g: &StructuredGaussian, known: &[usize], alpha: &[f64]) -> Result<DenseConditional> {
    assemble_dense(g)?.conditional(known, alpha)
}

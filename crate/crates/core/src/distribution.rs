//! The structured Gaussian `N(mu, (L L^T)^{-1})` over a grid.

use crate::error::{invalid, Result};
use crate::grid::{CholeskyMaps, GridMap, GridShape, SampleBundle};
use crate::linops::{self, Direction, JacobiOptions, LinearOperatorView};
use crate::par;
use crate::rng;

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Half-width of the value range used when rendering covariance rows.
pub const COVARIANCE_RENDER_CLIP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGaussian {
    mean: Vec<f64>,
    chol: CholeskyMaps,
}

/// How covariance rows are solved.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RowSolver {
    #[default]
    Exact,
    Jacobi(JacobiOptions),
}

impl StructuredGaussian {
    pub fn new(mean: Vec<f64>, chol: CholeskyMaps) -> Result<Self> {
        chol.shape().check_len(mean.len(), "mean map")?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(invalid("mean must be finite"));
        }
        Ok(Self { mean, chol })
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.chol.shape()
    }

    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    #[inline]
    pub fn chol(&self) -> &CholeskyMaps {
        &self.chol
    }

    /// `ln p(d) = -N/2 ln 2pi + sum ln diag(L) - 1/2 |L^T (d - mu)|^2`.
    pub fn log_density(&self, d: &[f64]) -> Result<f64> {
        self.shape().check_len(d.len(), "observation")?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(invalid("observation must be finite"));
        }
        let r: Vec<f64> = d.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let w = linops::apply_lt(&self.chol, &r);
        Ok(self.log_normalizer() - 0.5 * w.iter().map(|v| v * v).sum::<f64>())
    }

    /// `-N/2 ln 2pi + ln det L`.
    pub fn log_normalizer(&self) -> f64 {
        let n = self.shape().len() as f64;
        self.chol.log_effective_diagonal().iter().sum::<f64>() - n * HALF_LN_2PI
    }

    /// Sum of [`log_density`](Self::log_density) over all maps of the bundle.
    pub fn log_density_bundle(&self, bundle: &SampleBundle) -> Result<f64> {
        Ok(self.log_density_per_sample(bundle)?.iter().sum())
    }

    pub fn log_density_per_sample(&self, bundle: &SampleBundle) -> Result<Vec<f64>> {
        if bundle.shape() != self.shape() {
            return Err(invalid("bundle shape does not match the distribution"));
        }
        let n = self.shape().len();
        let r: Vec<f64> = bundle
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v - self.mean[i % n])
            .collect();
        let w = linops::apply_lt(&self.chol, &r);
        let c = self.log_normalizer();
        Ok(w.chunks(n).map(|ws| c - 0.5 * ws.iter().map(|v| v * v).sum::<f64>()).collect())
    }

    /// Draws `count` maps `mu + L^{-T} E` with `E` from [`rng::standard_normals`]
    /// and the inverse applied by the Jacobi solver.
    pub fn sample(&self, count: usize, seed: u64, jacobi: JacobiOptions) -> Result<SampleBundle> {
        let e = self.noise(count, seed)?;
        let z = linops::jacobi_solve_lt(&self.chol, &e, jacobi)?.solution;
        self.shift(count, z)
    }

    /// Same draws as [`sample`](Self::sample) but with exact back-substitution.
    pub fn sample_exact(&self, count: usize, seed: u64) -> Result<SampleBundle> {
        let e = self.noise(count, seed)?;
        let z = LinearOperatorView::new(&self.chol, Direction::LTranspose).solve(&e)?;
        self.shift(count, z)
    }

    fn noise(&self, count: usize, seed: u64) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        Ok(rng::standard_normals(seed, count * self.shape().len()))
    }

    fn shift(&self, count: usize, mut z: Vec<f64>) -> Result<SampleBundle> {
        let n = self.shape().len();
        par::for_each_chunk(&mut z, n, |_, s| {
            s.iter_mut().zip(&self.mean).for_each(|(v, m)| *v += m)
        });
        SampleBundle::new(self.shape(), count, z)
    }

    /// Row `k` of `Σ = L^{-T} L^{-1}`: solve with `L` on the one-hot `e_k`,
    /// then with `L^T`.
    pub fn covariance_row(&self, k: usize, solver: RowSolver) -> Result<GridMap> {
        let n = self.shape().len();
        if k >= n {
            return Err(invalid(format!("pixel index {k} out of range for {n} pixels")));
        }
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let half = LinearOperatorView::new(&self.chol, Direction::L).solve(&e)?;
        let row = match solver {
            RowSolver::Exact => LinearOperatorView::new(&self.chol, Direction::LTranspose).solve(&half)?,
            RowSolver::Jacobi(opts) => linops::jacobi_solve_lt(&self.chol, &half, opts)?.solution,
        };
        GridMap::new(self.shape(), row)
    }
}

/// Signed square root, clipped to `[-0.05, 0.05]` for display.
pub fn visualize_covariance_row(row: &GridMap) -> GridMap {
    let v = row
        .values()
        .iter()
        .map(|&c| (c.signum() * c.abs().sqrt()).clamp(-COVARIANCE_RENDER_CLIP, COVARIANCE_RENDER_CLIP))
        .map(|c| if c == 0.0 { 0.0 } else { c })
        .collect();
    GridMap::new(row.shape(), v).expect("same shape")
}

/// Elementwise output transform applied after sampling in logit space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    ScaledSigmoid { min: f64, max: f64 },
}

impl Activation {
    pub fn scaled_sigmoid(min: f64, max: f64) -> Result<Self> {
        if !(min < max) {
            return Err(invalid(format!("scaled sigmoid needs min < max, got [{min}, {max}]")));
        }
        Ok(Activation::ScaledSigmoid { min, max })
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Activation::Identity => v,
            Activation::ScaledSigmoid { min, max } => min + (max - min) * sigmoid(v),
        }
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn apply_activation(bundle: &SampleBundle, act: Activation) -> Result<SampleBundle> {
    if let Activation::ScaledSigmoid { min, max } = act {
        Activation::scaled_sigmoid(min, max)?;
    }
    let v = bundle.values().iter().map(|&x| act.apply(x)).collect();
    SampleBundle::new(bundle.shape(), bundle.count(), v)
}

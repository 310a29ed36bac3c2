//! Randomised sparse-versus-dense comparisons.

use serde::{Deserialize, Serialize};

use crate::conditioning::{conditional_mean, CgOptions, Conditioning, PixelMask};
use crate::distribution::RowSolver;
use crate::error::Result;
use crate::grid::{GridShape, SparsityPattern};
use crate::linops::{Direction, LinearOperatorView};
use crate::oracle::assemble_dense;
use crate::rng::NormalStream;
use crate::synth::{random_model, RandomModelSpec};

/// Relative error bound every cross-check must meet.
pub const CROSSCHECK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub schema_version: u32,
    pub instances: usize,
    pub checks: Vec<CheckResult>,
}

impl CrossCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `|a - b|_inf / |b|_inf`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Runs `seeds` instances on grids from 4x4 up to `max_shape`, cycling
/// through radius 1 and 2 with and without scaling.
pub fn run(seeds: usize, max_shape: GridShape) -> Result<CrossCheckReport> {
    let names = ["log_density", "apply_lambda", "covariance_row", "conditional_mean"];
    let mut worst = [0.0f64; 4];
    let (max_h, max_w) = (max_shape.height().max(4), max_shape.width().max(4));
    for seed in 0..seeds as u64 {
        let mut rng = NormalStream::new(0x5eed_0000 + seed);
        let mut pick = |lo: usize, hi: usize| lo + ((hi - lo + 1) as f64 * rng.uniform()) as usize;
        let shape = GridShape::new(pick(4, max_h), pick(4, max_w))?;
        let radius = 1 + (seed % 2) as usize;
        let scaled = (seed / 2) % 2 == 1;
        let pattern = SparsityPattern::canonical(radius)?;
        let g = random_model(shape, &pattern, RandomModelSpec { scaled, ..Default::default() }, seed);
        let dense = assemble_dense(&g)?;
        let n = shape.len();

        let mut noise = NormalStream::new(seed ^ 0xa5a5);
        let d: Vec<f64> = (0..n).map(|_| noise.next_normal()).collect();
        let lp = g.log_density(&d)?;
        worst[0] = worst[0].max(rel_err(&[lp], &[dense.log_density(&d)?]));

        let lam = LinearOperatorView::new(g.chol(), Direction::Lambda).apply(&d)?;
        let dense_lam = &dense.precision * nalgebra::DVector::from_column_slice(&d);
        worst[1] = worst[1].max(rel_err(&lam, dense_lam.as_slice()));

        let k = (noise.uniform() * n as f64) as usize;
        let row = g.covariance_row(k, RowSolver::Exact)?;
        let dense_row: Vec<f64> = dense.covariance.row(k).iter().copied().collect();
        worst[2] = worst[2].max(rel_err(row.values(), &dense_row));

        let known: Vec<usize> = (0..n).filter(|_| noise.uniform() < 0.25).collect();
        if !known.is_empty() && known.len() < n {
            let alpha: Vec<f64> = (0..n).map(|_| noise.next_normal()).collect();
            let cond = Conditioning::new(PixelMask::from_indices(shape, &known)?, alpha.clone())?;
            let cm = conditional_mean(&g, &cond, CgOptions::default())?;
            let dc = dense.conditional(&known, &alpha)?;
            let sparse_u: Vec<f64> = dc.unknown.iter().map(|&u| cm.values()[u]).collect();
            worst[3] = worst[3].max(rel_err(&sparse_u, dc.mean.as_slice()));
        }
    }
    Ok(CrossCheckReport {
        schema_version: 1,
        instances: seeds,
        checks: names
            .iter()
            .zip(worst)
            .map(|(name, e)| CheckResult {
                name: name.to_string(),
                max_rel_err: e,
                tolerance: CROSSCHECK_TOLERANCE,
                passed: e < CROSSCHECK_TOLERANCE,
            })
            .collect(),
    })
}

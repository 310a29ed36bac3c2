//! Wall-time scaling of Jacobi sampling with grid size.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{GridShape, SparsityPattern};
use crate::linops::JacobiOptions;
use crate::synth::{random_model, RandomModelSpec};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Largest allowed growth in sampling time when the pixel count doubles.
pub const MAX_DOUBLING_RATIO: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Grid sizes to time, in increasing pixel count.
    pub sizes: Vec<GridShape>,
    pub radius: usize,
    pub iterations: usize,
    pub samples: usize,
    /// Timings are the fastest of this many repeats.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        let sizes = [128, 256, 512, 1024].iter().map(|&w| GridShape::new(128, w).expect("valid")).collect();
        Self { sizes, radius: 1, iterations: 50, samples: 4, repeats: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub height: usize,
    pub width: usize,
    pub pixels: usize,
    pub seconds_per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub schema_version: u32,
    pub threads: usize,
    pub radius: usize,
    pub iterations: usize,
    pub points: Vec<ScalingPoint>,
    /// Time ratio between consecutive sizes.
    pub step_ratios: Vec<f64>,
    /// Step ratios rescaled to one doubling of the pixel count.
    pub per_doubling_ratios: Vec<f64>,
    pub max_allowed_ratio: f64,
    pub passed: bool,
}

pub fn sampling_scaling(cfg: &ScalingConfig) -> Result<ScalingReport> {
    if cfg.sizes.len() < 2 || cfg.samples == 0 || cfg.repeats == 0 || cfg.iterations == 0 {
        return Err(invalid("scaling needs two or more sizes and positive counts"));
    }
    if cfg.sizes.windows(2).any(|s| s[1].len() <= s[0].len()) {
        return Err(invalid("sizes must grow in pixel count"));
    }
    let pattern = SparsityPattern::canonical(cfg.radius)?;
    let jacobi = JacobiOptions::fixed(cfg.iterations);
    let models: Vec<_> = cfg.sizes.iter().map(|&shape| random_model(shape, &pattern, RandomModelSpec::default(), cfg.seed)).collect();
    let mut best = vec![f64::INFINITY; models.len()];
    // repeats cycle through the sizes so slow periods hit all of them
    for r in 0..=cfg.repeats {
        for (g, t) in models.iter().zip(&mut best) {
            let start = Instant::now();
            g.sample(cfg.samples, cfg.seed + r as u64, jacobi)?;
            // round 0 is a warm-up
            if r > 0 {
                *t = t.min(start.elapsed().as_secs_f64());
            }
        }
    }
    let points: Vec<ScalingPoint> = cfg
        .sizes
        .iter()
        .zip(&best)
        .map(|(shape, t)| ScalingPoint {
            height: shape.height(),
            width: shape.width(),
            pixels: shape.len(),
            seconds_per_sample: t / cfg.samples as f64,
        })
        .collect();
    let step: Vec<f64> = points.windows(2).map(|p| p[1].seconds_per_sample / p[0].seconds_per_sample).collect();
    let per_doubling: Vec<f64> = points
        .windows(2)
        .zip(&step)
        .map(|(p, r)| r.powf(1.0 / (p[1].pixels as f64 / p[0].pixels as f64).log2()))
        .collect();
    Ok(ScalingReport {
        schema_version: REPORT_SCHEMA_VERSION,
        threads: crate::par::thread_count(),
        radius: cfg.radius,
        iterations: cfg.iterations,
        passed: per_doubling.iter().all(|r| *r <= MAX_DOUBLING_RATIO),
        points,
        step_ratios: step,
        per_doubling_ratios: per_doubling,
        max_allowed_ratio: MAX_DOUBLING_RATIO,
    })
}

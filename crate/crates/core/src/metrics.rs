//! Depth accuracy metrics and sparsification-based uncertainty scores.
//!
//! Sparsification removes the least confident pixels first and tracks the
//! error of what remains. Curves are sampled on a fraction grid and
//! integrated with the trapezoid rule:
//!
//! * AUSE is the area between the uncertainty-ranked curve and the oracle
//!   curve that removes the largest errors first.
//! * AURG is the area between the random-removal curve, whose expectation
//!   is constant at the full-set error, and the uncertainty-ranked curve.
//!
//! Rankings are stable: equal scores are removed in raster order.
//! `A1` is turned into an error by using `1 - A1`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{GridMap, GridShape, SampleBundle};

/// Ratio threshold for the A1 accuracy.
pub const A1_THRESHOLD: f64 = 1.25;
pub const DEFAULT_FRACTION_STEPS: usize = 50;
pub const DEFAULT_MAX_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub shape: GridShape,
    pub prediction: Vec<f64>,
    pub ground_truth: Vec<f64>,
    /// Higher means less confident.
    pub uncertainty: Vec<f64>,
    pub valid: Vec<bool>,
}

impl EvalPair {
    pub fn new(
        prediction: &GridMap,
        ground_truth: &GridMap,
        uncertainty: &GridMap,
        valid: Option<Vec<bool>>,
    ) -> Result<Self> {
        let shape = prediction.shape();
        if ground_truth.shape() != shape || uncertainty.shape() != shape {
            return Err(invalid("evaluation maps must share a shape"));
        }
        let valid = valid.unwrap_or_else(|| vec![true; shape.len()]);
        shape.check_len(valid.len(), "valid mask")?;
        Ok(Self {
            shape,
            prediction: prediction.values().to_vec(),
            ground_truth: ground_truth.values().to_vec(),
            uncertainty: uncertainty.values().to_vec(),
            valid,
        })
    }

    fn valid_indices(&self) -> Vec<usize> {
        (0..self.valid.len()).filter(|&i| self.valid[i]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub absrel: f64,
    pub rmse: f64,
    pub a1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    AbsRel,
    Rmse,
    A1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::AbsRel, Metric::Rmse, Metric::A1];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::AbsRel => "absrel",
            Metric::Rmse => "rmse",
            Metric::A1 => "a1",
        }
    }

    /// Per-pixel contribution; the metric over a set is the mean of these
    /// (square-rooted for RMSE).
    fn pixel_error(&self, p: f64, g: f64) -> f64 {
        match self {
            Metric::AbsRel => (p - g).abs() / g,
            Metric::Rmse => (p - g).powi(2),
            Metric::A1 => {
                if (p / g).max(g / p) < A1_THRESHOLD {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    fn aggregate(&self, sum: f64, count: usize) -> f64 {
        let m = sum / count as f64;
        match self {
            Metric::Rmse => m.sqrt(),
            _ => m,
        }
    }
}

fn check_depth(pair: &EvalPair, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(invalid("no valid pixels"));
    }
    for &i in idx {
        if pair.ground_truth[i] == 0.0 {
            return Err(invalid(format!("ground truth is zero at valid pixel {i}")));
        }
    }
    Ok(())
}

pub fn depth_metrics(pair: &EvalPair) -> Result<DepthMetrics> {
    let idx = pair.valid_indices();
    check_depth(pair, &idx)?;
    let k = idx.len() as f64;
    let (mut abs, mut sq, mut good) = (0.0, 0.0, 0usize);
    for &i in &idx {
        let (p, g) = (pair.prediction[i], pair.ground_truth[i]);
        abs += (p - g).abs() / g;
        sq += (p - g).powi(2);
        if (p / g).max(g / p) < A1_THRESHOLD {
            good += 1;
        }
    }
    Ok(DepthMetrics { absrel: abs / k, rmse: (sq / k).sqrt(), a1: good as f64 / k })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsificationResult {
    pub metric: Metric,
    pub fractions: Vec<f64>,
    pub uncertainty_curve: Vec<f64>,
    pub oracle_curve: Vec<f64>,
    /// Full-set error, the expected curve under random removal.
    pub random_level: f64,
    pub ause: f64,
    pub aurg: f64,
}

/// `steps` equally spaced removal fractions in `[0, max_fraction]`.
pub fn fraction_grid(steps: usize, max_fraction: f64) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(invalid("need at least two fraction steps"));
    }
    if !(0.0..1.0).contains(&max_fraction) {
        return Err(invalid("max fraction must lie in [0, 1)"));
    }
    Ok((0..steps).map(|i| max_fraction * i as f64 / (steps - 1) as f64).collect())
}

pub fn default_fractions() -> Vec<f64> {
    fraction_grid(DEFAULT_FRACTION_STEPS, DEFAULT_MAX_FRACTION).expect("valid defaults")
}

pub fn sparsification_curves(pair: &EvalPair, metric: Metric, fractions: &[f64]) -> Result<SparsificationResult> {
    if fractions.len() < 2 {
        return Err(invalid("need at least two fraction steps"));
    }
    if fractions.iter().any(|f| !(0.0..1.0).contains(f)) || fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("fractions must increase strictly within [0, 1)"));
    }
    let idx = pair.valid_indices();
    check_depth(pair, &idx)?;
    if idx.iter().any(|&i| !pair.uncertainty[i].is_finite()) {
        return Err(invalid("uncertainty must be finite on valid pixels"));
    }
    let errors: Vec<f64> = idx
        .iter()
        .map(|&i| metric.pixel_error(pair.prediction[i], pair.ground_truth[i]))
        .collect();
    let scores: Vec<f64> = idx.iter().map(|&i| pair.uncertainty[i]).collect();

    let uncertainty_curve = removal_curve(metric, &errors, &scores, fractions);
    let oracle_curve = removal_curve(metric, &errors, &errors, fractions);
    let random_level = metric.aggregate(errors.iter().sum(), errors.len());

    let gap: Vec<f64> = uncertainty_curve.iter().zip(&oracle_curve).map(|(u, o)| u - o).collect();
    let gain: Vec<f64> = uncertainty_curve.iter().map(|u| random_level - u).collect();
    Ok(SparsificationResult {
        metric,
        fractions: fractions.to_vec(),
        ause: trapezoid(fractions, &gap),
        aurg: trapezoid(fractions, &gain),
        uncertainty_curve,
        oracle_curve,
        random_level,
    })
}

/// Error of the pixels left after removing the top `fraction` by `score`.
fn removal_curve(metric: Metric, errors: &[f64], score: &[f64], fractions: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    // stable sort keeps raster order among equal scores
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]));
    let total = errors.len();
    // suffix sums over the removal order: kept[k] = sum of errors from k on
    let mut kept = vec![0.0; total + 1];
    for k in (0..total).rev() {
        kept[k] = kept[k + 1] + errors[order[k]];
    }
    fractions
        .iter()
        .map(|f| {
            let removed = ((f * total as f64).floor() as usize).min(total - 1);
            metric.aggregate(kept[removed], total - removed)
        })
        .collect()
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

/// Per-pixel sample standard deviation with divisor `S - 1`.
pub fn per_pixel_uncertainty_from_samples(bundle: &SampleBundle) -> Result<GridMap> {
    let s = bundle.count();
    if s < 2 {
        return Err(invalid("need at least two samples for a standard deviation"));
    }
    let mean = bundle.mean();
    let mut acc = vec![0.0; mean.len()];
    for sample in bundle.iter() {
        for ((a, v), m) in acc.iter_mut().zip(sample).zip(&mean) {
            *a += (v - m).powi(2);
        }
    }
    GridMap::new(bundle.shape(), acc.into_iter().map(|a| (a / (s - 1) as f64).sqrt()).collect())
}

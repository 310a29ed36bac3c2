//! Synthetic sample bundles standing in for ensemble predictions.

use crate::distribution::StructuredGaussian;
use crate::error::{invalid, Result};
use crate::grid::{CholeskyMaps, GridShape, Parameterization, SampleBundle, SparsityPattern};
use crate::rng::NormalStream;

/// Random-model generator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelSpec {
    /// Upper bound on the summed magnitude of the off-diagonal entries in
    /// any row of `L`, relative to one.
    pub off_scale: f64,
    /// Log-diagonal values are drawn from `[-phi_spread, phi_spread]`.
    pub phi_spread: f64,
    pub scaled: bool,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self { off_scale: 0.5, phi_spread: 0.3, scaled: false }
    }
}

/// A random structured Gaussian with a well-conditioned factor.
///
/// Each off-diagonal entry is bounded by `off_scale / L`, so `L` stays
/// diagonally dominant and the implied covariance well conditioned.
pub fn random_model(shape: GridShape, pattern: &SparsityPattern, spec: RandomModelSpec, seed: u64) -> StructuredGaussian {
    let mut rng = NormalStream::new(seed);
    let n = shape.len();
    let l = pattern.len();
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    let mean: Vec<f64> = (0..n).map(|_| u(-1.0, 1.0)).collect();
    let phi: Vec<f64> = (0..n).map(|_| u(-spec.phi_spread, spec.phi_spread)).collect();
    let bound = spec.off_scale / l as f64;
    let (psi, param) = if spec.scaled {
        let psi = (0..l * n).map(|_| u(-1.5, 1.5)).collect();
        let a = u(-0.2, 0.2);
        let b = u(-3.0, -1.0);
        let c = (0..l).map(|_| bound * u(0.5, 1.0)).collect();
        (psi, Parameterization::Scaled { a, b, c })
    } else {
        ((0..l * n).map(|_| u(-bound, bound)).collect(), Parameterization::Plain)
    };
    let chol = CholeskyMaps::new(shape, pattern.clone(), phi, psi, param).expect("random parameters are finite");
    StructuredGaussian::new(mean, chol).expect("random mean is finite")
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    /// Exact draws from a known model.
    GroundTruth(StructuredGaussian),
    /// Sums of Gaussian bumps with random centres and weights, plus a small
    /// white-noise floor of `0.05 * amplitude`.
    SmoothField { length_scale: f64, amplitude: f64 },
    /// Independent pixels with the given mean and standard deviation maps.
    DiagonalNoise { mean: Vec<f64>, std: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub shape: GridShape,
    pub count: usize,
    pub seed: u64,
}

/// Relative strength of the white-noise floor in smooth fields.
pub const SMOOTH_FIELD_NUGGET: f64 = 0.05;

/// Generates the bundle and, when one exists, the model it was drawn from.
pub fn generate(spec: &SynthSpec) -> Result<(SampleBundle, Option<StructuredGaussian>)> {
    if spec.count == 0 {
        return Err(invalid("synthetic bundle needs at least one sample"));
    }
    let n = spec.shape.len();
    match &spec.kind {
        SynthKind::GroundTruth(g) => {
            if g.shape() != spec.shape {
                return Err(invalid("ground-truth model shape does not match the spec"));
            }
            Ok((g.sample_exact(spec.count, spec.seed)?, Some(g.clone())))
        }
        SynthKind::SmoothField { length_scale, amplitude } => {
            if !(*length_scale > 0.0) || !(*amplitude > 0.0) {
                return Err(invalid("smooth field needs positive length scale and amplitude"));
            }
            Ok((smooth_field(spec, *length_scale, *amplitude), None))
        }
        SynthKind::DiagonalNoise { mean, std } => {
            spec.shape.check_len(mean.len(), "mean map")?;
            spec.shape.check_len(std.len(), "std map")?;
            if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
                return Err(invalid("diagonal noise needs finite mean and non-negative std"));
            }
            let mut rng = NormalStream::new(spec.seed);
            let mut values = Vec::with_capacity(spec.count * n);
            for _ in 0..spec.count {
                for p in 0..n {
                    values.push(mean[p] + std[p] * rng.next_normal());
                }
            }
            let model = if std.iter().all(|&s| s > 0.0) {
                let pattern = SparsityPattern::canonical(1)?;
                let phi = std.iter().map(|s| -s.ln()).collect();
                let chol = CholeskyMaps::new(spec.shape, pattern.clone(), phi, vec![0.0; pattern.len() * n], Parameterization::Plain)?;
                Some(StructuredGaussian::new(mean.clone(), chol)?)
            } else {
                None
            };
            Ok((SampleBundle::new(spec.shape, spec.count, values)?, model))
        }
    }
}

fn smooth_field(spec: &SynthSpec, ell: f64, amplitude: f64) -> SampleBundle {
    let (h, w) = (spec.shape.height() as f64, spec.shape.width() as f64);
    // centres may fall within one length scale outside the grid
    let (y0, y1) = (-ell, h - 1.0 + ell);
    let (x0, x1) = (-ell, w - 1.0 + ell);
    let bumps = (((y1 - y0) * (x1 - x0)) / (ell * ell)).ceil().max(4.0) as usize;
    let weight = amplitude / (bumps as f64 * std::f64::consts::PI * ell * ell / ((y1 - y0) * (x1 - x0))).sqrt();
    let mut rng = NormalStream::new(spec.seed);
    let n = spec.shape.len();
    let mut values = vec![0.0; spec.count * n];
    for sample in values.chunks_mut(n) {
        for _ in 0..bumps {
            let cy = y0 + (y1 - y0) * rng.uniform();
            let cx = x0 + (x1 - x0) * rng.uniform();
            let a = weight * rng.next_normal();
            for (p, v) in sample.iter_mut().enumerate() {
                let (y, x) = spec.shape.coords(p);
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                *v += a * (-0.5 * d2 / (ell * ell)).exp();
            }
        }
        for v in sample.iter_mut() {
            *v += SMOOTH_FIELD_NUGGET * amplitude * rng.next_normal();
        }
    }
    SampleBundle::new(spec.shape, spec.count, values).expect("finite values")
}

/// Mean over samples of the lag-1 correlation between horizontally and
/// vertically adjacent pixels.
pub fn lag_one_autocorrelation(bundle: &SampleBundle) -> f64 {
    let shape = bundle.shape();
    let mean = bundle.mean();
    let n = shape.len();
    let mut var = 0.0;
    let mut cross = 0.0;
    let mut pairs = 0usize;
    for s in bundle.iter() {
        let r: Vec<f64> = s.iter().zip(&mean).map(|(a, b)| a - b).collect();
        var += r.iter().map(|v| v * v).sum::<f64>();
        for y in 0..shape.height() {
            for x in 0..shape.width() {
                let p = shape.index(y, x);
                if x + 1 < shape.width() {
                    cross += r[p] * r[p + 1];
                    pairs += 1;
                }
                if y + 1 < shape.height() {
                    cross += r[p] * r[p + shape.width()];
                    pairs += 1;
                }
            }
        }
    }
    let var = var / (bundle.count() * n) as f64;
    let cross = cross / pairs as f64;
    if var == 0.0 {
        0.0
    } else {
        cross / var
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_the_mean() {
        let shape = GridShape::new(2, 2).unwrap();
        let mean = vec![1.0, 2.0, 3.0, 4.0];
        let spec = SynthSpec {
            kind: SynthKind::DiagonalNoise { mean: mean.clone(), std: vec![0.0; 4] },
            shape,
            count: 3,
            seed: 1,
        };
        let (b, model) = generate(&spec).unwrap();
        assert!(model.is_none());
        for s in b.iter() {
            assert_eq!(s, mean.as_slice());
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let shape = GridShape::new(5, 6).unwrap();
        let spec = SynthSpec { kind: SynthKind::SmoothField { length_scale: 2.0, amplitude: 1.0 }, shape, count: 4, seed: 9 };
        assert_eq!(generate(&spec).unwrap().0, generate(&spec).unwrap().0);
        let other = SynthSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn smooth_fields_are_correlated() {
        let shape = GridShape::new(12, 12).unwrap();
        let spec = SynthSpec { kind: SynthKind::SmoothField { length_scale: 2.0, amplitude: 1.0 }, shape, count: 200, seed: 3 };
        let (b, _) = generate(&spec).unwrap();
        let rho = lag_one_autocorrelation(&b);
        assert!(rho > 0.2, "lag-1 correlation {rho}");

        let white = SynthSpec {
            kind: SynthKind::DiagonalNoise { mean: vec![0.0; 144], std: vec![1.0; 144] },
            ..spec
        };
        let rho = lag_one_autocorrelation(&generate(&white).unwrap().0);
        assert!(rho.abs() < 0.05, "white-noise correlation {rho}");
    }

    #[test]
    fn invalid_specs() {
        let shape = GridShape::new(2, 2).unwrap();
        let base = SynthSpec { kind: SynthKind::SmoothField { length_scale: 0.0, amplitude: 1.0 }, shape, count: 1, seed: 0 };
        assert!(generate(&base).is_err());
        assert!(generate(&SynthSpec { count: 0, ..base.clone() }).is_err());
        let neg = SynthSpec { kind: SynthKind::DiagonalNoise { mean: vec![0.0; 4], std: vec![-1.0; 4] }, ..base };
        assert!(generate(&neg).is_err());
    }

    #[test]
    fn random_models_are_dominant() {
        let shape = GridShape::new(6, 6).unwrap();
        for scaled in [false, true] {
            let pattern = SparsityPattern::canonical(2).unwrap();
            let g = random_model(shape, &pattern, RandomModelSpec { scaled, ..Default::default() }, 4);
            let maps = g.chol();
            let n = shape.len();
            for p in 0..n {
                let s: f64 = (0..pattern.len()).map(|l| maps.effective_off_diagonal()[l * n + p].abs()).sum();
                assert!(s < maps.effective_diagonal()[p]);
            }
        }
    }
}

//! Maximum-likelihood fitting of a structured Gaussian to a sample bundle.
//!
//! The negative log-likelihood of a bundle `{d_s}` is
//!
//! ```text
//! NLL = sum_s [ N/2 ln 2pi - sum_n ln L_nn + 1/2 |L^T (d_s - mu)|^2 ]
//! ```
//!
//! With `r_s = d_s - mu` and `w_s = L^T r_s`, the gradient with respect to
//! a stored entry `L_nk` is `sum_s r_s[n] w_s[k]`, less `S / L_nn` on the
//! diagonal, and `dNLL/dmu = -L sum_s w_s`. These are chained through the
//! chosen [`Parameterization`].
//!
//! The optimiser minimises `NLL + (S eps / 2) |L|_F^2`, the expected NLL
//! of the bundle jittered with `N(0, eps I)` noise. It keeps every pixel
//! variance at or above `eps`, so bundles with zero spread still have a
//! finite optimum. Reported NLL values never include this term.

use serde::{Deserialize, Serialize};

use crate::distribution::{StructuredGaussian, HALF_LN_2PI};
use crate::error::{invalid, Error, Result};
use crate::grid::{CholeskyMaps, GridShape, Parameterization, SampleBundle, SparsityPattern};
use crate::linops;
use crate::par;
use crate::rng::NormalStream;

/// Magnitude of the initial off-diagonal entries, `exp(-4)`.
pub const SMALL_OFF_DIAGONAL: f64 = 0.018_315_638_888_734_18;

/// Initial value of the additive diagonal term `b` under scaling.
pub const INITIAL_DIAGONAL_OFFSET: f64 = -6.0;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Identity,
    SmallOffdiag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    /// Relative objective change treated as converged.
    pub convergence_tol: f64,
    pub init: Init,
    pub scaled_parameterization: bool,
    pub fit_mean: bool,
    pub diagonal_only: bool,
    /// Lower bound `eps` on the implied per-pixel variance; `None` disables it.
    pub variance_floor: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            learning_rate: 1e-2,
            convergence_tol: 1e-9,
            init: Init::SmallOffdiag,
            scaled_parameterization: false,
            fit_mean: true,
            diagonal_only: false,
            variance_floor: Some(1e-6),
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.convergence_tol > 0.0) {
            return Err(invalid("learning rate and tolerance must be positive"));
        }
        if let Some(eps) = self.variance_floor {
            if !(eps > 0.0) {
                return Err(invalid("variance floor must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    /// NLL of the returned model; equal to the last trace entry.
    pub final_nll: f64,
    /// NLL at every evaluated iterate, followed by the returned model's NLL.
    #[serde(rename = "trace")]
    pub nll_trace: Vec<f64>,
    #[serde(rename = "iterations")]
    pub iterations_used: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Gradients of the NLL with respect to the raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NllGradients {
    pub mean: Vec<f64>,
    pub log_diag: Vec<f64>,
    pub off_diag: Vec<f64>,
    /// `(a, b, c)`, present under the scaled parameterization.
    pub scaling: Option<(f64, f64, Vec<f64>)>,
}

pub fn nll(g: &StructuredGaussian, bundle: &SampleBundle) -> Result<f64> {
    Ok(-g.log_density_bundle(bundle)?)
}

pub fn nll_gradients(g: &StructuredGaussian, bundle: &SampleBundle) -> Result<NllGradients> {
    let (_, grads) = objective(g, bundle, None)?;
    Ok(grads)
}

/// Objective (NLL plus optional floor term) and its gradient.
fn objective(g: &StructuredGaussian, bundle: &SampleBundle, floor: Option<f64>) -> Result<(f64, NllGradients)> {
    if bundle.shape() != g.shape() {
        return Err(invalid("bundle shape does not match the model"));
    }
    let maps = g.chol();
    let shape = g.shape();
    let n = shape.len();
    let count = bundle.count();
    let s = count as f64;
    let diag = maps.effective_diagonal();
    let off = maps.effective_off_diagonal();
    let offsets = maps.pattern().offsets();

    let r: Vec<f64> = bundle
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v - g.mean()[i % n])
        .collect();
    let w = linops::apply_lt(maps, &r);

    let quad: f64 = w.iter().map(|v| v * v).sum();
    let mut obj = s * (n as f64 * HALF_LN_2PI - maps.log_effective_diagonal().iter().sum::<f64>()) + 0.5 * quad;

    let mut gd: Vec<f64> = diag.iter().map(|d| -s / d).collect();
    let mut wsum = vec![0.0; n];
    for k in 0..count {
        let rs = &r[k * n..(k + 1) * n];
        let ws = &w[k * n..(k + 1) * n];
        for p in 0..n {
            gd[p] += rs[p] * ws[p];
            wsum[p] += ws[p];
        }
    }
    // one map per task, samples summed in order
    let mut ge = vec![0.0; off.len()];
    par::for_each_chunk(&mut ge, n, |l, gl| {
        let o = offsets[l];
        for k in 0..count {
            let rs = &r[k * n..(k + 1) * n];
            let ws = &w[k * n..(k + 1) * n];
            for (p, g) in gl.iter_mut().enumerate() {
                let (y, x) = shape.coords(p);
                if let Some(q) = shape.neighbor(y, x, o) {
                    *g += rs[p] * ws[q];
                }
            }
        }
    });
    let mean: Vec<f64> = linops::apply_l(maps, &wsum).into_iter().map(|v| -v).collect();

    if let Some(eps) = floor {
        let frob: f64 = diag.iter().chain(off).map(|v| v * v).sum();
        obj += 0.5 * s * eps * frob;
        gd.iter_mut().zip(diag).for_each(|(gv, d)| *gv += s * eps * d);
        ge.iter_mut().zip(off).for_each(|(gv, e)| *gv += s * eps * e);
    }

    Ok((obj, chain(maps, mean, gd, ge)))
}

/// Maps entry gradients onto raw parameters.
fn chain(maps: &CholeskyMaps, mean: Vec<f64>, gd: Vec<f64>, ge: Vec<f64>) -> NllGradients {
    let n = maps.shape().len();
    let phi = maps.log_diag();
    let psi = maps.off_diag();
    match maps.parameterization() {
        Parameterization::Plain => NllGradients {
            mean,
            log_diag: gd.iter().zip(maps.effective_diagonal()).map(|(g, d)| g * d).collect(),
            off_diag: ge,
            scaling: None,
        },
        Parameterization::Scaled { a, b, c } => {
            let mut ga = 0.0;
            let mut gb = 0.0;
            let log_diag: Vec<f64> = gd
                .iter()
                .zip(phi)
                .map(|(g, p)| {
                    let scaled = (p + a).exp();
                    ga += g * scaled;
                    gb += g * b.exp();
                    g * scaled
                })
                .collect();
            let mut gc = vec![0.0; c.len()];
            let off_diag = ge
                .iter()
                .zip(psi)
                .enumerate()
                .map(|(i, (g, p))| {
                    let l = i / n;
                    let t = p.tanh();
                    gc[l] += g * t;
                    g * c[l] * (1.0 - t * t)
                })
                .collect();
            NllGradients { mean, log_diag, off_diag, scaling: Some((ga, gb, gc)) }
        }
    }
}

/// Flat parameter vector `[mean | log_diag | off_diag | a, b | c]`.
struct Layout {
    shape: GridShape,
    pattern: SparsityPattern,
    scaled: bool,
}

impl Layout {
    fn n(&self) -> usize {
        self.shape.len()
    }

    fn off_len(&self) -> usize {
        self.pattern.len() * self.n()
    }

    fn len(&self) -> usize {
        2 * self.n() + self.off_len() + if self.scaled { 2 + self.pattern.len() } else { 0 }
    }

    fn build(&self, theta: &[f64]) -> Result<StructuredGaussian> {
        let n = self.n();
        let e = 2 * n + self.off_len();
        let param = if self.scaled {
            Parameterization::Scaled { a: theta[e], b: theta[e + 1], c: theta[e + 2..].to_vec() }
        } else {
            Parameterization::Plain
        };
        let chol = CholeskyMaps::new(
            self.shape,
            self.pattern.clone(),
            theta[n..2 * n].to_vec(),
            theta[2 * n..e].to_vec(),
            param,
        )?;
        StructuredGaussian::new(theta[..n].to_vec(), chol)
    }

    fn flatten(&self, g: &NllGradients) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&g.mean);
        v.extend_from_slice(&g.log_diag);
        v.extend_from_slice(&g.off_diag);
        if let Some((a, b, c)) = &g.scaling {
            v.push(*a);
            v.push(*b);
            v.extend_from_slice(c);
        }
        v
    }

    /// 1 for trainable entries, 0 for frozen ones.
    fn trainable(&self, cfg: &FitConfig) -> Vec<f64> {
        let n = self.n();
        let mut m = vec![1.0; self.len()];
        if !cfg.fit_mean {
            m[..n].iter_mut().for_each(|v| *v = 0.0);
        }
        if cfg.diagonal_only {
            m[2 * n..2 * n + self.off_len()].iter_mut().for_each(|v| *v = 0.0);
            if self.scaled {
                m[2 * n + self.off_len() + 2..].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        m
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Cosine decay from `lr` to `lr / 1000` over the iteration budget.
fn learning_rate(cfg: &FitConfig, t: usize) -> f64 {
    let progress = t as f64 / cfg.max_iterations.max(2) as f64;
    let floor = cfg.learning_rate * 1e-3;
    floor + 0.5 * (cfg.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

const PATIENCE: usize = 10;

/// Fits mean and Cholesky maps to `bundle` by adaptive-moment descent and
/// returns the iterate with the lowest objective.
pub fn fit(
    bundle: &SampleBundle,
    pattern: &SparsityPattern,
    config: &FitConfig,
    seed: u64,
) -> Result<(StructuredGaussian, FitReport)> {
    config.validate()?;
    if bundle.count() < 2 && config.variance_floor.is_none() {
        return Err(invalid("fitting needs at least two samples unless a variance floor is set"));
    }
    let layout = Layout { shape: bundle.shape(), pattern: pattern.clone(), scaled: config.scaled_parameterization };
    let n = layout.n();
    let mut theta = vec![0.0; layout.len()];
    theta[..n].copy_from_slice(&bundle.mean());
    if config.init == Init::SmallOffdiag && !config.diagonal_only {
        let mut rng = NormalStream::new(seed);
        for v in &mut theta[2 * n..2 * n + layout.off_len()] {
            *v = SMALL_OFF_DIAGONAL * (2.0 * rng.uniform() - 1.0);
        }
    }
    if layout.scaled {
        let e = 2 * n + layout.off_len();
        theta[e] = 0.0;
        theta[e + 1] = INITIAL_DIAGONAL_OFFSET;
        theta[e + 2..].iter_mut().for_each(|c| *c = 1.0);
    }
    let mask = layout.trainable(config);

    let mut adam = Adam::new(theta.len());
    let mut trace = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut prev_obj = f64::NAN;
    let mut calm = 0;
    let mut converged = false;
    let mut used = 0;

    for t in 0..config.max_iterations {
        let evaluated = layout.build(&theta).and_then(|g| {
            let (obj, grads) = objective(&g, bundle, config.variance_floor)?;
            Ok((nll(&g, bundle)?, obj, grads))
        });
        let (value, obj, grads) = match evaluated {
            Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
            _ => return Err(Error::FitDiverged { iteration: t, trace }),
        };
        trace.push(value);
        used = t + 1;
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, theta.clone()));
        }
        if (obj - prev_obj).abs() <= config.convergence_tol * obj.abs().max(1.0) {
            calm += 1;
            if calm >= PATIENCE {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
        prev_obj = obj;

        let mut grad = layout.flatten(&grads);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitDiverged { iteration: t, trace });
        }
        grad.iter_mut().zip(&mask).for_each(|(g, m)| *g *= m);
        adam.step(&mut theta, &grad, learning_rate(config, t));
    }

    let (_, theta) = best.expect("at least one iteration");
    let model = layout.build(&theta)?;
    let (_, grads) = objective(&model, bundle, config.variance_floor)?;
    let gradient_norm = layout
        .flatten(&grads)
        .iter()
        .zip(&mask)
        .map(|(g, m)| (g * m).powi(2))
        .sum::<f64>()
        .sqrt();
    let final_nll = nll(&model, bundle)?;
    trace.push(final_nll);
    Ok((
        model,
        FitReport {
            schema_version: REPORT_SCHEMA_VERSION,
            final_nll,
            nll_trace: trace,
            iterations_used: used,
            gradient_norm,
            converged,
        },
    ))
}

#![allow(dead_code)]

use gridgauss::grid::{GridShape, SampleBundle, SparsityPattern};
use gridgauss::rng::NormalStream;
use gridgauss::synth::{random_model, RandomModelSpec};
use gridgauss::StructuredGaussian;
use nalgebra::DMatrix;

pub fn shape(h: usize, w: usize) -> GridShape {
    GridShape::new(h, w).unwrap()
}

pub fn model(h: usize, w: usize, radius: usize, scaled: bool, seed: u64) -> StructuredGaussian {
    let pattern = SparsityPattern::canonical(radius).unwrap();
    random_model(shape(h, w), &pattern, RandomModelSpec { scaled, ..Default::default() }, seed)
}

/// Stronger correlations for Monte Carlo checks.
pub fn correlated_model(h: usize, w: usize, seed: u64) -> StructuredGaussian {
    let pattern = SparsityPattern::canonical(1).unwrap();
    random_model(shape(h, w), &pattern, RandomModelSpec { off_scale: 0.8, ..Default::default() }, seed)
}

pub fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut s = NormalStream::new(seed);
    (0..n).map(|_| s.next_normal()).collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    gridgauss::crosscheck::rel_err(a, b)
}

/// Sample mean and covariance (divisor S) of a bundle restricted to `idx`.
pub fn moments(bundle: &SampleBundle, idx: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let s = bundle.count() as f64;
    let k = idx.len();
    let mut mean = vec![0.0; k];
    for x in bundle.iter() {
        for (m, &i) in mean.iter_mut().zip(idx) {
            *m += x[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= s);
    let mut cov = DMatrix::zeros(k, k);
    for x in bundle.iter() {
        let r: Vec<f64> = idx.iter().zip(&mean).map(|(&i, m)| x[i] - m).collect();
        for a in 0..k {
            for b in a..k {
                cov[(a, b)] += r[a] * r[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            cov[(a, b)] /= s;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

/// Largest |empirical - expected| in units of the Gaussian standard error.
/// Mean SE is sqrt(Σ_ii / S); covariance SE is sqrt((Σ_ii Σ_jj + Σ_ij^2) / S).
pub fn worst_z_scores(emp_mean: &[f64], emp_cov: &DMatrix<f64>, mean: &[f64], cov: &DMatrix<f64>, s: usize) -> (f64, f64) {
    let s = s as f64;
    let k = mean.len();
    let mut zm: f64 = 0.0;
    let mut zc: f64 = 0.0;
    for i in 0..k {
        zm = zm.max((emp_mean[i] - mean[i]).abs() / (cov[(i, i)] / s).sqrt());
        for j in 0..k {
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / s).sqrt();
            zc = zc.max((emp_cov[(i, j)] - cov[(i, j)]).abs() / se);
        }
    }
    (zm, zc)
}

/// Mean, log-diagonal, off-diagonal and parameterization of a model.
type Params = (Vec<f64>, Vec<f64>, Vec<f64>, gridgauss::grid::Parameterization);

/// Largest per-block relative error between analytic NLL gradients and
/// central differences with step `h`, over every raw parameter.
pub fn gradient_check(g: &StructuredGaussian, bundle: &SampleBundle, h: f64) -> f64 {
    use gridgauss::fitting::{nll, nll_gradients};
    use gridgauss::grid::{CholeskyMaps, Parameterization};

    let analytic = nll_gradients(g, bundle).unwrap();
    let maps = g.chol();
    let rebuild = |mean: Vec<f64>, phi: Vec<f64>, psi: Vec<f64>, param: Parameterization| {
        let chol = CholeskyMaps::new(maps.shape(), maps.pattern().clone(), phi, psi, param).unwrap();
        nll(&StructuredGaussian::new(mean, chol).unwrap(), bundle).unwrap()
    };
    let base = || (g.mean().to_vec(), maps.log_diag().to_vec(), maps.off_diag().to_vec(), maps.parameterization().clone());
    let central = |bump: &dyn Fn(&mut Params, f64)| {
        let mut up = base();
        let mut dn = base();
        bump(&mut up, h);
        bump(&mut dn, -h);
        (rebuild(up.0, up.1, up.2, up.3) - rebuild(dn.0, dn.1, dn.2, dn.3)) / (2.0 * h)
    };
    let block = |a: &[f64], fd: &[f64]| {
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        a.iter().zip(fd).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    };

    let n = g.shape().len();
    let fd_mean: Vec<f64> = (0..n).map(|i| central(&|p, d| p.0[i] += d)).collect();
    let fd_phi: Vec<f64> = (0..n).map(|i| central(&|p, d| p.1[i] += d)).collect();
    let fd_psi: Vec<f64> = (0..maps.off_diag().len()).map(|i| central(&|p, d| p.2[i] += d)).collect();
    let mut worst = block(&analytic.mean, &fd_mean)
        .max(block(&analytic.log_diag, &fd_phi))
        .max(block(&analytic.off_diag, &fd_psi));

    if let Some((ga, gb, gc)) = &analytic.scaling {
        let bump_scale = |which: usize| {
            move |p: &mut Params, d: f64| {
                if let Parameterization::Scaled { a, b, c } = &mut p.3 {
                    match which {
                        0 => *a += d,
                        1 => *b += d,
                        k => c[k - 2] += d,
                    }
                }
            }
        };
        let fd_a = central(&bump_scale(0));
        let fd_b = central(&bump_scale(1));
        let fd_c: Vec<f64> = (0..gc.len()).map(|k| central(&bump_scale(k + 2))).collect();
        worst = worst.max(block(&[*ga, *gb], &[fd_a, fd_b])).max(block(gc, &fd_c));
    }
    worst
}

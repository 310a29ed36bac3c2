//! Matrix-free products with `L`, `L^T` and `Λ = L L^T`, exact triangular
//! solves, and the truncated Jacobi solver for `L^T S = E`.
//!
//! All entry points take a batch: a slice holding `k` raster-ordered maps
//! back to back. Each output row is produced independently so the
//! parallel and sequential builds agree bit for bit.

use crate::error::{invalid, Error, Result};
use crate::grid::{CholeskyMaps, SampleBundle};
use crate::par;

/// Number of Jacobi iterations used when none is specified.
pub const DEFAULT_JACOBI_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    L,
    LTranspose,
    Lambda,
}

/// One of the three structured matrices, borrowed from its maps.
#[derive(Debug, Clone, Copy)]
pub struct LinearOperatorView<'a> {
    maps: &'a CholeskyMaps,
    direction: Direction,
}

impl<'a> LinearOperatorView<'a> {
    pub fn new(maps: &'a CholeskyMaps, direction: Direction) -> Self {
        Self { maps, direction }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn maps(&self) -> &'a CholeskyMaps {
        self.maps
    }

    /// Matrix-vector product on every map in `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_batch(self.maps, x)?;
        Ok(match self.direction {
            Direction::L => apply_l(self.maps, x),
            Direction::LTranspose => apply_lt(self.maps, x),
            Direction::Lambda => apply_l(self.maps, &apply_lt(self.maps, x)),
        })
    }

    /// Exact forward (`L`) or backward (`L^T`) substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_batch(self.maps, b)?;
        if let Some(d) = self.maps.effective_diagonal().iter().find(|&&d| !(d > 0.0)) {
            return Err(Error::NumericalDomain(format!("non-positive diagonal entry {d}")));
        }
        let n = self.maps.shape().len();
        let mut out = b.to_vec();
        match self.direction {
            Direction::L => par::for_each_chunk(&mut out, n, |_, x| forward_substitute(self.maps, x)),
            Direction::LTranspose => {
                par::for_each_chunk(&mut out, n, |_, x| backward_substitute(self.maps, x))
            }
            Direction::Lambda => {
                return Err(invalid("triangular solve needs direction L or L^T"));
            }
        }
        Ok(out)
    }
}

fn check_batch(maps: &CholeskyMaps, x: &[f64]) -> Result<()> {
    let n = maps.shape().len();
    if x.is_empty() || !x.len().is_multiple_of(n) {
        return Err(invalid(format!(
            "input of length {} is not a whole number of {}-pixel maps",
            x.len(),
            n
        )));
    }
    Ok(())
}

/// `(L x)[n] = d[n] x[n] + sum_l off[l][n] x[n + o_l]`.
pub fn apply_l(maps: &CholeskyMaps, x: &[f64]) -> Vec<f64> {
    let shape = maps.shape();
    let (n, w) = (shape.len(), shape.width());
    let diag = maps.effective_diagonal();
    let off = maps.effective_off_diagonal();
    let offsets = maps.pattern().offsets();
    let mut out = vec![0.0; x.len()];
    par::for_each_chunk(&mut out, w, |chunk, row| {
        let s = chunk * w / n;
        let y = (chunk * w % n) / w;
        let xs = &x[s * n..(s + 1) * n];
        for (cx, o) in row.iter_mut().enumerate() {
            let p = y * w + cx;
            let mut acc = diag[p] * xs[p];
            for (l, &off_l) in offsets.iter().enumerate() {
                if let Some(q) = shape.neighbor(y, cx, off_l) {
                    acc += off[l * n + p] * xs[q];
                }
            }
            *o = acc;
        }
    });
    out
}

/// `(L^T x)[m] = d[m] x[m] + sum_l off[l][p] x[p]` over `p = m - o_l`.
pub fn apply_lt(maps: &CholeskyMaps, x: &[f64]) -> Vec<f64> {
    let diag = maps.effective_diagonal();
    let n = maps.shape().len();
    transpose_gather(maps, x, |s, m, upper| diag[m] * x[s * n + m] + upper)
}

/// Strictly upper part of `L^T` applied to `x`; each output is passed
/// through `finish(sample, pixel, upper_sum)`.
fn transpose_gather<F>(maps: &CholeskyMaps, x: &[f64], finish: F) -> Vec<f64>
where
    F: Fn(usize, usize, f64) -> f64 + Send + Sync,
{
    let shape = maps.shape();
    let (n, w) = (shape.len(), shape.width());
    let off = maps.effective_off_diagonal();
    let offsets = maps.pattern().offsets();
    let mut out = vec![0.0; x.len()];
    par::for_each_chunk(&mut out, w, |chunk, row| {
        let s = chunk * w / n;
        let y = (chunk * w % n) / w;
        let xs = &x[s * n..(s + 1) * n];
        for (cx, o) in row.iter_mut().enumerate() {
            let m = y * w + cx;
            let mut acc = 0.0;
            for (l, &off_l) in offsets.iter().enumerate() {
                let neg = crate::grid::Offset::new(-off_l.dy, -off_l.dx);
                if let Some(p) = shape.neighbor(y, cx, neg) {
                    acc += off[l * n + p] * xs[p];
                }
            }
            *o = finish(s, m, acc);
        }
    });
    out
}

fn forward_substitute(maps: &CholeskyMaps, x: &mut [f64]) {
    let shape = maps.shape();
    let n = shape.len();
    let diag = maps.effective_diagonal();
    let off = maps.effective_off_diagonal();
    let offsets = maps.pattern().offsets();
    for p in 0..n {
        let (y, cx) = shape.coords(p);
        let mut acc = x[p];
        for (l, &o) in offsets.iter().enumerate() {
            if let Some(q) = shape.neighbor(y, cx, o) {
                acc -= off[l * n + p] * x[q];
            }
        }
        x[p] = acc / diag[p];
    }
}

fn backward_substitute(maps: &CholeskyMaps, x: &mut [f64]) {
    let shape = maps.shape();
    let n = shape.len();
    let diag = maps.effective_diagonal();
    let off = maps.effective_off_diagonal();
    let offsets = maps.pattern().offsets();
    for m in (0..n).rev() {
        let (y, cx) = shape.coords(m);
        let mut acc = x[m];
        for (l, &o) in offsets.iter().enumerate() {
            let neg = crate::grid::Offset::new(-o.dy, -o.dx);
            if let Some(p) = shape.neighbor(y, cx, neg) {
                acc -= off[l * n + p] * x[p];
            }
        }
        x[m] = acc / diag[m];
    }
}

/// Stopping rule for the Jacobi solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiOptions {
    pub iterations: usize,
    /// Stop early once `max |S(j+1) - S(j)|` drops to this value.
    pub step_tolerance: Option<f64>,
}

impl JacobiOptions {
    pub fn fixed(iterations: usize) -> Self {
        Self { iterations, step_tolerance: None }
    }
}

impl Default for JacobiOptions {
    fn default() -> Self {
        Self::fixed(DEFAULT_JACOBI_ITERATIONS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `max |L^T S - E|` at the returned iterate.
    pub residual: f64,
}

/// Approximates `L^{-T} E` for every map in `e` with the iteration
/// `S(j+1) = D^{-1} (E - U S(j))`, `S(0) = E`, where `D` and `U` are the
/// diagonal and strictly upper parts of `L^T`.
///
/// `-D^{-1} U` is strictly upper triangular, so the result is exact once
/// the iteration count reaches the longest dependency chain (at most `N`).
pub fn jacobi_solve_lt(maps: &CholeskyMaps, e: &[f64], opts: JacobiOptions) -> Result<JacobiOutcome> {
    if opts.iterations == 0 {
        return Err(invalid("Jacobi needs at least one iteration"));
    }
    check_batch(maps, e)?;
    let diag = maps.effective_diagonal();
    let n = maps.shape().len();
    let mut s = e.to_vec();
    let mut used = 0;
    for _ in 0..opts.iterations {
        let next = transpose_gather(maps, &s, |k, m, upper| (e[k * n + m] - upper) / diag[m]);
        used += 1;
        let done = opts.step_tolerance.is_some_and(|tol| {
            s.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) <= tol
        });
        s = next;
        if done {
            break;
        }
    }
    let lts = apply_lt(maps, &s);
    let residual = lts.iter().zip(e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(JacobiOutcome { solution: s, iterations: used, residual })
}

/// Bundle form of [`jacobi_solve_lt`].
pub fn jacobi_solve_lt_bundle(
    maps: &CholeskyMaps,
    e: &SampleBundle,
    opts: JacobiOptions,
) -> Result<SampleBundle> {
    if e.shape() != maps.shape() {
        return Err(invalid("bundle shape does not match the operator"));
    }
    let out = jacobi_solve_lt(maps, e.values(), opts)?;
    SampleBundle::new(e.shape(), e.count(), out.solution)
}

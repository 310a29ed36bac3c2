//! Conditioning on known pixel values.
//!
//! The precision `Λ = L L^T` is assembled in compressed sparse row form,
//! keeping only entries where two rows of `L` share a column. Given a
//! joint draw `(a, b)` on known/unknown pixels, the conditional draw is
//! `b - Λ_UU^{-1} Λ_UK (α - a)`, which equals `b + Σ_UK Σ_KK^{-1} (α - a)`.
//! `Λ_UU` systems are solved with conjugate gradients.

use crate::error::{invalid, Error, Result};
use crate::grid::{CholeskyMaps, GridMap, GridShape, SampleBundle};
use crate::distribution::StructuredGaussian;
use crate::linops::JacobiOptions;
use crate::par;

/// Default relative residual for the `Λ_UU` solves.
pub const DEFAULT_CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    shape: GridShape,
    known: Vec<bool>,
}

impl PixelMask {
    pub fn new(shape: GridShape, known: Vec<bool>) -> Result<Self> {
        shape.check_len(known.len(), "mask")?;
        Ok(Self { shape, known })
    }

    pub fn from_indices(shape: GridShape, known: &[usize]) -> Result<Self> {
        let mut m = vec![false; shape.len()];
        for &k in known {
            *m.get_mut(k).ok_or_else(|| invalid(format!("pixel {k} out of range")))? = true;
        }
        Self::new(shape, m)
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn known_indices(&self) -> Vec<usize> {
        (0..self.known.len()).filter(|&i| self.known[i]).collect()
    }

    pub fn unknown_indices(&self) -> Vec<usize> {
        (0..self.known.len()).filter(|&i| !self.known[i]).collect()
    }
}

/// Known values `α`; only entries at known pixels are read.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    mask: PixelMask,
    values: Vec<f64>,
}

impl Conditioning {
    pub fn new(mask: PixelMask, values: Vec<f64>) -> Result<Self> {
        mask.shape().check_len(values.len(), "conditioning values")?;
        if mask.known.iter().zip(&values).any(|(&k, v)| k && !v.is_finite()) {
            return Err(invalid("conditioning values must be finite at known pixels"));
        }
        Ok(Self { mask, values })
    }

    #[inline]
    pub fn mask(&self) -> &PixelMask {
        &self.mask
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut r in rows.iter().cloned() {
            r.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Self { rows: rows.len(), cols, indptr, indices, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Sub-matrix with the given rows and columns, in the given order.
    fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.cols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let rs = rows
            .iter()
            .map(|&i| {
                self.row(i)
                    .filter(|&(j, _)| col_map[j] != usize::MAX)
                    .map(|(j, v)| (col_map[j], v))
                    .collect()
            })
            .collect();
        Self::from_rows(cols.len(), rs)
    }
}

/// `Λ = L L^T` in CSR form.
///
/// Column `k` of `L` holds `d[k]` at row `k` and `off[l][p]` at each row
/// `p` whose neighbour through offset `l` is `k`; every pair of entries in a
/// column contributes one product to `Λ`.
pub fn assemble_precision(maps: &CholeskyMaps) -> CsrMatrix {
    let shape = maps.shape();
    let n = shape.len();
    let diag = maps.effective_diagonal();
    let off = maps.effective_off_diagonal();
    let mut columns: Vec<Vec<(usize, f64)>> = (0..n).map(|k| vec![(k, diag[k])]).collect();
    for p in 0..n {
        let (y, x) = shape.coords(p);
        for (l, &o) in maps.pattern().offsets().iter().enumerate() {
            if let Some(k) = shape.neighbor(y, x, o) {
                columns[k].push((p, off[l * n + p]));
            }
        }
    }
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for col in &columns {
        for &(i, a) in col {
            for &(j, b) in col {
                rows[i].push((j, a * b));
            }
        }
    }
    CsrMatrix::from_rows(n, rows)
}

/// The unknown/unknown and unknown/known blocks of `Λ`.
#[derive(Debug, Clone)]
pub struct PrecisionBlocks {
    pub unknown: Vec<usize>,
    pub known: Vec<usize>,
    pub uu: CsrMatrix,
    pub uk: CsrMatrix,
}

pub fn assemble_precision_blocks(maps: &CholeskyMaps, mask: &PixelMask) -> Result<PrecisionBlocks> {
    if mask.shape() != maps.shape() {
        return Err(invalid("mask shape does not match the model"));
    }
    let unknown = mask.unknown_indices();
    if unknown.is_empty() {
        return Err(Error::Degenerate("every pixel is known; the unknown block is empty".into()));
    }
    let known = mask.known_indices();
    let full = assemble_precision(maps);
    Ok(PrecisionBlocks {
        uu: full.select(&unknown, &unknown),
        uk: full.select(&unknown, &known),
        unknown,
        known,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual `|b - A x| / |b|` at which to stop.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 * rows`.
    pub max_iterations: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tolerance: DEFAULT_CG_TOLERANCE, max_iterations: None }
    }
}

/// Conjugate gradients for symmetric positive definite `a`, starting at 0.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<(Vec<f64>, usize)> {
    let n = a.rows();
    let cap = opts.max_iterations.unwrap_or(10 * n);
    let norm_b = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    for it in 0..cap {
        if rr.sqrt() <= opts.tolerance * norm_b {
            return Ok((x, it));
        }
        let ap = a.matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NumericalDomain(format!(
                "matrix is not positive definite along a search direction (p^T A p = {pap})"
            )));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if rr.sqrt() <= opts.tolerance * norm_b {
        return Ok((x, cap));
    }
    Err(Error::NotConverged { iterations: cap, residual: rr.sqrt() / norm_b })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PrecisionBlocks {
    /// `Λ_UU^{-1} Λ_UK v` for `v` indexed by known pixels.
    pub fn correction(&self, v: &[f64], opts: CgOptions) -> Result<Vec<f64>> {
        let rhs = self.uk.matvec(v);
        conjugate_gradient(&self.uu, &rhs, opts).map(|r| r.0)
    }
}

/// `α` on known pixels and `μ_U - Λ_UU^{-1} Λ_UK (α - μ_K)` on the rest.
///
/// With no known pixels this is `μ`; with no unknown pixels it is `α`.
pub fn conditional_mean(g: &StructuredGaussian, cond: &Conditioning, opts: CgOptions) -> Result<GridMap> {
    check_shapes(g, cond)?;
    let mask = cond.mask();
    let mu = g.mean();
    let known = mask.known_indices();
    let mut out = mu.to_vec();
    for &k in &known {
        out[k] = cond.values()[k];
    }
    if known.is_empty() || known.len() == mu.len() {
        return GridMap::new(g.shape(), out);
    }
    let blocks = assemble_precision_blocks(g.chol(), mask)?;
    let innovation: Vec<f64> = known.iter().map(|&k| cond.values()[k] - mu[k]).collect();
    let corr = blocks.correction(&innovation, opts)?;
    for (&u, c) in blocks.unknown.iter().zip(corr) {
        out[u] = mu[u] - c;
    }
    GridMap::new(g.shape(), out)
}

/// Conditional draws by Matheron's rule on top of [`StructuredGaussian::sample`].
///
/// With no known pixels the result is exactly the unconditional bundle
/// for the same seed.
pub fn conditional_sample(
    g: &StructuredGaussian,
    cond: &Conditioning,
    count: usize,
    seed: u64,
    jacobi: JacobiOptions,
    opts: CgOptions,
) -> Result<SampleBundle> {
    check_shapes(g, cond)?;
    let joint = g.sample(count, seed, jacobi)?;
    let mask = cond.mask();
    let known = mask.known_indices();
    if known.is_empty() {
        return Ok(joint);
    }
    let n = g.shape().len();
    let alpha = cond.values();
    let mut out = joint.into_values();
    if known.len() == n {
        par::for_each_chunk(&mut out, n, |_, s| s.copy_from_slice(alpha));
        return SampleBundle::new(g.shape(), count, out);
    }
    let blocks = assemble_precision_blocks(g.chol(), mask)?;
    let corrections = par::map_range(count, |s| {
        let a = &out[s * n..(s + 1) * n];
        let innovation: Vec<f64> = known.iter().map(|&k| alpha[k] - a[k]).collect();
        blocks.correction(&innovation, opts)
    });
    for (s, corr) in corrections.into_iter().enumerate() {
        let corr = corr?;
        let sample = &mut out[s * n..(s + 1) * n];
        for (&u, c) in blocks.unknown.iter().zip(corr) {
            sample[u] -= c;
        }
        for &k in &known {
            sample[k] = alpha[k];
        }
    }
    SampleBundle::new(g.shape(), count, out)
}

fn check_shapes(g: &StructuredGaussian, cond: &Conditioning) -> Result<()> {
    if cond.mask().shape() != g.shape() {
        return Err(invalid("conditioning shape does not match the model"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Parameterization, SparsityPattern};

    #[test]
    fn identity_blocks() {
        let shape = GridShape::new(3, 3).unwrap();
        let maps = CholeskyMaps::identity(shape, SparsityPattern::canonical(1).unwrap());
        let mask = PixelMask::from_indices(shape, &[0, 4]).unwrap();
        let b = assemble_precision_blocks(&maps, &mask).unwrap();
        assert_eq!(b.uu.rows(), 7);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(b.uu.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!((0..7).all(|i| b.uk.row(i).all(|(_, v)| v == 0.0)));
    }

    #[test]
    fn all_known_is_degenerate() {
        let shape = GridShape::new(1, 2).unwrap();
        let maps = CholeskyMaps::identity(shape, SparsityPattern::canonical(1).unwrap());
        let mask = PixelMask::new(shape, vec![true, true]).unwrap();
        assert!(matches!(assemble_precision_blocks(&maps, &mask), Err(Error::Degenerate(_))));
    }

    #[test]
    fn precision_nonzeros_per_row_radius_one() {
        let shape = GridShape::new(9, 9).unwrap();
        let maps = CholeskyMaps::new(
            shape,
            SparsityPattern::canonical(1).unwrap(),
            vec![0.0; 81],
            vec![0.3; 4 * 81],
            Parameterization::Plain,
        )
        .unwrap();
        let lambda = assemble_precision(&maps);
        let widest = (0..81).map(|i| lambda.row(i).count()).max().unwrap();
        assert_eq!(widest, 13);
        // bandwidth bounded by 2 r W + 2 r
        for i in 0..81 {
            for (j, _) in lambda.row(i) {
                assert!(i.abs_diff(j) <= 2 * 9 + 2);
            }
        }
    }

    #[test]
    fn cg_solves_small_spd() {
        let a = CsrMatrix::from_rows(2, vec![vec![(0, 4.0), (1, 1.0)], vec![(0, 1.0), (1, 3.0)]]);
        let (x, _) = conjugate_gradient(&a, &[1.0, 2.0], CgOptions::default()).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = CsrMatrix::from_rows(
            3,
            vec![vec![(0, 1.0)], vec![(1, 100.0), (2, 1.0)], vec![(1, 1.0), (2, 0.5)]],
        );
        let opts = CgOptions { tolerance: 1e-14, max_iterations: Some(1) };
        assert!(matches!(
            conjugate_gradient(&a, &[1.0, 1.0, 1.0], opts),
            Err(Error::NotConverged { iterations: 1, .. })
        ));
    }

    #[test]
    fn diagonal_precision_ignores_known_values() {
        let shape = GridShape::new(2, 3).unwrap();
        let chol = CholeskyMaps::new(
            shape,
            SparsityPattern::canonical(1).unwrap(),
            vec![0.4; 6],
            vec![0.0; 24],
            Parameterization::Plain,
        )
        .unwrap();
        let mu: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let g = StructuredGaussian::new(mu.clone(), chol).unwrap();
        let mask = PixelMask::from_indices(shape, &[1, 5]).unwrap();
        let cond = Conditioning::new(mask, vec![9.0; 6]).unwrap();
        let m = conditional_mean(&g, &cond, CgOptions::default()).unwrap();
        for (i, (v, u)) in m.values().iter().zip(&mu).enumerate() {
            let expect = if i == 1 || i == 5 { 9.0 } else { *u };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn mask_rejects_out_of_range() {
        let shape = GridShape::new(2, 2).unwrap();
        assert!(PixelMask::from_indices(shape, &[4]).is_err());
        let mask = PixelMask::from_indices(shape, &[0]).unwrap();
        assert!(Conditioning::new(mask, vec![f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }
}

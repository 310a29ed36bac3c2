//! Grid geometry, the Cholesky sparsity pattern and the parameter maps.
//!
//! Pixels are enumerated in row-major raster order, `n = y * width + x`.
//! Row `n` of the Cholesky factor holds the diagonal entry at column `n`
//! plus one entry per pattern offset, at the column of the neighbouring
//! pixel `(y + dy, x + dx)`. Every offset precedes `(0, 0)` in raster
//! order, so the factor is lower triangular. Neighbours that fall
//! outside the grid are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    height: usize,
    width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels `N = height * width`.
    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, n: usize) -> (usize, usize) {
        (n / self.width, n % self.width)
    }

    /// Raster index of `(y + dy, x + dx)`, or `None` when it leaves the grid.
    #[inline]
    pub fn neighbor(&self, y: usize, x: usize, off: Offset) -> Option<usize> {
        let ny = y as isize + off.dy;
        let nx = x as isize + off.dx;
        if ny < 0 || nx < 0 || ny >= self.height as isize || nx >= self.width as isize {
            None
        } else {
            Some(ny as usize * self.width + nx as usize)
        }
    }

    pub(crate) fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.len() {
            return Err(invalid(format!(
                "{what} has {len} values, expected {} for a {}x{} grid",
                self.len(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for GridShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl std::str::FromStr for GridShape {
    type Err = crate::Error;

    /// Parses `HxW`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| invalid(format!("expected HxW, got {s:?}")))?;
        let h = h.trim().parse().map_err(|_| invalid(format!("bad height in {s:?}")))?;
        let w = w.trim().parse().map_err(|_| invalid(format!("bad width in {s:?}")))?;
        GridShape::new(h, w)
    }
}

/// A neighbour displacement `(dy, dx)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offset {
    pub dy: isize,
    pub dx: isize,
}

impl Offset {
    pub const fn new(dy: isize, dx: isize) -> Self {
        Self { dy, dx }
    }

    /// True when the offset strictly precedes `(0, 0)` in raster order.
    pub fn precedes_origin(&self) -> bool {
        self.dy < 0 || (self.dy == 0 && self.dx < 0)
    }
}

/// Lower-triangular neighbour offsets of a `(2r+1) x (2r+1)` window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    radius: usize,
    offsets: Vec<Offset>,
}

impl SparsityPattern {
    /// All window offsets preceding the centre, in row-major scan order.
    ///
    /// Radius 1 gives `[(-1,-1), (-1,0), (-1,1), (0,-1)]`; in general the
    /// pattern has `((2r+1)^2 - 1) / 2` entries.
    pub fn canonical(radius: usize) -> Result<Self> {
        if radius < 1 {
            return Err(invalid("pattern radius must be at least 1"));
        }
        let r = radius as isize;
        let mut offsets = Vec::with_capacity(((2 * radius + 1).pow(2) - 1) / 2);
        for dy in -r..=0 {
            for dx in -r..=r {
                let off = Offset::new(dy, dx);
                if off.precedes_origin() {
                    offsets.push(off);
                }
            }
        }
        Ok(Self { radius, offsets })
    }

    #[inline]
    pub fn radius(&self) -> usize {
        self.radius
    }

    #[inline]
    pub fn offsets(&self) -> &[Offset] {
        &self.offsets
    }

    /// Number of off-diagonal maps `L`.
    #[inline]
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// How raw parameter maps turn into Cholesky entries.
///
/// `Plain` is the identity configuration: diagonal `exp(phi)`, off-diagonal
/// `psi`. `Scaled` uses `exp(phi) * exp(a) + exp(b)` on the diagonal and
/// `tanh(psi) * c[l]` on off-diagonal map `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parameterization {
    Plain,
    Scaled { a: f64, b: f64, c: Vec<f64> },
}

impl Parameterization {
    pub fn is_scaled(&self) -> bool {
        matches!(self, Parameterization::Scaled { .. })
    }

    /// Diagonal entry and its logarithm for a log-diagonal value `phi`.
    #[inline]
    pub fn diagonal(&self, phi: f64) -> (f64, f64) {
        match self {
            Parameterization::Plain => (phi.exp(), phi),
            Parameterization::Scaled { a, b, .. } => {
                let log = log_add_exp(phi + a, *b);
                (log.exp(), log)
            }
        }
    }

    /// Off-diagonal entry for raw value `psi` on map `l`.
    #[inline]
    pub fn off_diagonal(&self, l: usize, psi: f64) -> f64 {
        match self {
            Parameterization::Plain => psi,
            Parameterization::Scaled { c, .. } => psi.tanh() * c[l],
        }
    }
}

#[inline]
pub(crate) fn log_add_exp(x: f64, y: f64) -> f64 {
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Per-pixel parameter maps for the sparse Cholesky factor of the precision.
///
/// The effective entries are evaluated once at construction; the
/// off-diagonal cache already holds zeros for out-of-grid neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyMaps {
    shape: GridShape,
    pattern: SparsityPattern,
    log_diag: Vec<f64>,
    off_diag: Vec<f64>,
    param: Parameterization,
    diag: Vec<f64>,
    log_diag_eff: Vec<f64>,
    off: Vec<f64>,
}

impl CholeskyMaps {
    /// `log_diag` has `N` values, `off_diag` has `L * N` values laid out
    /// map-major (map `l` occupies `off_diag[l*N..(l+1)*N]`).
    pub fn new(
        shape: GridShape,
        pattern: SparsityPattern,
        log_diag: Vec<f64>,
        off_diag: Vec<f64>,
        param: Parameterization,
    ) -> Result<Self> {
        let n = shape.len();
        shape.check_len(log_diag.len(), "log-diagonal map")?;
        if off_diag.len() != pattern.len() * n {
            return Err(invalid(format!(
                "off-diagonal maps have {} values, expected {} ({} maps of {n})",
                off_diag.len(),
                pattern.len() * n,
                pattern.len()
            )));
        }
        if let Parameterization::Scaled { a, b, c } = &param {
            if c.len() != pattern.len() {
                return Err(invalid(format!(
                    "expected {} off-diagonal scales, got {}",
                    pattern.len(),
                    c.len()
                )));
            }
            if !a.is_finite() || !b.is_finite() || c.iter().any(|v| !v.is_finite()) {
                return Err(invalid("scaling parameters must be finite"));
            }
        }
        if log_diag.iter().chain(&off_diag).any(|v| !v.is_finite()) {
            return Err(invalid("parameter maps must be finite"));
        }

        let mut diag = Vec::with_capacity(n);
        let mut log_diag_eff = Vec::with_capacity(n);
        for &phi in &log_diag {
            let (d, ld) = param.diagonal(phi);
            if !(d > 0.0 && d.is_finite()) {
                return Err(crate::Error::NumericalDomain(format!(
                    "effective diagonal {d} is not a positive finite number"
                )));
            }
            diag.push(d);
            log_diag_eff.push(ld);
        }

        let mut off = vec![0.0; off_diag.len()];
        for (l, &o) in pattern.offsets().iter().enumerate() {
            for y in 0..shape.height() {
                for x in 0..shape.width() {
                    let p = shape.index(y, x);
                    if shape.neighbor(y, x, o).is_some() {
                        off[l * n + p] = param.off_diagonal(l, off_diag[l * n + p]);
                    }
                }
            }
        }

        Ok(Self {
            shape,
            pattern,
            log_diag,
            off_diag,
            param,
            diag,
            log_diag_eff,
            off,
        })
    }

    /// `phi = 0`, `psi = 0`, plain parameterization: `L = I`.
    pub fn identity(shape: GridShape, pattern: SparsityPattern) -> Self {
        let n = shape.len();
        let l = pattern.len();
        Self::new(shape, pattern, vec![0.0; n], vec![0.0; l * n], Parameterization::Plain)
            .expect("identity maps are valid")
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    /// Raw log-diagonal map `phi`.
    #[inline]
    pub fn log_diag(&self) -> &[f64] {
        &self.log_diag
    }

    /// Raw off-diagonal maps `psi`, map-major.
    #[inline]
    pub fn off_diag(&self) -> &[f64] {
        &self.off_diag
    }

    #[inline]
    pub fn parameterization(&self) -> &Parameterization {
        &self.param
    }

    /// Diagonal of `L`, strictly positive.
    #[inline]
    pub fn effective_diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Natural log of the diagonal of `L`, evaluated without overflow.
    #[inline]
    pub fn log_effective_diagonal(&self) -> &[f64] {
        &self.log_diag_eff
    }

    /// Off-diagonal entries of `L`, map-major, zero where the neighbour is
    /// outside the grid.
    #[inline]
    pub fn effective_off_diagonal(&self) -> &[f64] {
        &self.off
    }

    /// Rebuilds the maps with a different parameterization, keeping raw maps.
    pub fn with_parameterization(&self, param: Parameterization) -> Result<Self> {
        Self::new(
            self.shape,
            self.pattern.clone(),
            self.log_diag.clone(),
            self.off_diag.clone(),
            param,
        )
    }
}

/// A single real-valued map over the grid, raster ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    shape: GridShape,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(shape: GridShape, values: Vec<f64>) -> Result<Self> {
        shape.check_len(values.len(), "map")?;
        Ok(Self { shape, values })
    }

    pub fn filled(shape: GridShape, v: f64) -> Self {
        Self { shape, values: vec![v; shape.len()] }
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[self.shape.index(y, x)]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// `S` maps sharing one grid shape, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBundle {
    shape: GridShape,
    count: usize,
    values: Vec<f64>,
}

impl SampleBundle {
    pub fn new(shape: GridShape, count: usize, values: Vec<f64>) -> Result<Self> {
        if count == 0 {
            return Err(invalid("a sample bundle needs at least one map"));
        }
        if values.len() != count * shape.len() {
            return Err(invalid(format!(
                "bundle has {} values, expected {count} maps of {}",
                values.len(),
                shape.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("bundle values must be finite"));
        }
        Ok(Self { shape, count, values })
    }

    pub fn from_maps(maps: &[GridMap]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| invalid("no maps given"))?;
        let shape = first.shape();
        let mut values = Vec::with_capacity(maps.len() * shape.len());
        for m in maps {
            if m.shape() != shape {
                return Err(invalid("all maps in a bundle must share a shape"));
            }
            values.extend_from_slice(m.values());
        }
        Self::new(shape, maps.len(), values)
    }

    #[inline]
    pub fn shape(&self) -> GridShape {
        self.shape
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn sample(&self, s: usize) -> &[f64] {
        let n = self.shape.len();
        &self.values[s * n..(s + 1) * n]
    }

    pub fn map(&self, s: usize) -> GridMap {
        GridMap { shape: self.shape, values: self.sample(s).to_vec() }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.shape.len())
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Per-pixel mean over samples.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.shape.len()];
        for s in self.iter() {
            for (a, v) in m.iter_mut().zip(s) {
                *a += v;
            }
        }
        let k = self.count as f64;
        m.iter_mut().for_each(|a| *a /= k);
        m
    }
}

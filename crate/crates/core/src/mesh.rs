//! Uniform tensor grids in one and two dimensions and the two discrete
//! function spaces built on them: cell averages ([`CellField`]) and
//! continuous vertex-based multilinear functions ([`VertexField`]).
//!
//! Cells and vertices are numbered with the first axis running fastest.
//! Multi-component values are stored component-major: component `k` of
//! a field with `n` entries per component occupies `values[k*n..(k+1)*n]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One coordinate axis of a uniform grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    #[inline]
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    #[inline]
    pub fn vertex(&self, i: usize) -> f64 {
        if i == self.cells {
            self.hi
        } else {
            self.lo + i as f64 * self.width()
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    pub fn vertices(&self) -> Vec<f64> {
        (0..=self.cells).map(|i| self.vertex(i)).collect()
    }

    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Index of the cell containing `x` using half-open cells `[left, right)`,
    /// the last cell closed. Points outside are clamped first.
    #[inline]
    pub fn locate_cell(&self, x: f64) -> usize {
        let s = (self.clamp(x) - self.lo) / self.width();
        (s.floor().max(0.0) as usize).min(self.cells - 1)
    }

    /// Linear interpolation stencil between cell centers with constant
    /// extrapolation beyond the outermost centers: `(i0, i1, w, dw/dx)`
    /// so that the value is `(1 - w) v[i0] + w v[i1]`.
    #[inline]
    pub(crate) fn center_stencil(&self, x: f64) -> (usize, usize, f64, f64) {
        let n = self.cells;
        if n == 1 {
            return (0, 0, 0.0, 0.0);
        }
        let h = self.width();
        let s = (x - self.lo) / h - 0.5;
        if s <= 0.0 {
            (0, 0, 0.0, 0.0)
        } else if s >= (n - 1) as f64 {
            (n - 1, n - 1, 0.0, 0.0)
        } else {
            let i0 = (s.floor() as usize).min(n - 2);
            (i0, i0 + 1, s - i0 as f64, 1.0 / h)
        }
    }

    /// Element stencil between vertices: `(i, w)` with the point at
    /// `vertex(i) + w * width`, `w` in `[0, 1]`.
    #[inline]
    pub(crate) fn vertex_stencil(&self, x: f64) -> (usize, f64) {
        let h = self.width();
        let t = (self.clamp(x) - self.lo) / h;
        let i = (t.floor().max(0.0) as usize).min(self.cells - 1);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }
}

/// A uniform one- or two-dimensional grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    /// Builds a grid from per-axis bounds and cell counts.
    pub fn new(bounds: &[(f64, f64)], cells: &[usize]) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {}", bounds.len())));
        }
        if bounds.len() != cells.len() {
            return Err(Error::InvalidGrid(format!("{} bounds but {} cell counts", bounds.len(), cells.len())));
        }
        let mut axes = Vec::with_capacity(bounds.len());
        for (m, (&(lo, hi), &n)) in bounds.iter().zip(cells).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidGrid(format!("axis {m}: non-finite bounds")));
            }
            if lo >= hi {
                return Err(Error::InvalidGrid(format!("axis {m}: degenerate interval [{lo}, {hi}]")));
            }
            if n == 0 {
                return Err(Error::InvalidGrid(format!("axis {m}: cell count must be positive")));
            }
            axes.push(Axis { lo, hi, cells: n });
        }
        Ok(Self { axes })
    }

    pub fn uniform_1d(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Self::new(&[(lo, hi)], &[cells])
    }

    pub fn uniform_2d(bounds: (f64, f64), cells: usize) -> Result<Self> {
        Self::new(&[bounds, bounds], &[cells, cells])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axis(&self, m: usize) -> &Axis {
        &self.axes[m]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn num_cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn num_vertices(&self) -> usize {
        self.axes.iter().map(|a| a.cells + 1).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.width()).product()
    }

    pub fn measure(&self) -> f64 {
        self.axes.iter().map(|a| a.length()).product()
    }

    /// Euclidean diameter of the bounding box.
    pub fn diameter(&self) -> f64 {
        self.axes.iter().map(|a| a.length().powi(2)).sum::<f64>().sqrt()
    }

    pub fn min_width(&self) -> f64 {
        self.axes.iter().map(|a| a.width()).fold(f64::INFINITY, f64::min)
    }

    /// Center of the cell with linear index `i`.
    pub fn cell_center(&self, i: usize) -> [f64; 2] {
        let nx = self.axes[0].cells;
        let mut p = [self.axes[0].center(i % nx), 0.0];
        if self.dim() == 2 {
            p[1] = self.axes[1].center(i / nx);
        }
        p
    }

    /// Coordinates of the vertex with linear index `i`.
    pub fn vertex(&self, i: usize) -> [f64; 2] {
        let nx = self.axes[0].cells + 1;
        let mut p = [self.axes[0].vertex(i % nx), 0.0];
        if self.dim() == 2 {
            p[1] = self.axes[1].vertex(i / nx);
        }
        p
    }

    /// Whether vertex `i` lies on the boundary of the domain.
    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        let nx = self.axes[0].cells + 1;
        let ix = i % nx;
        if ix == 0 || ix == nx - 1 {
            return true;
        }
        if self.dim() == 2 {
            let iy = i / nx;
            return iy == 0 || iy == self.axes[1].cells;
        }
        false
    }

    pub fn clamp_point(&self, p: &mut [f64]) {
        for (x, a) in p.iter_mut().zip(&self.axes) {
            *x = a.clamp(*x);
        }
    }

    pub(crate) fn check_point(&self, p: &[f64]) -> Result<()> {
        if p.len() < self.dim() {
            return Err(Error::InvalidArgument(format!("point has {} coordinates, grid dimension is {}", p.len(), self.dim())));
        }
        if p[..self.dim()].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("evaluation point {p:?}")));
        }
        Ok(())
    }

    /// Checks that two grids describe the same discretization.
    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Point-evaluation rule for cell-average data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Value of the containing cell.
    Nearest,
    /// Multilinear interpolation of the values treated as samples at the
    /// cell centers.
    #[default]
    Multilinear,
}

/// Piecewise-constant field of cell averages.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl CellField {
    pub fn new(grid: Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 {
            return Err(Error::InvalidArgument("a cell field needs at least one component".into()));
        }
        let expected = grid.num_cells() * components;
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!("cell field expects {expected} values, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cell field entry {i}")));
        }
        Ok(Self { grid, components, values })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, components: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_cells() * components);
        Self { grid, components, values }
    }

    pub fn constant(grid: Grid, components: usize, value: f64) -> Self {
        let n = grid.num_cells() * components;
        Self { grid, components, values: vec![value; n] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.grid.num_cells();
        &self.values[k * n..(k + 1) * n]
    }

    /// Evaluates every component at `x`. Points outside the domain are
    /// clamped to its closure.
    pub fn eval(&self, x: &[f64], mode: EvalMode) -> Result<Vec<f64>> {
        self.grid.check_point(x)?;
        Ok((0..self.components).map(|k| self.eval_component(k, x, mode)).collect())
    }

    /// Evaluates component `k` at `x` without validating the point.
    #[inline]
    pub fn eval_component(&self, k: usize, x: &[f64], mode: EvalMode) -> f64 {
        let v = self.component(k);
        let ax = self.grid.axis(0);
        match (mode, self.grid.dim()) {
            (EvalMode::Nearest, 1) => v[ax.locate_cell(x[0])],
            (EvalMode::Nearest, _) => {
                let ay = self.grid.axis(1);
                v[ax.locate_cell(x[0]) + ax.cells * ay.locate_cell(x[1])]
            }
            (EvalMode::Multilinear, 1) => {
                let (i0, i1, w, _) = ax.center_stencil(x[0]);
                (1.0 - w) * v[i0] + w * v[i1]
            }
            (EvalMode::Multilinear, _) => {
                let ay = self.grid.axis(1);
                let nx = ax.cells;
                let (i0, i1, wx, _) = ax.center_stencil(x[0]);
                let (j0, j1, wy, _) = ay.center_stencil(x[1]);
                let a = (1.0 - wx) * v[i0 + nx * j0] + wx * v[i1 + nx * j0];
                let b = (1.0 - wx) * v[i0 + nx * j1] + wx * v[i1 + nx * j1];
                (1.0 - wy) * a + wy * b
            }
        }
    }

    /// L1 norm of component `k`.
    pub fn l1_norm(&self, k: usize) -> f64 {
        self.grid.cell_volume() * self.component(k).iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Integral of component `k` over the domain.
    pub fn integral(&self, k: usize) -> f64 {
        self.grid.cell_volume() * self.component(k).iter().sum::<f64>()
    }
}

/// Continuous, elementwise multilinear vector field given by its vertex
/// values; one component per spatial dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexField {
    grid: Grid,
    values: Vec<f64>,
}

impl VertexField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.num_vertices() * grid.dim();
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!("vertex field expects {expected} values, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vertex field entry {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.num_vertices() * grid.dim());
        Self { grid, values }
    }

    /// The identity map sampled at the vertices.
    pub fn identity(grid: Grid) -> Self {
        let nv = grid.num_vertices();
        let d = grid.dim();
        let mut values = vec![0.0; nv * d];
        for i in 0..nv {
            let p = grid.vertex(i);
            for m in 0..d {
                values[m * nv + i] = p[m];
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, m: usize) -> &[f64] {
        let n = self.grid.num_vertices();
        &self.values[m * n..(m + 1) * n]
    }

    /// Clamps every vertex value into the closure of the domain.
    pub fn clamp_to_domain(&mut self) {
        let n = self.grid.num_vertices();
        for m in 0..self.grid.dim() {
            let a = *self.grid.axis(m);
            for v in &mut self.values[m * n..(m + 1) * n] {
                *v = a.clamp(*v);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.grid.check_point(x)?;
        let p = self.eval_unchecked(x);
        Ok(p[..self.grid.dim()].to_vec())
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> [f64; 2] {
        let ax = self.grid.axis(0);
        let nv = self.grid.num_vertices();
        let (i, wx) = ax.vertex_stencil(x[0]);
        if self.grid.dim() == 1 {
            let v = &self.values;
            return [(1.0 - wx) * v[i] + wx * v[i + 1], 0.0];
        }
        let ay = self.grid.axis(1);
        let (j, wy) = ay.vertex_stencil(x[1]);
        let sx = ax.cells + 1;
        let k00 = i + sx * j;
        let k10 = k00 + 1;
        let k01 = k00 + sx;
        let k11 = k01 + 1;
        let w00 = (1.0 - wx) * (1.0 - wy);
        let w10 = wx * (1.0 - wy);
        let w01 = (1.0 - wx) * wy;
        let w11 = wx * wy;
        let mut out = [0.0; 2];
        for (m, o) in out.iter_mut().enumerate() {
            let v = &self.values[m * nv..(m + 1) * nv];
            *o = w00 * v[k00] + w10 * v[k10] + w01 * v[k01] + w11 * v[k11];
        }
        out
    }
}

/// Multilinear interpolation weights of `x` in its containing element,
/// ordered (00, 10, 01, 11) in 2D and (0, 1) in 1D.
pub fn multilinear_weights(grid: &Grid, x: &[f64]) -> Vec<f64> {
    let (_, wx) = grid.axis(0).vertex_stencil(x[0]);
    if grid.dim() == 1 {
        return vec![1.0 - wx, wx];
    }
    let (_, wy) = grid.axis(1).vertex_stencil(x[1]);
    vec![(1.0 - wx) * (1.0 - wy), wx * (1.0 - wy), (1.0 - wx) * wy, wx * wy]
}

/// Analytic initial-data descriptors that can be projected onto cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Zero,
    /// Indicator of the axis-aligned box `[lo, hi]`.
    Indicator {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// `(sin(2 pi (x - shift)) + 1)` times the indicator of `[lo, hi]` (1D).
    WindowedSine {
        shift: f64,
        lo: f64,
        hi: f64,
    },
    Scaled {
        factor: f64,
        profile: Box<Profile>,
    },
    Sum {
        terms: Vec<Profile>,
    },
}

impl Profile {
    pub fn indicator(lo: &[f64], hi: &[f64]) -> Self {
        Profile::Indicator { lo: lo.to_vec(), hi: hi.to_vec() }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Profile::Scaled { factor, profile: Box::new(self) }
    }

    /// Pointwise value.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Indicator { lo, hi } => {
                let inside = lo.iter().zip(hi).zip(x).all(|((&l, &h), &xi)| xi >= l && xi <= h);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::WindowedSine { shift, lo, hi } => {
                if x[0] >= *lo && x[0] <= *hi {
                    (2.0 * std::f64::consts::PI * (x[0] - shift)).sin() + 1.0
                } else {
                    0.0
                }
            }
            Profile::Scaled { factor, profile } => factor * profile.eval(x),
            Profile::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    /// Cell value: exact overlap fraction for indicators, midpoint value for
    /// smooth factors.
    fn cell_value(&self, grid: &Grid, ix: usize, iy: usize) -> Result<f64> {
        Ok(match self {
            Profile::Zero => 0.0,
            Profile::Indicator { lo, hi } => {
                if lo.len() != grid.dim() || hi.len() != grid.dim() {
                    return Err(Error::Unsupported(format!("{}-dimensional indicator on a {}-dimensional grid", lo.len(), grid.dim())));
                }
                let mut frac = overlap_fraction(grid.axis(0), ix, lo[0], hi[0]);
                if grid.dim() == 2 {
                    frac *= overlap_fraction(grid.axis(1), iy, lo[1], hi[1]);
                }
                frac
            }
            Profile::WindowedSine { shift, lo, hi } => {
                if grid.dim() != 1 {
                    return Err(Error::Unsupported("windowed sine requires a 1D grid".into()));
                }
                let xc = grid.axis(0).center(ix);
                let smooth = (2.0 * std::f64::consts::PI * (xc - shift)).sin() + 1.0;
                smooth * overlap_fraction(grid.axis(0), ix, *lo, *hi)
            }
            Profile::Scaled { factor, profile } => factor * profile.cell_value(grid, ix, iy)?,
            Profile::Sum { terms } => {
                let mut s = 0.0;
                for t in terms {
                    s += t.cell_value(grid, ix, iy)?;
                }
                s
            }
        })
    }
}

fn overlap_fraction(axis: &Axis, i: usize, lo: f64, hi: f64) -> f64 {
    let h = axis.width();
    let left = axis.lo + i as f64 * h;
    let right = left + h;
    let overlap = (right.min(hi) - left.max(lo)).max(0.0);
    (overlap / h).min(1.0)
}

/// Projects one profile per component onto the cells of `grid`.
pub fn project_to_cells(profiles: &[Profile], grid: &Grid) -> Result<CellField> {
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("no component profiles given".into()));
    }
    let n = grid.num_cells();
    let nx = grid.axis(0).cells;
    let mut values = vec![0.0; n * profiles.len()];
    for (k, p) in profiles.iter().enumerate() {
        for i in 0..n {
            values[k * n + i] = p.cell_value(grid, i % nx, i / nx)?;
        }
    }
    CellField::new(grid.clone(), profiles.len(), values)
}

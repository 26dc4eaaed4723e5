//! Snapshot registration: displacement fields `Psi` in the span of tensor
//! shifted-Legendre polynomials times the bump `x(1 - x)` (per axis, in
//! coordinates normalized to the unit cube), fitted so that the snapshot
//! sampled at `phi(x) = x - Psi(x)` matches a reference snapshot.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{CellField, Grid};
use crate::optim::{bfgs, central_difference, BfgsOptions};
use crate::solver::SnapshotSet;

/// Values and first two derivatives of the shifted Legendre polynomials of
/// degree `0..m` on `[0, 1]` at `xi`.
pub fn shifted_legendre(m: usize, xi: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = 2.0 * xi - 1.0;
    let mut p = vec![0.0; m];
    let mut dp = vec![0.0; m];
    let mut d2p = vec![0.0; m];
    if m == 0 {
        return (p, dp, d2p);
    }
    p[0] = 1.0;
    if m > 1 {
        p[1] = s;
        dp[1] = 1.0;
    }
    for n in 1..m.saturating_sub(1) {
        let nf = n as f64;
        p[n + 1] = ((2.0 * nf + 1.0) * s * p[n] - nf * p[n - 1]) / (nf + 1.0);
        dp[n + 1] = dp[n - 1] + (2.0 * nf + 1.0) * p[n];
        d2p[n + 1] = d2p[n - 1] + (2.0 * nf + 1.0) * dp[n];
    }
    // chain rule for s = 2 xi - 1
    dp.iter_mut().for_each(|v| *v *= 2.0);
    d2p.iter_mut().for_each(|v| *v *= 4.0);
    (p, dp, d2p)
}

/// One-dimensional factors `f_j = l_j * xi (1 - xi)` with derivatives.
#[derive(Clone, Debug)]
struct BumpFactors {
    f: Vec<f64>,
    df: Vec<f64>,
    d2f: Vec<f64>,
}

fn bump_factors(m: usize, xi: f64) -> BumpFactors {
    let (l, dl, d2l) = shifted_legendre(m, xi);
    let ups = xi * (1.0 - xi);
    let dups = 1.0 - 2.0 * xi;
    let d2ups = -2.0;
    BumpFactors {
        f: l.iter().map(|v| v * ups).collect(),
        df: (0..m).map(|j| dl[j] * ups + l[j] * dups).collect(),
        d2f: (0..m).map(|j| d2l[j] * ups + 2.0 * dl[j] * dups + l[j] * d2ups).collect(),
    }
}

/// Basis function `l_j(x1) [l_k(x2)] Upsilon(x)` with 1-based indices
/// (`l_1` is the constant polynomial) at a point of the unit cube.
pub fn basis_eval(indices: &[usize], m: usize, xi: &[f64]) -> Result<f64> {
    if indices.is_empty() || indices.len() > 2 || xi.len() < indices.len() {
        return Err(Error::InvalidArgument("basis needs 1 or 2 indices and matching coordinates".into()));
    }
    let mut v = 1.0;
    for (&j, &x) in indices.iter().zip(xi) {
        if j == 0 || j > m {
            return Err(Error::InvalidArgument(format!("basis index {j} outside 1..={m}")));
        }
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("coordinate {x} outside [0, 1]")));
        }
        v *= bump_factors(m, x).f[j - 1];
    }
    Ok(v)
}

/// Displacement field with coefficients of the `M^d` tensor basis per
/// spatial component. Component `c` is scaled by the physical length of
/// axis `c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    order: usize,
    bounds: Vec<(f64, f64)>,
    /// component-major; within a component the first-axis index runs fastest
    coeffs: Vec<f64>,
}

impl DisplacementField {
    pub fn zero(grid: &Grid, order: usize) -> Self {
        let bounds: Vec<(f64, f64)> = grid.axes().iter().map(|a| (a.lo, a.hi)).collect();
        let d = bounds.len();
        Self { order, coeffs: vec![0.0; d * order.pow(d as u32)], bounds }
    }

    pub fn with_coeffs(grid: &Grid, order: usize, coeffs: Vec<f64>) -> Result<Self> {
        let mut f = Self::zero(grid, order);
        if coeffs.len() != f.coeffs.len() {
            return Err(Error::InvalidArgument(format!("expected {} coefficients, got {}", f.coeffs.len(), coeffs.len())));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("displacement coefficients".into()));
        }
        f.coeffs = coeffs;
        Ok(f)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    fn per_component(&self) -> usize {
        self.order.pow(self.dim() as u32)
    }

    fn lengths(&self) -> [f64; 2] {
        let mut l = [1.0; 2];
        for (m, &(lo, hi)) in self.bounds.iter().enumerate() {
            l[m] = hi - lo;
        }
        l
    }

    fn normalize(&self, x: &[f64]) -> [f64; 2] {
        let mut xi = [0.0; 2];
        for (m, &(lo, hi)) in self.bounds.iter().enumerate() {
            xi[m] = ((x[m] - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
        xi
    }

    /// Displacement and its Jacobian `dPsi_c/dx_m` (physical units) at `x`.
    pub fn eval_with_jacobian(&self, x: &[f64]) -> ([f64; 2], [[f64; 2]; 2]) {
        let d = self.dim();
        let m = self.order;
        let len = self.lengths();
        let xi = self.normalize(x);
        let bx = bump_factors(m, xi[0]);
        let mut psi = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        if d == 1 {
            let a = &self.coeffs;
            let (mut v, mut dv) = (0.0, 0.0);
            for j in 0..m {
                v += a[j] * bx.f[j];
                dv += a[j] * bx.df[j];
            }
            psi[0] = len[0] * v;
            jac[0][0] = dv;
            return (psi, jac);
        }
        let by = bump_factors(m, xi[1]);
        let pc = self.per_component();
        for c in 0..2 {
            let a = &self.coeffs[c * pc..(c + 1) * pc];
            let (mut v, mut dx, mut dy) = (0.0, 0.0, 0.0);
            for k in 0..m {
                let (mut s, mut sd) = (0.0, 0.0);
                for j in 0..m {
                    s += a[j + m * k] * bx.f[j];
                    sd += a[j + m * k] * bx.df[j];
                }
                v += s * by.f[k];
                dx += sd * by.f[k];
                dy += s * by.df[k];
            }
            psi[c] = len[c] * v;
            jac[c][0] = len[c] / len[0] * dx;
            jac[c][1] = len[c] / len[1] * dy;
        }
        (psi, jac)
    }

    /// Displacement vector at the physical point `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (psi, _) = self.eval_with_jacobian(x);
        psi[..self.dim()].to_vec()
    }

    /// Minimum of `det(I - grad Psi)` over the cell centers of `grid`.
    pub fn min_forward_jacobian(&self, grid: &Grid) -> f64 {
        (0..grid.num_cells())
            .map(|i| {
                let (_, j) = self.eval_with_jacobian(&grid.cell_center(i));
                if self.dim() == 1 {
                    1.0 - j[0][0]
                } else {
                    (1.0 - j[0][0]) * (1.0 - j[1][1]) - j[0][1] * j[1][0]
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Matching, regularization, fold penalty and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub matching: f64,
    pub regularization: f64,
    #[serde(default)]
    pub fold: f64,
    pub total: f64,
}

/// Soft lower bound on `det(grad phi)`: adds
/// `weight * sum_i |I_i| max(0, floor - det(grad phi)(x_i))^2` over the
/// cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPenalty {
    pub floor: f64,
    pub weight: f64,
}

/// Per-axis basis tables at the cell centers.
struct AxisTable {
    /// `f[j * n + i]`
    f: Vec<f64>,
    /// derivative with respect to the normalized coordinate
    df: Vec<f64>,
    x: Vec<f64>,
}

/// `out[ix + nx iy] = sum_{j,k} a[j + m k] gx[j nx + ix] gy[k ny + iy]`
fn tensor_apply(a: &[f64], m: usize, gx: &[f64], nx: usize, gy: &[f64], ny: usize) -> Vec<f64> {
    let mut part = vec![0.0; m * nx];
    for k in 0..m {
        for j in 0..m {
            let c = a[j + m * k];
            if c == 0.0 {
                continue;
            }
            for (p, g) in part[k * nx..(k + 1) * nx].iter_mut().zip(&gx[j * nx..(j + 1) * nx]) {
                *p += c * g;
            }
        }
    }
    let mut out = vec![0.0; nx * ny];
    for iy in 0..ny {
        let row = &mut out[iy * nx..(iy + 1) * nx];
        for k in 0..m {
            let fy = gy[k * ny + iy];
            for (o, p) in row.iter_mut().zip(&part[k * nx..(k + 1) * nx]) {
                *o += fy * p;
            }
        }
    }
    out
}

/// Adjoint of [`tensor_apply`], accumulated into `g`.
fn tensor_adjoint(q: &[f64], m: usize, gx: &[f64], nx: usize, gy: &[f64], ny: usize, scale: f64, g: &mut [f64]) {
    let mut qq = vec![0.0; m * nx];
    for iy in 0..ny {
        let row = &q[iy * nx..(iy + 1) * nx];
        for k in 0..m {
            let fy = gy[k * ny + iy];
            if fy == 0.0 {
                continue;
            }
            for (o, v) in qq[k * nx..(k + 1) * nx].iter_mut().zip(row) {
                *o += fy * v;
            }
        }
    }
    for k in 0..m {
        for j in 0..m {
            let s: f64 = gx[j * nx..(j + 1) * nx].iter().zip(&qq[k * nx..(k + 1) * nx]).map(|(a, b)| a * b).sum();
            g[j + m * k] += scale * s;
        }
    }
}

/// The registration objective for a fixed snapshot pair, with the
/// basis tables and the regularization Gram matrix precomputed.
pub struct Matcher<'a> {
    u_t: &'a CellField,
    u_ref: &'a CellField,
    order: usize,
    eps: f64,
    lengths: [f64; 2],
    tables: Vec<AxisTable>,
    /// `R = eps * sum_c L_c^2 a_c^T reg a_c`
    reg: Vec<f64>,
    fold: Option<FoldPenalty>,
    template: DisplacementField,
}

impl<'a> Matcher<'a> {
    pub fn new(u_t: &'a CellField, u_ref: &'a CellField, order: usize, eps: f64) -> Result<Self> {
        u_t.grid().ensure_same(u_ref.grid())?;
        if u_t.components() != u_ref.components() {
            return Err(Error::GridMismatch("snapshot component counts differ".into()));
        }
        if order == 0 {
            return Err(Error::InvalidArgument("polynomial order must be at least 1".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("regularization weight {eps} must be >= 0")));
        }
        let grid = u_t.grid();
        let d = grid.dim();
        let m = order;
        let mut lengths = [1.0; 2];
        let mut tables = Vec::new();
        // second-derivative and value tables for the regularization Gram
        let mut f0s = Vec::new();
        let mut f2s = Vec::new();
        for a in grid.axes() {
            let n = a.cells;
            lengths[tables.len()] = a.length();
            let mut f = vec![0.0; m * n];
            let mut df = vec![0.0; m * n];
            let mut f2 = vec![0.0; m * n];
            let x = a.centers();
            for (i, &xc) in x.iter().enumerate() {
                let b = bump_factors(m, (xc - a.lo) / a.length());
                for j in 0..m {
                    f[j * n + i] = b.f[j];
                    df[j * n + i] = b.df[j];
                    f2[j * n + i] = b.d2f[j];
                }
            }
            f0s.push(f.clone());
            f2s.push(f2);
            tables.push(AxisTable { f, df, x });
        }
        let gram = |a: &[f64], b: &[f64], n: usize| {
            let mut s = vec![0.0; m * m];
            for j in 0..m {
                for jj in 0..m {
                    s[j * m + jj] = (0..n).map(|i| a[j * n + i] * b[jj * n + i]).sum();
                }
            }
            s
        };
        let w = grid.cell_volume();
        let pc = m.pow(d as u32);
        let mut reg = vec![0.0; pc * pc];
        let nx = grid.axis(0).cells;
        let l1 = lengths[0].powi(2);
        if d == 1 {
            let s22 = gram(&f2s[0], &f2s[0], nx);
            for (r, s) in reg.iter_mut().zip(&s22) {
                *r = w * s / (l1 * l1);
            }
        } else {
            let ny = grid.axis(1).cells;
            let l2 = lengths[1].powi(2);
            let (x22, x20, x02, x00) =
                (gram(&f2s[0], &f2s[0], nx), gram(&f2s[0], &f0s[0], nx), gram(&f0s[0], &f2s[0], nx), gram(&f0s[0], &f0s[0], nx));
            let (y22, y20, y02, y00) =
                (gram(&f2s[1], &f2s[1], ny), gram(&f2s[1], &f0s[1], ny), gram(&f0s[1], &f2s[1], ny), gram(&f0s[1], &f0s[1], ny));
            for k in 0..m {
                for j in 0..m {
                    for kk in 0..m {
                        for jj in 0..m {
                            let (a, b) = (j * m + jj, k * m + kk);
                            let v =
                                x22[a] * y00[b] / (l1 * l1) + (x20[a] * y02[b] + x02[a] * y20[b]) / (l1 * l2) + x00[a] * y22[b] / (l2 * l2);
                            reg[(j + m * k) * pc + (jj + m * kk)] = w * v;
                        }
                    }
                }
            }
        }
        Ok(Self { u_t, u_ref, order, eps, lengths, tables, reg, fold: None, template: DisplacementField::zero(grid, order) })
    }

    pub fn with_fold_penalty(mut self, fold: Option<FoldPenalty>) -> Self {
        self.fold = fold;
        self
    }

    pub fn num_coeffs(&self) -> usize {
        self.template.coeffs.len()
    }

    fn regularization(&self, a: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let pc = self.template.per_component();
        let d = self.u_t.grid().dim();
        let mut r = 0.0;
        let mut grad = grad;
        for c in 0..d {
            let ac = &a[c * pc..(c + 1) * pc];
            let scale = self.eps * self.lengths[c].powi(2);
            for p in 0..pc {
                let hp: f64 = (0..pc).map(|q| self.reg[p * pc + q] * ac[q]).sum();
                r += scale * ac[p] * hp;
                if let Some(g) = grad.as_deref_mut() {
                    g[c * pc + p] += 2.0 * scale * hp;
                }
            }
        }
        r
    }

    /// Evaluates the objective at coefficients `a`, accumulating the
    /// analytic gradient into `grad` when given.
    pub fn evaluate(&self, a: &[f64], mut grad: Option<&mut [f64]>) -> ObjectiveValue {
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let matching =
            if self.u_t.grid().dim() == 1 { self.matching_1d(a, grad.as_deref_mut()) } else { self.matching_2d(a, grad.as_deref_mut()) };
        let regularization = self.regularization(a, grad.as_deref_mut());
        let fold = match self.fold {
            Some(p) if p.weight > 0.0 => self.fold_penalty(a, p, grad),
            _ => 0.0,
        };
        ObjectiveValue { matching, regularization, fold, total: matching + regularization + fold }
    }

    fn fold_penalty(&self, a: &[f64], p: FoldPenalty, grad: Option<&mut [f64]>) -> f64 {
        let grid = self.u_t.grid();
        let w = grid.cell_volume();
        let m = self.order;
        let mut total = 0.0;
        if grid.dim() == 1 {
            let t = &self.tables[0];
            let n = t.x.len();
            let mut grad = grad;
            for i in 0..n {
                let dv: f64 = (0..m).map(|j| a[j] * t.df[j * n + i]).sum();
                let d = p.floor - (1.0 - dv);
                if d > 0.0 {
                    total += p.weight * w * d * d;
                    if let Some(g) = grad.as_deref_mut() {
                        for j in 0..m {
                            g[j] += 2.0 * p.weight * w * d * t.df[j * n + i];
                        }
                    }
                }
            }
            return total;
        }
        let (tx, ty) = (&self.tables[0], &self.tables[1]);
        let (nx, ny) = (tx.x.len(), ty.x.len());
        let pc = m * m;
        let l = self.lengths;
        let (a1, a2) = (&a[..pc], &a[pc..2 * pc]);
        // entries of grad Psi in physical units
        let ax = tensor_apply(a1, m, &tx.df, nx, &ty.f, ny);
        let bx = tensor_apply(a1, m, &tx.f, nx, &ty.df, ny);
        let cx = tensor_apply(a2, m, &tx.df, nx, &ty.f, ny);
        let dx = tensor_apply(a2, m, &tx.f, nx, &ty.df, ny);
        let (sa, sb, sc, sd) = (1.0, l[0] / l[1], l[1] / l[0], 1.0);
        let want = grad.is_some();
        let mut q = if want { vec![vec![0.0; nx * ny]; 4] } else { Vec::new() };
        for i in 0..nx * ny {
            let (pa, pb, pcx, pd) = (sa * ax[i], sb * bx[i], sc * cx[i], sd * dx[i]);
            let jac = (1.0 - pa) * (1.0 - pd) - pb * pcx;
            let d = p.floor - jac;
            if d > 0.0 {
                total += p.weight * w * d * d;
                if want {
                    let s = 2.0 * p.weight * w * d;
                    q[0][i] = s * (1.0 - pd);
                    q[1][i] = s * pcx;
                    q[2][i] = s * pb;
                    q[3][i] = s * (1.0 - pa);
                }
            }
        }
        if let Some(g) = grad {
            let (g1, g2) = g.split_at_mut(pc);
            tensor_adjoint(&q[0], m, &tx.df, nx, &ty.f, ny, sa, g1);
            tensor_adjoint(&q[1], m, &tx.f, nx, &ty.df, ny, sb, g1);
            tensor_adjoint(&q[2], m, &tx.df, nx, &ty.f, ny, sc, &mut g2[..pc]);
            tensor_adjoint(&q[3], m, &tx.f, nx, &ty.df, ny, sd, &mut g2[..pc]);
        }
        total
    }

    fn matching_1d(&self, a: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let grid = self.u_t.grid();
        let ax = grid.axis(0);
        let n = ax.cells;
        let m = self.order;
        let w = grid.cell_volume();
        let len = self.lengths[0];
        let t = &self.tables[0];
        let comps = self.u_t.components();
        let mut total = 0.0;
        for i in 0..n {
            let mut psi = 0.0;
            for j in 0..m {
                psi += a[j] * t.f[j * n + i];
            }
            let p = ax.clamp(t.x[i] - len * psi);
            let (i0, i1, wt, dw) = ax.center_stencil(p);
            let mut dmatch = 0.0;
            for k in 0..comps {
                let v = self.u_t.component(k);
                let r = (1.0 - wt) * v[i0] + wt * v[i1] - self.u_ref.component(k)[i];
                total += w * r * r;
                dmatch += 2.0 * w * r * (v[i1] - v[i0]) * dw;
            }
            if let Some(g) = grad.as_deref_mut() {
                if dmatch != 0.0 {
                    // d p / d a_j = -len f_j
                    for j in 0..m {
                        g[j] -= dmatch * len * t.f[j * n + i];
                    }
                }
            }
        }
        total
    }

    fn matching_2d(&self, a: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let grid = self.u_t.grid();
        let (ax, ay) = (grid.axis(0), grid.axis(1));
        let (nx, ny) = (ax.cells, ay.cells);
        let m = self.order;
        let pc = m * m;
        let w = grid.cell_volume();
        let (tx, ty) = (&self.tables[0], &self.tables[1]);
        // partial sums p_c[k * nx + ix] = sum_j a_c[j + m k] f_j(x_ix)
        let mut psi = [vec![0.0; nx * ny], vec![0.0; nx * ny]];
        for c in 0..2 {
            let ac = &a[c * pc..(c + 1) * pc];
            let mut part = vec![0.0; m * nx];
            for k in 0..m {
                for j in 0..m {
                    let coef = ac[j + m * k];
                    if coef == 0.0 {
                        continue;
                    }
                    let row = &tx.f[j * nx..(j + 1) * nx];
                    for (pv, fv) in part[k * nx..(k + 1) * nx].iter_mut().zip(row) {
                        *pv += coef * fv;
                    }
                }
            }
            let len = self.lengths[c];
            for iy in 0..ny {
                let out = &mut psi[c][iy * nx..(iy + 1) * nx];
                for k in 0..m {
                    let fy = len * ty.f[k * ny + iy];
                    for (o, pv) in out.iter_mut().zip(&part[k * nx..(k + 1) * nx]) {
                        *o += fy * pv;
                    }
                }
            }
        }
        let comps = self.u_t.components();
        let want_grad = grad.is_some();
        let mut q = if want_grad { [vec![0.0; nx * ny], vec![0.0; nx * ny]] } else { [Vec::new(), Vec::new()] };
        let mut total = 0.0;
        for iy in 0..ny {
            for ix in 0..nx {
                let i = ix + nx * iy;
                let px = ax.clamp(tx.x[ix] - psi[0][i]);
                let py = ay.clamp(ty.x[iy] - psi[1][i]);
                let (i0, i1, wx, dwx) = ax.center_stencil(px);
                let (j0, j1, wy, dwy) = ay.center_stencil(py);
                let (mut gx, mut gy) = (0.0, 0.0);
                for k in 0..comps {
                    let v = self.u_t.component(k);
                    let (v00, v10, v01, v11) = (v[i0 + nx * j0], v[i1 + nx * j0], v[i0 + nx * j1], v[i1 + nx * j1]);
                    let lo = (1.0 - wx) * v00 + wx * v10;
                    let hi = (1.0 - wx) * v01 + wx * v11;
                    let r = (1.0 - wy) * lo + wy * hi - self.u_ref.component(k)[i];
                    total += w * r * r;
                    if want_grad {
                        let dudx = ((1.0 - wy) * (v10 - v00) + wy * (v11 - v01)) * dwx;
                        let dudy = (hi - lo) * dwy;
                        gx += 2.0 * w * r * dudx;
                        gy += 2.0 * w * r * dudy;
                    }
                }
                if want_grad {
                    // d p_c / d Psi_c = -1
                    q[0][i] = -gx * self.lengths[0];
                    q[1][i] = -gy * self.lengths[1];
                }
            }
        }
        if let Some(g) = grad {
            for c in 0..2 {
                // qq[k * nx + ix] = sum_iy f_k(y_iy) q_c(ix, iy)
                let mut qq = vec![0.0; m * nx];
                for iy in 0..ny {
                    let row = &q[c][iy * nx..(iy + 1) * nx];
                    for k in 0..m {
                        let fy = ty.f[k * ny + iy];
                        if fy == 0.0 {
                            continue;
                        }
                        for (o, qv) in qq[k * nx..(k + 1) * nx].iter_mut().zip(row) {
                            *o += fy * qv;
                        }
                    }
                }
                for k in 0..m {
                    for j in 0..m {
                        let s: f64 = tx.f[j * nx..(j + 1) * nx].iter().zip(&qq[k * nx..(k + 1) * nx]).map(|(a, b)| a * b).sum();
                        g[c * pc + j + m * k] += s;
                    }
                }
            }
        }
        total
    }
}

/// Objective of `field` for aligning `u_t` to `u_ref`.
pub fn objective(field: &DisplacementField, u_t: &CellField, u_ref: &CellField, eps: f64) -> Result<ObjectiveValue> {
    let matcher = Matcher::new(u_t, u_ref, field.order, eps)?;
    if field.bounds.len() != u_t.grid().dim() {
        return Err(Error::GridMismatch("displacement field dimension differs from grid".into()));
    }
    Ok(matcher.evaluate(&field.coeffs, None))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    CentralDifference { step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Largest coefficient change per optimizer iteration.
    pub max_step: f64,
    pub gradient: GradientMode,
    #[serde(default)]
    pub fold_penalty: Option<FoldPenalty>,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self { max_iterations: 200, gradient_tolerance: 1e-8, max_step: 0.05, gradient: GradientMode::Analytic, fold_penalty: None }
    }
}

/// Optimizer outcome for one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub time: f64,
    pub initial: ObjectiveValue,
    pub fin: ObjectiveValue,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the optimizer hit the iteration cap without meeting its
    /// stopping criteria.
    pub warning: Option<String>,
}

/// Registers `u_t` to `u_ref` starting from `init`.
pub fn register_snapshot(
    u_t: &CellField,
    u_ref: &CellField,
    eps: f64,
    init: &DisplacementField,
    opts: &RegistrationOptions,
) -> Result<(DisplacementField, SnapshotDiagnostics)> {
    let matcher = Matcher::new(u_t, u_ref, init.order, eps)?.with_fold_penalty(opts.fold_penalty);
    if init.bounds.len() != u_t.grid().dim() {
        return Err(Error::GridMismatch("initial field dimension differs from grid".into()));
    }
    let bopts = BfgsOptions {
        max_iterations: opts.max_iterations,
        gradient_tolerance: opts.gradient_tolerance,
        max_step: opts.max_step,
        ..Default::default()
    };
    let initial = matcher.evaluate(&init.coeffs, None);
    let result = match opts.gradient {
        GradientMode::Analytic => bfgs(|a, g| matcher.evaluate(a, Some(g)).total, &init.coeffs, &bopts),
        GradientMode::CentralDifference { step } => bfgs(
            |a, g| {
                central_difference(|b| matcher.evaluate(b, None).total, a, step, g);
                matcher.evaluate(a, None).total
            },
            &init.coeffs,
            &bopts,
        ),
    };
    let fin = matcher.evaluate(&result.x, None);
    let warning = (!result.converged).then(|| format!("stopped after {} iterations without convergence", result.iterations));
    let mut field = init.clone();
    field.coeffs = result.x;
    Ok((field, SnapshotDiagnostics { time: f64::NAN, initial, fin, iterations: result.iterations, converged: result.converged, warning }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Outward from the reference time, each solve initialized by the
    /// nearest already-registered snapshot.
    NearestSolved,
    /// Every snapshot from the zero field, independently (parallel).
    Independent,
}

/// Displacement fields for a whole trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub t_ref: f64,
    /// Index of the snapshot used as the reference (closest to `t_ref`).
    pub reference_index: usize,
    pub order: usize,
    pub eps: f64,
    pub times: Vec<f64>,
    pub fields: Vec<DisplacementField>,
    pub diagnostics: Vec<SnapshotDiagnostics>,
}

impl TransformSet {
    pub fn warnings(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.warning.is_some()).count()
    }
}

/// Registers every snapshot of `snaps` to the snapshot closest to `t_ref`.
pub fn register_trajectory(
    snaps: &SnapshotSet,
    t_ref: f64,
    order: usize,
    eps: f64,
    warm: WarmStart,
    opts: &RegistrationOptions,
) -> Result<TransformSet> {
    let k = snaps.len();
    let (t0, t1) = (snaps.times[0], snaps.times[k - 1]);
    if !(t_ref >= t0 - 1e-12 && t_ref <= t1 + 1e-12) {
        return Err(Error::InvalidArgument(format!("t_ref = {t_ref} outside [{t0}, {t1}]")));
    }
    let reference_index = (0..k).min_by(|&a, &b| (snaps.times[a] - t_ref).abs().total_cmp(&(snaps.times[b] - t_ref).abs())).unwrap_or(0);
    let u_ref = &snaps.fields[reference_index];
    let zero = DisplacementField::zero(&snaps.grid, order);

    let mut fields: Vec<Option<DisplacementField>> = vec![None; k];
    let mut diags: Vec<Option<SnapshotDiagnostics>> = vec![None; k];
    match warm {
        WarmStart::NearestSolved => {
            let mut order_idx: Vec<usize> = (0..k).collect();
            order_idx.sort_by_key(|&i| (i.abs_diff(reference_index), i));
            for &i in &order_idx {
                let init = (0..k)
                    .filter(|&j| fields[j].is_some())
                    .min_by_key(|&j| j.abs_diff(i))
                    .and_then(|j| fields[j].clone())
                    .unwrap_or_else(|| zero.clone());
                let (f, mut d) = register_snapshot(&snaps.fields[i], u_ref, eps, &init, opts)?;
                d.time = snaps.times[i];
                if let Some(w) = &d.warning {
                    warn!("registration at t = {}: {w}", snaps.times[i]);
                }
                fields[i] = Some(f);
                diags[i] = Some(d);
            }
        }
        WarmStart::Independent => {
            let results: Vec<Result<(DisplacementField, SnapshotDiagnostics)>> = (0..k)
                .into_par_iter()
                .map(|i| {
                    register_snapshot(&snaps.fields[i], u_ref, eps, &zero, opts).map(|(f, mut d)| {
                        d.time = snaps.times[i];
                        (f, d)
                    })
                })
                .collect();
            for (i, r) in results.into_iter().enumerate() {
                let (f, d) = r?;
                fields[i] = Some(f);
                diags[i] = Some(d);
            }
        }
    }
    Ok(TransformSet {
        t_ref,
        reference_index,
        order,
        eps,
        times: snaps.times.clone(),
        fields: fields.into_iter().map(|f| f.expect("every snapshot registered")).collect(),
        diagnostics: diags.into_iter().map(|d| d.expect("every snapshot registered")).collect(),
    })
}

/// Picks the polynomial order by escalation: starting from 2, the order is
/// increased while the summed matching value over a subsample of the
/// trajectory drops by more than 10% per increment, up to `max_order`.
/// Returns the chosen order and the matching value recorded per order.
pub fn select_order(
    snaps: &SnapshotSet,
    t_ref: f64,
    max_order: usize,
    eps: f64,
    samples: usize,
    opts: &RegistrationOptions,
) -> Result<(usize, Vec<(usize, f64)>)> {
    let k = snaps.len();
    let stride = (k / samples.max(2)).max(1);
    let idx: Vec<usize> = (0..k).step_by(stride).chain(std::iter::once(k - 1)).collect();
    let sub = SnapshotSet {
        grid: snaps.grid.clone(),
        times: idx.iter().map(|&i| snaps.times[i]).collect(),
        fields: idx.iter().map(|&i| snaps.fields[i].clone()).collect(),
        problem: snaps.problem.clone(),
        wall_clock: idx.iter().map(|&i| snaps.wall_clock[i]).collect(),
    };
    let mut history = Vec::new();
    let mut chosen = 2.min(max_order);
    let mut prev: Option<f64> = None;
    for m in 2..=max_order.max(2) {
        let ts = register_trajectory(&sub, t_ref, m, eps, WarmStart::NearestSolved, opts)?;
        let total: f64 = ts.diagnostics.iter().map(|d| d.fin.matching).sum();
        history.push((m, total));
        match prev {
            Some(p) if total > 0.9 * p => break,
            _ => {
                chosen = m;
                prev = Some(total);
            }
        }
        if m >= max_order {
            break;
        }
    }
    Ok((chosen, history))
}

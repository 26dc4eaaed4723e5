//! Forward transforms, transformed snapshots, vertex-wise inversion of the
//! transforms, and Jacobian diagnostics of the inverse maps.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmd::SnapshotMatrix;
use crate::error::{Error, Result};
use crate::mesh::{CellField, EvalMode, Grid, VertexField};
use crate::registration::{DisplacementField, TransformSet};
use crate::solver::SnapshotSet;

const NEWTON_ITERATIONS: usize = 50;
const LATTICE_POINTS: usize = 41;

/// `phi(x) = x - Psi(x)`, clamped to the closed domain.
pub fn forward_eval(field: &DisplacementField, grid: &Grid, x: &[f64]) -> [f64; 2] {
    let (psi, _) = field.eval_with_jacobian(x);
    let mut p = [0.0; 2];
    for m in 0..grid.dim() {
        p[m] = grid.axis(m).clamp(x[m] - psi[m]);
    }
    p
}

/// `g(x_i) = u_t(phi(x_i))` at every cell center.
pub fn transformed_snapshot(u_t: &CellField, field: &DisplacementField) -> Result<CellField> {
    let grid = u_t.grid();
    if field.dim() != grid.dim() {
        return Err(Error::GridMismatch("displacement field dimension differs from grid".into()));
    }
    let n = grid.num_cells();
    let c = u_t.components();
    let mut values = vec![0.0; n * c];
    for i in 0..n {
        let p = forward_eval(field, grid, &grid.cell_center(i));
        for k in 0..c {
            values[k * n + i] = u_t.eval_component(k, &p, EvalMode::Multilinear);
        }
    }
    Ok(CellField::from_parts_unchecked(grid.clone(), c, values))
}

/// Outcome of inverting one transform at the vertices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    /// Largest residual `|phi(x) - x_hat|` over all vertices.
    pub max_residual: f64,
    /// Vertices where Newton failed and the lattice fallback was used.
    pub fallback_vertices: Vec<usize>,
    /// Vertices whose final residual exceeds the tolerance.
    pub flagged_vertices: Vec<usize>,
    /// Minimum of `det(grad phi)` over cell centers.
    pub min_forward_jacobian: f64,
}

fn residual(field: &DisplacementField, grid: &Grid, x: &[f64; 2], target: &[f64; 2]) -> ([f64; 2], f64) {
    let p = forward_eval(field, grid, x);
    let mut r = [0.0; 2];
    for m in 0..grid.dim() {
        r[m] = p[m] - target[m];
    }
    (r, (r[0] * r[0] + r[1] * r[1]).sqrt())
}

/// Damped Newton iteration for `phi(x) = target` from `start`.
fn newton(field: &DisplacementField, grid: &Grid, target: &[f64; 2], start: [f64; 2], tol: f64) -> ([f64; 2], f64, bool) {
    let d = grid.dim();
    let mut x = start;
    let (mut r, mut rn) = residual(field, grid, &x, target);
    for _ in 0..NEWTON_ITERATIONS {
        if rn <= tol {
            return (x, rn, true);
        }
        let (_, jp) = field.eval_with_jacobian(&x);
        // J = I - grad Psi
        let step = if d == 1 {
            let j = 1.0 - jp[0][0];
            if j.abs() < 1e-14 {
                return (x, rn, false);
            }
            [r[0] / j, 0.0]
        } else {
            let (a, b, c, e) = (1.0 - jp[0][0], -jp[0][1], -jp[1][0], 1.0 - jp[1][1]);
            let det = a * e - b * c;
            if det.abs() < 1e-14 {
                return (x, rn, false);
            }
            [(e * r[0] - b * r[1]) / det, (a * r[1] - c * r[0]) / det]
        };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut xn = x;
            for m in 0..d {
                xn[m] = grid.axis(m).clamp(x[m] - alpha * step[m]);
            }
            let (rr, rrn) = residual(field, grid, &xn, target);
            if rrn < rn {
                x = xn;
                r = rr;
                rn = rrn;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, rn, rn <= tol)
}

fn invert_point(field: &DisplacementField, grid: &Grid, target: [f64; 2], tol: f64) -> ([f64; 2], f64, bool) {
    let (x, rn, ok) = newton(field, grid, &target, target, tol);
    if ok {
        return (x, rn, false);
    }
    // multi-start from the best points of a coarse lattice
    let d = grid.dim();
    let per_axis: Vec<Vec<f64>> = (0..d)
        .map(|m| {
            let a = grid.axis(m);
            (0..LATTICE_POINTS).map(|i| a.lo + a.length() * i as f64 / (LATTICE_POINTS - 1) as f64).collect()
        })
        .collect();
    let mut candidates: Vec<(f64, [f64; 2])> = Vec::new();
    let total = LATTICE_POINTS.pow(d as u32);
    for k in 0..total {
        let mut p = [0.0; 2];
        p[0] = per_axis[0][k % LATTICE_POINTS];
        if d == 2 {
            p[1] = per_axis[1][k / LATTICE_POINTS];
        }
        candidates.push((residual(field, grid, &p, &target).1, p));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (x, rn);
    for &(_, p) in candidates.iter().take(4) {
        let (xc, rc, _) = newton(field, grid, &target, p, tol);
        if rc < best.1 {
            best = (xc, rc);
        }
    }
    (best.0, best.1, true)
}

/// Inverse transform sampled at the vertices of `grid`.
pub fn invert_at_vertices(field: &DisplacementField, grid: &Grid) -> Result<(VertexField, InversionReport)> {
    if field.dim() != grid.dim() {
        return Err(Error::GridMismatch("displacement field dimension differs from grid".into()));
    }
    let min_forward_jacobian = field.min_forward_jacobian(grid);
    if min_forward_jacobian <= 0.0 {
        warn!("forward transform is not a diffeomorphism (min det = {min_forward_jacobian:.3e})");
    }
    let tol = 1e-10 * grid.diameter();
    let nv = grid.num_vertices();
    let d = grid.dim();
    let results: Vec<([f64; 2], f64, bool)> = (0..nv)
        .into_par_iter()
        .map(|i| {
            let v = grid.vertex(i);
            if grid.is_boundary_vertex(i) {
                (v, 0.0, false)
            } else {
                invert_point(field, grid, v, tol)
            }
        })
        .collect();
    let mut values = vec![0.0; nv * d];
    let mut report = InversionReport { min_forward_jacobian, ..Default::default() };
    for (i, (x, rn, fallback)) in results.into_iter().enumerate() {
        for m in 0..d {
            values[m * nv + i] = x[m];
        }
        report.max_residual = report.max_residual.max(rn);
        if fallback {
            report.fallback_vertices.push(i);
        }
        if rn > tol {
            report.flagged_vertices.push(i);
        }
    }
    if !report.flagged_vertices.is_empty() {
        warn!("inversion left {} vertices above tolerance", report.flagged_vertices.len());
    }
    Ok((VertexField::from_parts_unchecked(grid.clone(), values), report))
}

/// Minimum over elements of the Jacobian determinant of the (multi)linear
/// interpolant of `phi`. In 2D each element is sampled at its center and
/// its four corners.
pub fn min_jacobian(phi: &VertexField) -> f64 {
    let grid = phi.grid();
    let ax = grid.axis(0);
    if grid.dim() == 1 {
        let v = phi.component(0);
        let h = ax.width();
        return v.windows(2).map(|w| (w[1] - w[0]) / h).fold(f64::INFINITY, f64::min);
    }
    let ay = grid.axis(1);
    let (hx, hy) = (ax.width(), ay.width());
    let sx = ax.cells + 1;
    let (p, q) = (phi.component(0), phi.component(1));
    let mut min = f64::INFINITY;
    for j in 0..ay.cells {
        for i in 0..ax.cells {
            let k = [i + sx * j, i + 1 + sx * j, i + sx * (j + 1), i + 1 + sx * (j + 1)];
            let c = |f: &[f64]| [f[k[0]], f[k[1]], f[k[2]], f[k[3]]];
            let (a, b) = (c(p), c(q));
            for (s, t) in [(0.5, 0.5), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                let dx = |f: [f64; 4]| ((1.0 - t) * (f[1] - f[0]) + t * (f[3] - f[2])) / hx;
                let dy = |f: [f64; 4]| ((1.0 - s) * (f[2] - f[0]) + s * (f[3] - f[1])) / hy;
                let det = dx(a) * dy(b) - dy(a) * dx(b);
                min = min.min(det);
            }
        }
    }
    min
}

/// Transformed snapshots `g` and inverse transforms at the training times.
#[derive(Clone, Debug)]
pub struct TransformedSnapshotSet {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub g: Vec<CellField>,
    pub phi: Vec<VertexField>,
    pub inversion: Vec<InversionReport>,
}

impl TransformedSnapshotSet {
    pub fn build(snaps: &SnapshotSet, transforms: &TransformSet) -> Result<Self> {
        if transforms.fields.len() != snaps.len() {
            return Err(Error::InvalidArgument(format!("{} transforms for {} snapshots", transforms.fields.len(), snaps.len())));
        }
        let mut g = Vec::with_capacity(snaps.len());
        let mut phi = Vec::with_capacity(snaps.len());
        let mut inversion = Vec::with_capacity(snaps.len());
        for (u, f) in snaps.fields.iter().zip(&transforms.fields) {
            g.push(transformed_snapshot(u, f)?);
            let (p, r) = invert_at_vertices(f, &snaps.grid)?;
            phi.push(p);
            inversion.push(r);
        }
        Ok(Self { grid: snaps.grid.clone(), times: snaps.times.clone(), g, phi, inversion })
    }

    fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn g_matrix(&self) -> Result<SnapshotMatrix> {
        let cols: Vec<&[f64]> = self.g.iter().map(|f| f.values()).collect();
        SnapshotMatrix::from_columns(&cols, self.times[0], self.dt())
    }

    /// Flattened (component-major) inverse transforms, one per column.
    pub fn phi_matrix(&self) -> Result<SnapshotMatrix> {
        let cols: Vec<&[f64]> = self.phi.iter().map(|f| f.values()).collect();
        SnapshotMatrix::from_columns(&cols, self.times[0], self.dt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{project_to_cells, Profile};

    fn bump_field(grid: &Grid, a: f64) -> DisplacementField {
        // Psi = L a xi (1 - xi); on (0,1) this is a x (1 - x)
        DisplacementField::with_coeffs(grid, 1, vec![a]).unwrap()
    }

    #[test]
    fn forward_examples() {
        let g = Grid::uniform_1d(0.0, 1.0, 10).unwrap();
        let z = DisplacementField::zero(&g, 3);
        assert_eq!(forward_eval(&z, &g, &[0.3])[0], 0.3);
        let f = bump_field(&g, 0.2);
        assert_eq!(forward_eval(&f, &g, &[0.0])[0], 0.0);
        assert_eq!(forward_eval(&f, &g, &[1.0])[0], 1.0);
        assert!((forward_eval(&f, &g, &[0.5])[0] - (0.5 - 0.2 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn transformed_snapshot_trivial_cases() {
        let g = Grid::uniform_1d(0.0, 1.0, 50).unwrap();
        let u = project_to_cells(&[Profile::indicator(&[0.3], &[0.6])], &g).unwrap();
        let z = DisplacementField::zero(&g, 2);
        let gz = transformed_snapshot(&u, &z).unwrap();
        assert!(gz.values().iter().zip(u.values()).all(|(a, b)| (a - b).abs() < 1e-12));
        let c = CellField::constant(g.clone(), 2, 1.5);
        let f = bump_field(&g, 0.3);
        assert!(transformed_snapshot(&c, &f).unwrap().values().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn inversion_matches_bisection_oracle() {
        let g = Grid::uniform_1d(0.0, 1.0, 4).unwrap();
        let f = bump_field(&g, 0.1);
        let (phi, rep) = invert_at_vertices(&f, &g).unwrap();
        let target = 0.5;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - 0.1 * mid * (1.0 - mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((phi.values()[2] - lo).abs() < 1e-10);
        // closed form: 0.1 x^2 + 0.9 x - 0.5 = 0
        assert!((lo - (-0.9 + 1.01f64.sqrt()) / 0.2).abs() < 1e-12);
        assert!(rep.flagged_vertices.is_empty());
        assert_eq!(phi.values()[0], 0.0);
        assert_eq!(phi.values()[4], 1.0);
    }

    #[test]
    fn identity_and_boundary_in_2d() {
        let g = Grid::new(&[(-0.1, 1.4), (0.0, 1.0)], &[12, 9]).unwrap();
        let z = DisplacementField::zero(&g, 3);
        let (phi, _) = invert_at_vertices(&z, &g).unwrap();
        assert_eq!(phi, VertexField::identity(g.clone()));
        assert!((min_jacobian(&phi) - 1.0).abs() < 1e-12);

        let coeffs: Vec<f64> = (0..18).map(|i| 0.02 * ((i as f64) * 0.77).sin()).collect();
        let f = DisplacementField::with_coeffs(&g, 3, coeffs).unwrap();
        let (phi, rep) = invert_at_vertices(&f, &g).unwrap();
        assert!(rep.flagged_vertices.is_empty());
        let id = VertexField::identity(g.clone());
        for i in 0..g.num_vertices() {
            if g.is_boundary_vertex(i) {
                assert_eq!(phi.values()[i], id.values()[i]);
                assert_eq!(phi.component(1)[i], id.component(1)[i]);
            }
        }
        // round trip through the interpolant at forward-mapped vertices
        let mut worst: f64 = 0.0;
        for i in 0..g.num_vertices() {
            let v = g.vertex(i);
            let back = phi.eval_unchecked(&forward_eval(&f, &g, &v));
            worst = worst.max((back[0] - v[0]).abs().max((back[1] - v[1]).abs()));
        }
        assert!(worst < 2e-3, "{worst}");
        assert!(min_jacobian(&phi) > 0.0);
    }

    #[test]
    fn round_trip_refines_with_the_grid() {
        let mut prev = f64::INFINITY;
        for n in [20, 80, 320] {
            let g = Grid::uniform_1d(0.0, 1.0, n).unwrap();
            let f = DisplacementField::with_coeffs(&g, 2, vec![0.15, 0.1]).unwrap();
            let (phi, _) = invert_at_vertices(&f, &g).unwrap();
            let worst = (0..=n)
                .map(|i| {
                    let v = g.vertex(i)[0];
                    (phi.eval_unchecked(&forward_eval(&f, &g, &[v]))[0] - v).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst < prev);
            prev = worst;
        }
        assert!(prev <= 1e-5);
    }

    #[test]
    fn jacobian_of_linear_maps() {
        let g = Grid::uniform_1d(0.0, 1.0, 5).unwrap();
        let v: Vec<f64> = (0..=5).map(|i| 2.0 * g.vertex(i)[0]).collect();
        let phi = VertexField::new(g, v).unwrap();
        assert!((min_jacobian(&phi) - 2.0).abs() < 1e-14);

        let g2 = Grid::uniform_2d((0.0, 1.0), 4).unwrap();
        let id = VertexField::identity(g2.clone());
        let mut vals = id.values().to_vec();
        let nv = g2.num_vertices();
        for i in 0..nv {
            let (x, y) = (id.values()[i], id.values()[nv + i]);
            vals[i] = 2.0 * x + 0.5 * y;
            vals[nv + i] = 3.0 * y;
        }
        let phi = VertexField::new(g2, vals).unwrap();
        assert!((min_jacobian(&phi) - 6.0).abs() < 1e-12);
    }
}
